//! Checkpoints: a directory of STF1 tensors plus a `manifest.txt`.
//!
//! ```text
//! kind = net2d
//! num_classes = 4
//! conv1.weight = conv1.weight.stf
//! conv1.bias = conv1.bias.stf
//! ...
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::{NetworkSpec, Network};
use crate::error::{Error, Result};
use crate::stf::{read_tensor, write_atomic, write_tensor};

pub const MANIFEST: &str = "manifest.txt";

pub fn save_checkpoint(net: &Network, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let spec = net.spec();
    let mut manifest = format!("kind = {}\nnum_classes = {}\n", spec.kind, spec.num_classes);
    for (name, w, b) in net.parameters() {
        for (suffix, t) in [("weight", w), ("bias", b)] {
            let file = format!("{name}.{suffix}.stf");
            write_tensor(dir.join(&file), t)?;
            manifest.push_str(&format!("{name}.{suffix} = {file}\n"));
        }
    }
    // Manifest last, so an interrupted save is never mistaken for a
    // complete checkpoint.
    write_atomic(&dir.join(MANIFEST), manifest.as_bytes())
}

pub(crate) fn parse_key_values(text: &str) -> BTreeMap<String, String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect()
}

pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<Network> {
    let dir = dir.as_ref();
    let path = dir.join(MANIFEST);
    let entries = parse_key_values(&fs::read_to_string(&path)?);
    let bad = |detail: String| Error::Format {
        what: "checkpoint manifest",
        path: path.clone(),
        detail,
    };
    let kind = entries
        .get("kind")
        .ok_or_else(|| bad("missing kind".into()))?
        .parse()?;
    let num_classes = entries
        .get("num_classes")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| bad("missing or bad num_classes".into()))?;
    let mut net = Network::init_weights(NetworkSpec { kind, num_classes }, 0)?;
    for p in &mut net.params {
        for (suffix, slot) in [("weight", &mut p.weight), ("bias", &mut p.bias)] {
            let key = format!("{}.{suffix}", p.name);
            let file = entries.get(&key).ok_or_else(|| bad(format!("missing {key}")))?;
            let t = read_tensor(dir.join(file))?;
            if t.shape() != slot.shape() {
                return Err(bad(format!(
                    "{key} has shape {:?}, expected {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t;
        }
    }
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::micronet::NetKind;

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        for kind in [NetKind::Net2D, NetKind::Net3D] {
            let net = Network::init_weights(NetworkSpec { kind, num_classes: 5 }, 42).unwrap();
            let sub = dir.path().join(kind.to_string());
            save_checkpoint(&net, &sub).unwrap();
            assert_eq!(load_checkpoint(&sub).unwrap(), net);
        }
    }

    #[test]
    fn missing_entry_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let net = Network::init_weights(NetworkSpec { kind: NetKind::Net2D, num_classes: 2 }, 1).unwrap();
        save_checkpoint(&net, dir.path()).unwrap();
        let m = fs::read_to_string(dir.path().join(MANIFEST)).unwrap();
        let m: String = m.lines().filter(|l| !l.starts_with("fc.bias")).map(|l| format!("{l}\n")).collect();
        fs::write(dir.path().join(MANIFEST), m).unwrap();
        assert!(load_checkpoint(dir.path()).is_err());
    }
}
