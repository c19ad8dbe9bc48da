//! On-disk datasets written by `datagen`.
//!
//! ```text
//! DIR/manifest.txt          kind, seed and per-split counts
//! DIR/<split>/labels.csv    index,input,mask,label[,mask_b,label_b]
//! DIR/<split>/000000.stf    input tensor
//! DIR/<split>/000000.mask.stf
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use segrank::datagen::{gen_moving_shapes_3d, gen_shapes_2d, gen_two_shape_2d, Mask, Sample};
use segrank::ppm::write_ppm;
use segrank::stf::{read_tensor, write_atomic, write_tensor};
use segrank::{Prng, Tensor};
use serde::{Deserialize, Serialize};

use crate::args::{DataKind, SplitArg};
use crate::error::{CliError, Result};
use crate::output::{create_dir, write_table};

pub const MANIFEST: &str = "manifest.txt";
const SPLITS: [SplitArg; 2] = [SplitArg::Train, SplitArg::Val];

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Record {
    index: usize,
    input: String,
    mask: String,
    label: usize,
    mask_b: Option<String>,
    label_b: Option<usize>,
}

/// One loaded sample; `second` is set for two-shape data.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub sample: Sample,
    pub second: Option<(usize, Mask)>,
}

pub struct Dataset {
    pub kind: DataKind,
    pub dir: PathBuf,
}

fn split_seed(seed: u64, split: SplitArg) -> u64 {
    Prng::derive(seed, split as u64).next_u64()
}

fn generate(kind: DataKind, n: usize, seed: u64) -> Vec<Loaded> {
    let single = |v: Vec<Sample>| v.into_iter().map(|sample| Loaded { sample, second: None }).collect();
    match kind {
        DataKind::Shapes2d => single(gen_shapes_2d(n, seed)),
        DataKind::MovingShapes3d => single(gen_moving_shapes_3d(n, seed)),
        DataKind::TwoShape2d => gen_two_shape_2d(n, seed)
            .into_iter()
            .map(|s| {
                let [ma, mb] = s.masks;
                Loaded {
                    sample: Sample {
                        input: s.input,
                        label: s.labels[0],
                        truth_mask: ma,
                    },
                    second: Some((s.labels[1], mb)),
                }
            })
            .collect(),
    }
}

pub fn write(dir: &Path, kind: DataKind, n_train: usize, n_val: usize, seed: u64, ppm: bool, json: bool) -> Result<()> {
    create_dir(dir)?;
    let mut manifest = format!("kind = {}\nseed = {seed}\n", kind.name());
    for (split, n) in SPLITS.into_iter().zip([n_train, n_val]) {
        let sub = dir.join(split.name());
        create_dir(&sub)?;
        let mut records = Vec::with_capacity(n);
        for (i, d) in generate(kind, n, split_seed(seed, split)).into_iter().enumerate() {
            let input = format!("{i:06}.stf");
            let mask = format!("{i:06}.mask.stf");
            write_tensor(sub.join(&input), &d.sample.input)?;
            write_tensor(sub.join(&mask), &d.sample.truth_mask.to_tensor())?;
            if ppm && d.sample.input.rank() == 3 {
                write_ppm(sub.join(format!("{i:06}.ppm")), &d.sample.input)?;
            }
            let (mask_b, label_b) = match &d.second {
                Some((l, m)) => {
                    let name = format!("{i:06}.mask_b.stf");
                    write_tensor(sub.join(&name), &m.to_tensor())?;
                    (Some(name), Some(*l))
                }
                None => (None, None),
            };
            records.push(Record {
                index: i,
                input,
                mask,
                label: d.sample.label,
                mask_b,
                label_b,
            });
        }
        write_table(&sub.join("labels.csv"), &records, json)?;
        manifest.push_str(&format!("{} = {n}\n", split.name()));
    }
    // Last, so a half-written dataset is never picked up.
    write_atomic(&dir.join(MANIFEST), manifest.as_bytes())?;
    Ok(())
}

impl Dataset {
    pub fn open(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|source| CliError::Io { path: path.clone(), source })?;
        let entries: BTreeMap<&str, &str> = text
            .lines()
            .filter_map(|l| l.split_once('='))
            .map(|(k, v)| (k.trim(), v.trim()))
            .collect();
        let kind = match entries.get("kind").copied() {
            Some("shapes-2d") => DataKind::Shapes2d,
            Some("moving-shapes-3d") => DataKind::MovingShapes3d,
            Some("two-shape-2d") => DataKind::TwoShape2d,
            other => return Err(CliError::data(&path, format!("unknown dataset kind {other:?}"))),
        };
        Ok(Dataset {
            kind,
            dir: dir.to_path_buf(),
        })
    }

    /// Loads a split, keeping at most `limit` samples.
    pub fn load(&self, split: SplitArg, limit: Option<usize>) -> Result<Vec<Loaded>> {
        let sub = self.dir.join(split.name());
        let labels = sub.join("labels.csv");
        let mut reader = csv::Reader::from_path(&labels)?;
        let mut out = Vec::new();
        for rec in reader.deserialize::<Record>() {
            if limit.is_some_and(|l| out.len() >= l) {
                break;
            }
            let rec = rec?;
            let mask = |name: &str| -> Result<Mask> { Ok(Mask::from_tensor(&read_tensor(sub.join(name))?)) };
            let input: Tensor = read_tensor(sub.join(&rec.input))?;
            let truth_mask = mask(&rec.mask)?;
            if truth_mask.shape() != input.spatial_shape() {
                return Err(CliError::data(&labels, format!("mask shape differs from input at index {}", rec.index)));
            }
            let second = match (rec.label_b, rec.mask_b) {
                (Some(l), Some(m)) => Some((l, mask(&m)?)),
                _ => None,
            };
            out.push(Loaded {
                sample: Sample {
                    input,
                    label: rec.label,
                    truth_mask,
                },
                second,
            });
        }
        Ok(out)
    }
}
