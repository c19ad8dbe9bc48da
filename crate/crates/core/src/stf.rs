//! `STF1` portable tensor files.
//!
//! Layout: magic `STF1`, one rank byte (1 to 5), four reserved zero bytes,
//! `rank` little-endian u32 dimensions, then the f32 payload in little
//! endian. No padding and no checksum.

use std::fs;
use std::io;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Tensor, MAX_RANK};

pub const MAGIC: [u8; 4] = *b"STF1";
const HEADER_LEN: usize = 9;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum StfError {
    #[error("bad magic {0:02x?}, expected STF1")]
    BadMagic([u8; 4]),
    #[error("unsupported rank {0} (must be 1..=5)")]
    BadRank(u8),
    #[error("reserved header bytes are not zero")]
    Reserved,
    #[error("zero-sized dimension in {0:?}")]
    ZeroDim(Vec<usize>),
    #[error("element count of {0:?} overflows")]
    SizeOverflow(Vec<usize>),
    #[error("truncated file: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
    #[error("non-finite value at element {0}")]
    NonFinite(usize),
}

pub fn encode(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * t.rank() + 4 * t.len());
    out.extend_from_slice(&MAGIC);
    out.push(t.rank() as u8);
    out.extend_from_slice(&[0; 4]);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<Tensor, StfError> {
    let need = |needed: usize| {
        if bytes.len() < needed {
            Err(StfError::Truncated {
                needed,
                available: bytes.len(),
            })
        } else {
            Ok(())
        }
    };
    need(4)?;
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(StfError::BadMagic(magic));
    }
    need(HEADER_LEN)?;
    let rank = bytes[4];
    if rank == 0 || rank as usize > MAX_RANK {
        return Err(StfError::BadRank(rank));
    }
    if bytes[5..9] != [0; 4] {
        return Err(StfError::Reserved);
    }
    let rank = rank as usize;
    let dims_end = HEADER_LEN + 4 * rank;
    need(dims_end)?;
    let shape: Vec<usize> = bytes[HEADER_LEN..dims_end]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    if shape.contains(&0) {
        return Err(StfError::ZeroDim(shape));
    }
    let count = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| StfError::SizeOverflow(shape.clone()))?;
    let payload = count
        .checked_mul(4)
        .and_then(|p| p.checked_add(dims_end))
        .ok_or_else(|| StfError::SizeOverflow(shape.clone()))?;
    need(payload)?;
    if bytes.len() > payload {
        return Err(StfError::TrailingBytes(bytes.len() - payload));
    }
    let data: Vec<f32> = bytes[dims_end..payload]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(StfError::NonFinite(i));
    }
    Ok(Tensor::from_parts(shape, data))
}

pub fn write_tensor(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    write_atomic(path.as_ref(), &encode(t))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let bytes = fs::read(path)?;
    Ok(decode(&bytes)?)
}

/// Writes through a sibling temporary file and renames on success, so a
/// failed write never leaves a partial file at `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let res = fs::write(&tmp, bytes).and_then(|_| fs::rename(&tmp, path));
    if res.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    res.map_err(|e: io::Error| e.into())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let t = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = encode(&t);
        assert_eq!(&b[..4], &[0x53, 0x54, 0x46, 0x31]);
        assert_eq!(b[4], 2);
        assert_eq!(&b[5..9], &[0; 4]);
        assert_eq!(&b[9..13], &2u32.to_le_bytes());
        assert_eq!(&b[13..17], &3u32.to_le_bytes());
        assert_eq!(&b[17..21], &1.0f32.to_le_bytes());
        assert_eq!(b.len(), 9 + 8 + 24);
    }

    #[test]
    fn bad_magic() {
        let mut b = encode(&Tensor::zeros(vec![1]).unwrap());
        b[0] = b'X';
        assert!(matches!(decode(&b), Err(StfError::BadMagic(_))));
    }

    #[test]
    fn bad_rank() {
        let mut b = encode(&Tensor::zeros(vec![1]).unwrap());
        b[4] = 6;
        assert_eq!(decode(&b), Err(StfError::BadRank(6)));
        b[4] = 0;
        assert_eq!(decode(&b), Err(StfError::BadRank(0)));
    }

    #[test]
    fn truncated_payload() {
        let mut b = encode(&Tensor::zeros(vec![4]).unwrap());
        // Claim 5 elements with only 4 present.
        b[9..13].copy_from_slice(&5u32.to_le_bytes());
        assert!(matches!(decode(&b), Err(StfError::Truncated { .. })));
    }

    #[test]
    fn size_overflow() {
        let mut b = Vec::from(MAGIC);
        b.push(5);
        b.extend_from_slice(&[0; 4]);
        for _ in 0..5 {
            b.extend_from_slice(&u32::MAX.to_le_bytes());
        }
        assert!(matches!(decode(&b), Err(StfError::SizeOverflow(_))));
    }

    #[test]
    fn reserved_and_trailing() {
        let mut b = encode(&Tensor::zeros(vec![1]).unwrap());
        b.push(0);
        assert_eq!(decode(&b), Err(StfError::TrailingBytes(1)));
        b.pop();
        b[6] = 1;
        assert_eq!(decode(&b), Err(StfError::Reserved));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.stf");
        let t = Tensor::from_fn(vec![2, 1, 3, 2, 2], |i| i as f32 - 7.5).unwrap();
        write_tensor(&path, &t).unwrap();
        assert_eq!(read_tensor(&path).unwrap(), t);
    }

    proptest! {
        #[test]
        fn round_trip_is_bitwise(
            shape in proptest::collection::vec(1usize..5, 1..=5),
            seed in any::<u64>(),
        ) {
            let mut rng = crate::Prng::new(seed);
            let t = Tensor::from_fn(shape, |_| {
                f32::from_bits(rng.next_u64() as u32).clamp(-f32::MAX, f32::MAX)
            });
            // NaN bit patterns clamp to NaN; skip those draws.
            if let Ok(t) = t {
                let back = decode(&encode(&t)).unwrap();
                prop_assert_eq!(back.shape(), t.shape());
                prop_assert!(back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
            }
        }
    }
}
