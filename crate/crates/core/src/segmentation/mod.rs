//! Superpixels (2D) and supervoxels (3D).
//!
//! [`slic_2d`], [`slic_3d`] and [`quickshift_2d`] all return a
//! [`SegmentMap`]: a dense label raster whose labels are `0..n_segments`,
//! numbered in scan order of first appearance, with every segment a single
//! 4-connected (2D) or 6-connected (3D) component.

mod connectivity;
mod quickshift;
mod slic;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stf::{read_tensor, write_atomic, write_tensor};
use crate::tensor::Tensor;

pub use connectivity::{enforce_connectivity, relabel_compact};
pub use quickshift::{quickshift_2d, QuickShiftParams};
pub use slic::{slic_2d, slic_3d, SlicParams};

/// Label raster over an `H x W` image or `T x H x W` volume.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentMap {
    shape: Vec<usize>,
    labels: Vec<u32>,
    n_segments: usize,
}

impl SegmentMap {
    /// Validates that labels cover exactly `0..n_segments`.
    pub fn new(shape: Vec<usize>, labels: Vec<u32>) -> Result<Self> {
        if !(2..=3).contains(&shape.len()) || shape.contains(&0) {
            return Err(Error::InvalidShape(shape));
        }
        if shape.iter().product::<usize>() != labels.len() {
            return Err(Error::invalid("label count does not match shape"));
        }
        let n_segments = labels.iter().max().map_or(0, |&m| m as usize + 1);
        let mut seen = vec![false; n_segments];
        for &l in &labels {
            seen[l as usize] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::invalid("segment labels are not dense"));
        }
        Ok(SegmentMap {
            shape,
            labels,
            n_segments,
        })
    }

    pub(crate) fn from_parts(shape: Vec<usize>, labels: Vec<u32>, n_segments: usize) -> Self {
        debug_assert!(labels.iter().all(|&l| (l as usize) < n_segments));
        SegmentMap {
            shape,
            labels,
            n_segments,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn n_segments(&self) -> usize {
        self.n_segments
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Pixel count of each segment.
    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_segments];
        for &l in &self.labels {
            sizes[l as usize] += 1;
        }
        sizes
    }

    /// Labels stored as f32 (exact below 2^24 segments).
    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_parts(self.shape.clone(), self.labels.iter().map(|&l| l as f32).collect())
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let labels = t
            .data()
            .iter()
            .map(|&v| {
                if v >= 0.0 && v.fract() == 0.0 && v < (1u32 << 24) as f32 {
                    Ok(v as u32)
                } else {
                    Err(Error::invalid(format!("{v} is not a segment label")))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        SegmentMap::new(t.shape().to_vec(), labels)
    }

    /// Writes the STF1 label raster plus a `<path>.nseg` sidecar holding
    /// the segment count.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        write_tensor(path, &self.to_tensor())?;
        write_atomic(&sidecar(path), format!("{}\n", self.n_segments).as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let map = SegmentMap::from_tensor(&read_tensor(path)?)?;
        let side = sidecar(path);
        if let Ok(text) = std::fs::read_to_string(&side) {
            let n: usize = text.trim().parse().map_err(|_| Error::Format {
                what: "segment sidecar",
                path: side.clone(),
                detail: format!("{:?} is not a count", text.trim()),
            })?;
            if n != map.n_segments {
                return Err(Error::Format {
                    what: "segment sidecar",
                    path: side,
                    detail: format!("says {n} segments, raster has {}", map.n_segments),
                });
            }
        }
        Ok(map)
    }

    /// True when the spatial shape equals that of a channel-first tensor.
    pub fn matches(&self, t: &Tensor) -> bool {
        t.shape().get(1..) == Some(self.shape.as_slice()) || t.shape() == self.shape.as_slice()
    }
}

fn sidecar(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".nseg");
    s.into()
}

/// Segmentation algorithm and its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Segmenter {
    Slic(SlicParams),
    QuickShift(QuickShiftParams),
}

impl Segmenter {
    /// Segments a `[3, H, W]` image or (SLIC only) a `[3, T, H, W]` volume.
    pub fn segment(&self, input: &Tensor) -> Result<SegmentMap> {
        match (self, input.rank()) {
            (Segmenter::Slic(p), 3) => slic_2d(input, p),
            (Segmenter::Slic(p), 4) => slic_3d(input, p),
            (Segmenter::QuickShift(p), 3) => quickshift_2d(input, p),
            (Segmenter::QuickShift(_), 4) => Err(Error::invalid("QuickShift supports 2D images only; use SLIC for volumes")),
            _ => Err(Error::invalid(format!("cannot segment tensor of shape {:?}", input.shape()))),
        }
    }
}

/// Unit steps to the 4- (2D) or 6- (3D) neighbours of a flat index.
pub(crate) struct Grid {
    pub d: usize,
    pub h: usize,
    pub w: usize,
}

impl Grid {
    pub fn of(shape: &[usize]) -> Self {
        match *shape {
            [h, w] => Grid { d: 1, h, w },
            [d, h, w] => Grid { d, h, w },
            _ => panic!("grid needs 2 or 3 dims"),
        }
    }

    pub fn len(&self) -> usize {
        self.d * self.h * self.w
    }

    pub fn coords(&self, i: usize) -> (usize, usize, usize) {
        (i / (self.h * self.w), (i / self.w) % self.h, i % self.w)
    }

    /// Calls `f` for each face neighbour of `i`.
    pub fn for_neighbors(&self, i: usize, mut f: impl FnMut(usize)) {
        let (z, y, x) = self.coords(i);
        let plane = self.h * self.w;
        if x > 0 {
            f(i - 1);
        }
        if x + 1 < self.w {
            f(i + 1);
        }
        if y > 0 {
            f(i - self.w);
        }
        if y + 1 < self.h {
            f(i + self.w);
        }
        if z > 0 {
            f(i - plane);
        }
        if z + 1 < self.d {
            f(i + plane);
        }
    }
}

/// Checks that every segment is one connected component.
pub fn is_connected(map: &SegmentMap) -> bool {
    let grid = Grid::of(map.shape());
    let mut seen = vec![false; map.len()];
    let mut found = vec![false; map.n_segments()];
    let mut stack = Vec::new();
    for start in 0..map.len() {
        if seen[start] {
            continue;
        }
        let label = map.labels[start];
        if found[label as usize] {
            return false;
        }
        found[label as usize] = true;
        seen[start] = true;
        stack.push(start);
        while let Some(i) = stack.pop() {
            grid.for_neighbors(i, |j| {
                if !seen[j] && map.labels[j] == label {
                    seen[j] = true;
                    stack.push(j);
                }
            });
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_sparse_labels() {
        assert!(SegmentMap::new(vec![1, 3], vec![0, 2, 2]).is_err());
        assert!(SegmentMap::new(vec![1, 3], vec![0, 1]).is_err());
        let m = SegmentMap::new(vec![1, 3], vec![1, 0, 1]).unwrap();
        assert_eq!(m.n_segments(), 2);
        assert_eq!(m.sizes(), vec![1, 2]);
    }

    #[test]
    fn save_load_with_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("seg.stf");
        let m = SegmentMap::new(vec![2, 2, 2], vec![0, 0, 1, 1, 2, 2, 2, 0]).unwrap();
        m.save(&path).unwrap();
        assert_eq!(std::fs::read_to_string(dir.path().join("seg.stf.nseg")).unwrap(), "3\n");
        assert_eq!(SegmentMap::load(&path).unwrap(), m);
    }

    #[test]
    fn connectivity_check() {
        let ok = SegmentMap::new(vec![2, 2], vec![0, 0, 1, 1]).unwrap();
        assert!(is_connected(&ok));
        let split = SegmentMap::new(vec![2, 2], vec![0, 1, 1, 0]).unwrap();
        assert!(!is_connected(&split));
    }
}
