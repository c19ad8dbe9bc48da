use serde::{Deserialize, Serialize};

use super::{enforce_connectivity, SegmentMap};
use crate::color::rgb_to_lab;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuickShiftParams {
    /// Weight of colour against position, in `(0, 1]`.
    pub ratio: f64,
    /// Gaussian density bandwidth.
    pub kernel_size: f64,
    /// Longest allowed link in feature space.
    pub max_dist: f64,
    /// Kept for interface symmetry; the algorithm is deterministic.
    pub seed: u64,
}

impl Default for QuickShiftParams {
    fn default() -> Self {
        QuickShiftParams {
            ratio: 0.3,
            kernel_size: 3.0,
            max_dist: 6.0,
            seed: 0,
        }
    }
}

/// Parent links and densities, before connectivity splitting.
pub(crate) struct Forest {
    #[cfg_attr(not(test), allow(dead_code))]
    pub density: Vec<f64>,
    pub parent: Vec<usize>,
}

fn features(image: &Tensor, ratio: f64) -> Result<Vec<[f64; 5]>> {
    let (h, w) = (image.shape()[1], image.shape()[2]);
    let n = h * w;
    let lab = rgb_to_lab(image)?;
    Ok((0..n)
        .map(|i| {
            let c = |k: usize| ratio * lab.data()[k * n + i] as f64;
            [c(0), c(1), c(2), (i / w) as f64, (i % w) as f64]
        })
        .collect())
}

fn dist2(a: &[f64; 5], b: &[f64; 5]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// `j` ranks above `i` when its density is greater, or equal with a lower
/// index, so every density plateau has a single top.
pub(crate) fn ranks_above(density: &[f64], j: usize, i: usize) -> bool {
    density[j] > density[i] || (density[j] == density[i] && j < i)
}

pub(crate) fn forest(image: &Tensor, p: &QuickShiftParams) -> Result<Forest> {
    if image.rank() != 3 || image.shape()[0] != 3 {
        return Err(Error::invalid(format!("quickshift_2d expects [3, H, W], got {:?}", image.shape())));
    }
    if !(p.ratio > 0.0 && p.ratio <= 1.0) {
        return Err(Error::invalid("ratio must be in (0, 1]"));
    }
    if !(p.kernel_size > 0.0 && p.kernel_size.is_finite()) {
        return Err(Error::invalid("kernel_size must be positive"));
    }
    if !(p.max_dist >= 0.0) {
        return Err(Error::invalid("max_dist must be non-negative"));
    }
    let (h, w) = (image.shape()[1], image.shape()[2]);
    let n = h * w;
    let f = features(image, p.ratio)?;
    let radius = (3.0 * p.kernel_size).floor() as usize;
    if radius < 1 {
        return Ok(Forest {
            density: vec![1.0; n],
            parent: (0..n).collect(),
        });
    }

    let inv = 1.0 / (2.0 * p.kernel_size * p.kernel_size);
    let window = |i: usize, r: usize| {
        let (y, x) = (i / w, i % w);
        let rows = y.saturating_sub(r)..(y + r + 1).min(h);
        let cols = x.saturating_sub(r)..(x + r + 1).min(w);
        rows.flat_map(move |yy| cols.clone().map(move |xx| yy * w + xx))
    };
    let density: Vec<f64> = (0..n)
        .map(|i| window(i, radius).map(|j| (-dist2(&f[i], &f[j]) * inv).exp()).sum())
        .collect();

    let link_radius = (p.max_dist.floor() as usize).min(h.max(w));
    let max2 = p.max_dist * p.max_dist;
    let parent = (0..n)
        .map(|i| {
            let mut best = (f64::INFINITY, i);
            for j in window(i, link_radius) {
                if !ranks_above(&density, j, i) {
                    continue;
                }
                let d = dist2(&f[i], &f[j]);
                if d <= max2 && d < best.0 {
                    best = (d, j);
                }
            }
            best.1
        })
        .collect();
    Ok(Forest { density, parent })
}

/// QuickShift superpixels of a `[3, H, W]` image in `[0, 1]`.
pub fn quickshift_2d(image: &Tensor, p: &QuickShiftParams) -> Result<SegmentMap> {
    let Forest { mut parent, .. } = forest(image, p)?;
    let n = parent.len();
    for i in 0..n {
        let mut root = parent[i];
        while parent[root] != root {
            root = parent[root];
        }
        let mut j = i;
        while parent[j] != root {
            let next = parent[j];
            parent[j] = root;
            j = next;
        }
    }
    let roots: Vec<u32> = parent.iter().map(|&r| r as u32).collect();
    Ok(enforce_connectivity(image.spatial_shape(), &roots, 1))
}
