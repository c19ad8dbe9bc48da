use serde::{Deserialize, Serialize};

use super::{enforce_connectivity, SegmentMap};
use crate::color::rgb_to_lab;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlicParams {
    /// Requested segment count.
    pub k: usize,
    /// Compactness: weight of spatial against colour distance.
    pub m: f64,
    pub max_iters: usize,
    /// Components smaller than this fraction of the mean segment size are
    /// merged into a neighbour.
    pub min_size_factor: f64,
    /// Kept for interface symmetry; SLIC initialisation is fully
    /// deterministic so the value has no effect.
    pub seed: u64,
}

impl Default for SlicParams {
    fn default() -> Self {
        SlicParams {
            k: 50,
            m: 20.0,
            max_iters: 10,
            min_size_factor: 0.25,
            seed: 0,
        }
    }
}

impl SlicParams {
    pub fn with_k(k: usize) -> Self {
        SlicParams {
            k,
            ..SlicParams::default()
        }
    }
}

/// Lab colour and position (z, y, x) of a cluster centre.
pub(crate) type Center = [f64; 6];

pub(crate) struct KMeans {
    pub labels: Vec<u32>,
    /// Centres used for the final assignment.
    #[cfg_attr(not(test), allow(dead_code))]
    pub centers: Vec<Center>,
    /// Grid step `S`.
    #[cfg_attr(not(test), allow(dead_code))]
    pub step: f64,
}

/// SLIC superpixels of a `[3, H, W]` image in `[0, 1]`.
pub fn slic_2d(image: &Tensor, p: &SlicParams) -> Result<SegmentMap> {
    if image.rank() != 3 || image.shape()[0] != 3 {
        return Err(Error::invalid(format!("slic_2d expects [3, H, W], got {:?}", image.shape())));
    }
    slic(image, p)
}

/// SLIC supervoxels of a `[3, T, H, W]` clip in `[0, 1]`.
pub fn slic_3d(volume: &Tensor, p: &SlicParams) -> Result<SegmentMap> {
    if volume.rank() != 4 || volume.shape()[0] != 3 {
        return Err(Error::invalid(format!("slic_3d expects [3, T, H, W], got {:?}", volume.shape())));
    }
    slic(volume, p)
}

fn slic(input: &Tensor, p: &SlicParams) -> Result<SegmentMap> {
    let spatial = input.spatial_shape().to_vec();
    let n: usize = spatial.iter().product();
    let km = kmeans(input, p)?;
    let min_size = (p.min_size_factor * n as f64 / p.k as f64).floor().max(1.0) as usize;
    Ok(enforce_connectivity(&spatial, &km.labels, min_size))
}

/// Per-axis centre counts closest to the ideal `extent / step`, with
/// product exactly `k` when some factorisation fits the extents and as
/// close to `k` as possible otherwise.
pub(crate) fn grid_counts(extents: [usize; 3], k: usize, step: f64) -> [usize; 3] {
    let mut best = ([1, 1, 1], (usize::MAX, f64::INFINITY));
    for nd in 1..=extents[0].min(k) {
        for nh in 1..=extents[1].min(k / nd) {
            let nw = (k / (nd * nh)).clamp(1, extents[2]);
            for nw in [nw, (nw + 1).min(extents[2])] {
                let miss = (nd * nh * nw).abs_diff(k);
                let cost: f64 = [nd, nh, nw]
                    .iter()
                    .zip(extents)
                    .map(|(&c, e)| (c as f64 - e as f64 / step).powi(2))
                    .sum();
                if (miss, cost) < best.1 {
                    best = ([nd, nh, nw], (miss, cost));
                }
            }
        }
    }
    best.0
}

pub(crate) fn kmeans(input: &Tensor, p: &SlicParams) -> Result<KMeans> {
    let spatial = input.spatial_shape();
    let dims = match *spatial {
        [h, w] => [1, h, w],
        [d, h, w] => [d, h, w],
        _ => return Err(Error::InvalidShape(input.shape().to_vec())),
    };
    let [d, h, w] = dims;
    let n = d * h * w;
    if p.k < 1 || p.k > n {
        return Err(Error::invalid(format!("k = {} must be in 1..={n}", p.k)));
    }
    if !(p.m > 0.0 && p.m.is_finite()) {
        return Err(Error::invalid("compactness must be positive"));
    }
    if !(p.min_size_factor >= 0.0) {
        return Err(Error::invalid("min_size_factor must be non-negative"));
    }

    let lab = rgb_to_lab(input)?;
    let lab: Vec<[f64; 3]> = (0..n)
        .map(|i| [0, 1, 2].map(|c| lab.data()[c * n + i] as f64))
        .collect();
    let at = |z: usize, y: usize, x: usize| (z * h + y) * w + x;

    let step = if spatial.len() == 2 {
        (n as f64 / p.k as f64).sqrt()
    } else {
        (n as f64 / p.k as f64).cbrt()
    };
    let counts = grid_counts(dims, p.k, step);
    let axis_step: [f64; 3] = [0, 1, 2].map(|a| dims[a] as f64 / counts[a] as f64);

    let grad = |z: usize, y: usize, x: usize| -> f64 {
        let dist2 = |a: usize, b: usize| -> f64 { (0..3).map(|c| (lab[a][c] - lab[b][c]).powi(2)).sum() };
        let horiz = dist2(at(z, y, x.saturating_sub(1)), at(z, y, (x + 1).min(w - 1)));
        let vert = dist2(at(z, y.saturating_sub(1), x), at(z, (y + 1).min(h - 1), x));
        horiz + vert
    };

    let mut centers: Vec<Center> = Vec::with_capacity(p.k);
    for iz in 0..counts[0] {
        for iy in 0..counts[1] {
            for ix in 0..counts[2] {
                let pos = [iz, iy, ix].map(|v| v as f64);
                let pos: [f64; 3] = [0, 1, 2].map(|a| (pos[a] + 0.5) * axis_step[a] - 0.5);
                let mut cell = pos.map(|v| v.round().max(0.0) as usize);
                let mut exact = true;
                let mut best = grad(cell[0], cell[1], cell[2]);
                let (cz, cy, cx) = (cell[0], cell[1], cell[2]);
                for y in cy.saturating_sub(1)..=(cy + 1).min(h - 1) {
                    for x in cx.saturating_sub(1)..=(cx + 1).min(w - 1) {
                        let g = grad(cz, y, x);
                        if g < best {
                            best = g;
                            cell = [cz, y, x];
                            exact = false;
                        }
                    }
                }
                let pos = if exact { pos } else { cell.map(|v| v as f64) };
                let c = lab[at(cell[0], cell[1], cell[2])];
                centers.push([c[0], c[1], c[2], pos[0], pos[1], pos[2]]);
            }
        }
    }

    let spatial_weight = (p.m / step).powi(2);
    let half: [f64; 3] = axis_step.map(|s| s.max(step));
    let mut labels = vec![u32::MAX; n];
    let mut dist = vec![f64::INFINITY; n];
    let mut used = centers.clone();
    for iter in 0..p.max_iters.max(1) {
        used.clone_from(&centers);
        labels.fill(u32::MAX);
        dist.fill(f64::INFINITY);
        for (id, c) in centers.iter().enumerate() {
            let lo = |a: usize| (c[3 + a] - half[a]).ceil().max(0.0) as usize;
            let hi = |a: usize| ((c[3 + a] + half[a]).floor() as usize).min(dims[a] - 1);
            for z in lo(0)..=hi(0) {
                for y in lo(1)..=hi(1) {
                    for x in lo(2)..=hi(2) {
                        let i = at(z, y, x);
                        let l = lab[i];
                        let dc = (l[0] - c[0]).powi(2) + (l[1] - c[1]).powi(2) + (l[2] - c[2]).powi(2);
                        let ds = (z as f64 - c[3]).powi(2) + (y as f64 - c[4]).powi(2) + (x as f64 - c[5]).powi(2);
                        let dd = dc + spatial_weight * ds;
                        if dd < dist[i] {
                            dist[i] = dd;
                            labels[i] = id as u32;
                        }
                    }
                }
            }
        }
        for (i, label) in labels.iter_mut().enumerate().filter(|(_, l)| **l == u32::MAX) {
            let (z, y, x) = (i / (h * w), (i / w) % h, i % w);
            let mut best = (f64::INFINITY, 0);
            for (id, c) in centers.iter().enumerate() {
                let ds = (z as f64 - c[3]).powi(2) + (y as f64 - c[4]).powi(2) + (x as f64 - c[5]).powi(2);
                if ds < best.0 {
                    best = (ds, id);
                }
            }
            *label = best.1 as u32;
        }

        if iter + 1 == p.max_iters.max(1) {
            break;
        }
        let mut sums = vec![[0.0f64; 7]; centers.len()];
        for (i, &label) in labels.iter().enumerate() {
            let s = &mut sums[label as usize];
            let (z, y, x) = (i / (h * w), (i / w) % h, i % w);
            let v = [lab[i][0], lab[i][1], lab[i][2], z as f64, y as f64, x as f64];
            for (acc, v) in s.iter_mut().zip(v) {
                *acc += v;
            }
            s[6] += 1.0;
        }
        for (c, s) in centers.iter_mut().zip(&sums) {
            if s[6] > 0.0 {
                for (a, v) in c.iter_mut().enumerate() {
                    *v = s[a] / s[6];
                }
            }
        }
    }
    Ok(KMeans {
        labels,
        centers: used,
        step,
    })
}
