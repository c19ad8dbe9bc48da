//! LIME baseline over superpixels.
//!
//! Random on/off masks over segments, median-filled perturbations scored
//! by the model, and a kernel-weighted ridge fit whose coefficients rank
//! the segments.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::micronet::Classifier;
use crate::par::{map_indexed, Threads};
use crate::rng::Prng;
use crate::segmentation::SegmentMap;
use crate::spscore::SegmentRanking;
use crate::tensor::Tensor;

/// Value given to switched-off segments.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Fill {
    /// Per-channel median of the whole input.
    #[default]
    MedianImage,
    Zero,
}

/// How coefficients order the segments.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum RankBy {
    /// Most positive first.
    #[default]
    Signed,
    /// Largest magnitude first.
    Absolute,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimeConfig {
    pub n_samples: usize,
    /// Width of the exponential kernel on cosine distance; infinity gives
    /// uniform sample weights.
    pub kernel_width: f64,
    pub ridge_lambda: f64,
    pub seed: u64,
    /// Perturbed inputs evaluated per parallel batch.
    pub batch_size: usize,
    pub fill: Fill,
    pub rank_by: RankBy,
    pub threads: Threads,
}

impl Default for LimeConfig {
    fn default() -> Self {
        LimeConfig {
            n_samples: 1000,
            kernel_width: 0.25,
            ridge_lambda: 1.0,
            seed: 0,
            batch_size: 16,
            fill: Fill::MedianImage,
            rank_by: RankBy::Signed,
            threads: Threads::Pool,
        }
    }
}

impl LimeConfig {
    pub fn with_samples(n_samples: usize) -> Self {
        LimeConfig {
            n_samples,
            ..LimeConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimeResult {
    /// Surrogate weight of each segment, indexed by segment id.
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub ranking: SegmentRanking,
}

/// `n` masks over `d` segments: all-ones first, then fair coin flips.
pub fn sample_masks(n: usize, d: usize, rng: &mut Prng) -> Vec<Vec<bool>> {
    (0..n)
        .map(|i| {
            if i == 0 {
                vec![true; d]
            } else {
                (0..d).map(|_| rng.bernoulli(0.5)).collect()
            }
        })
        .collect()
}

/// Median of each channel of a channel-first tensor; even counts average
/// the two middle values.
pub fn channel_medians(image: &Tensor) -> Vec<f32> {
    (0..image.shape()[0])
        .map(|c| {
            let mut v = image.channel(c).to_vec();
            let n = v.len();
            let mid = n / 2;
            let (_, &mut hi, _) = v.select_nth_unstable_by(mid, f32::total_cmp);
            if n % 2 == 1 {
                hi
            } else {
                let lo = v[..mid].iter().copied().fold(f32::NEG_INFINITY, f32::max);
                ((lo as f64 + hi as f64) / 2.0) as f32
            }
        })
        .collect()
}

/// Per-channel replacement values for `fill`.
pub fn fill_values(image: &Tensor, fill: Fill) -> Vec<f32> {
    match fill {
        Fill::MedianImage => channel_medians(image),
        Fill::Zero => vec![0.0; image.shape()[0]],
    }
}

fn check_seg(image: &Tensor, seg: &SegmentMap) -> Result<()> {
    if image.shape().get(1..) != Some(seg.shape()) {
        return Err(Error::ShapeMismatch {
            expected: seg.shape().to_vec(),
            actual: image.shape().to_vec(),
        });
    }
    Ok(())
}

/// Replaces the pixels of segments whose mask bit is off by `values[c]`.
pub fn perturb_with(image: &Tensor, seg: &SegmentMap, mask: &[bool], values: &[f32]) -> Result<Tensor> {
    check_seg(image, seg)?;
    if mask.len() != seg.n_segments() {
        return Err(Error::invalid(format!(
            "mask has {} bits for {} segments",
            mask.len(),
            seg.n_segments()
        )));
    }
    let n = seg.len();
    let labels = seg.labels();
    let data = image
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| if mask[labels[i % n] as usize] { v } else { values[i / n] })
        .collect();
    Ok(Tensor::from_parts(image.shape().to_vec(), data))
}

pub fn perturb(image: &Tensor, seg: &SegmentMap, mask: &[bool], fill: Fill) -> Result<Tensor> {
    perturb_with(image, seg, mask, &fill_values(image, fill))
}

/// `exp(-D^2 / width^2)` with `D` the cosine distance from the all-ones
/// mask (1 for the all-zero mask).
pub fn kernel_weight(mask: &[bool], kernel_width: f64) -> f64 {
    let on = mask.iter().filter(|&&b| b).count();
    let d = if on == 0 {
        1.0
    } else {
        1.0 - (on as f64 / mask.len() as f64).sqrt()
    };
    (-(d * d) / (kernel_width * kernel_width)).exp()
}

/// Minimises `sum_i w_i (y_i - b0 - x_i . b)^2 + lambda |b|^2` with the
/// intercept unpenalised. Returns `(b, b0)`.
pub fn fit_weighted_ridge(x: &[Vec<bool>], y: &[f64], w: &[f64], lambda: f64) -> Result<(Vec<f64>, f64)> {
    let n = x.len();
    if n == 0 {
        return Err(Error::Empty("regression samples"));
    }
    if y.len() != n || w.len() != n {
        return Err(Error::invalid("x, y and w lengths differ"));
    }
    if !(lambda >= 0.0) || w.iter().any(|&v| !(v >= 0.0 && v.is_finite())) || y.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("lambda and weights must be non-negative, targets finite"));
    }
    let d = x[0].len();
    if x.iter().any(|r| r.len() != d) {
        return Err(Error::invalid("ragged design matrix"));
    }
    let sw: f64 = w.iter().sum();
    if sw <= 0.0 {
        return Err(Error::SingularSystem);
    }
    let mut xbar = vec![0.0; d];
    let mut ybar = 0.0;
    for ((row, &yi), &wi) in x.iter().zip(y).zip(w) {
        for (m, &b) in xbar.iter_mut().zip(row) {
            *m += wi * b as u8 as f64;
        }
        ybar += wi * yi;
    }
    xbar.iter_mut().for_each(|m| *m /= sw);
    ybar /= sw;

    let mut a = DMatrix::<f64>::zeros(d, d);
    let mut b = DVector::<f64>::zeros(d);
    let mut xc = vec![0.0; d];
    for ((row, &yi), &wi) in x.iter().zip(y).zip(w) {
        for j in 0..d {
            xc[j] = row[j] as u8 as f64 - xbar[j];
        }
        let yc = yi - ybar;
        for j in 0..d {
            let wj = wi * xc[j];
            b[j] += wj * yc;
            for k in 0..=j {
                a[(j, k)] += wj * xc[k];
            }
        }
    }
    for j in 0..d {
        a[(j, j)] += lambda;
        for k in 0..j {
            a[(k, j)] = a[(j, k)];
        }
    }
    let scale = (0..d).map(|j| a[(j, j)]).fold(0.0f64, f64::max);
    let chol = a.cholesky().ok_or(Error::SingularSystem)?;
    let l = chol.l_dirty();
    if scale <= 0.0 || (0..d).any(|j| l[(j, j)] * l[(j, j)] <= 1e-12 * scale) {
        return Err(Error::SingularSystem);
    }
    let beta = chol.solve(&b);
    let intercept = ybar - beta.iter().zip(&xbar).map(|(b, m)| b * m).sum::<f64>();
    Ok((beta.iter().copied().collect(), intercept))
}

/// Ranks segments by their coefficients.
pub fn rank_coefficients(coefficients: &[f64], rank_by: RankBy) -> Result<SegmentRanking> {
    match rank_by {
        RankBy::Signed => SegmentRanking::from_weights(coefficients),
        RankBy::Absolute => SegmentRanking::from_weights(&coefficients.iter().map(|c| c.abs()).collect::<Vec<_>>()),
    }
}

/// LIME explanation of `class` for `image` over the segments of `seg`.
pub fn lime_explain<M: Classifier + ?Sized>(
    model: &M,
    image: &Tensor,
    seg: &SegmentMap,
    class: usize,
    cfg: &LimeConfig,
) -> Result<LimeResult> {
    if cfg.n_samples < 1 {
        return Err(Error::invalid("n_samples must be at least 1"));
    }
    let mut rng = Prng::new(cfg.seed);
    let masks = sample_masks(cfg.n_samples, seg.n_segments(), &mut rng);
    lime_with_masks(model, image, seg, class, &masks, cfg)
}

/// LIME over an explicit mask list (e.g. every mask, for exhaustive fits).
pub fn lime_with_masks<M: Classifier + ?Sized>(
    model: &M,
    image: &Tensor,
    seg: &SegmentMap,
    class: usize,
    masks: &[Vec<bool>],
    cfg: &LimeConfig,
) -> Result<LimeResult> {
    if class >= model.num_classes() {
        return Err(Error::ClassOutOfRange {
            class,
            num_classes: model.num_classes(),
        });
    }
    check_seg(image, seg)?;
    let values = fill_values(image, cfg.fill);
    let y = evaluate_masks(model, image, seg, class, masks, &values, cfg.batch_size, cfg.threads)?;
    let w: Vec<f64> = masks.iter().map(|m| kernel_weight(m, cfg.kernel_width)).collect();
    let (coefficients, intercept) = fit_weighted_ridge(masks, &y, &w, cfg.ridge_lambda)?;
    let ranking = rank_coefficients(&coefficients, cfg.rank_by)?;
    Ok(LimeResult {
        coefficients,
        intercept,
        ranking,
    })
}

/// Probability of `class` for each masked input, in mask order. Batches of
/// `batch_size` run in parallel under `threads`.
#[allow(clippy::too_many_arguments)]
fn evaluate_masks<M: Classifier + ?Sized>(
    model: &M,
    image: &Tensor,
    seg: &SegmentMap,
    class: usize,
    masks: &[Vec<bool>],
    values: &[f32],
    batch_size: usize,
    threads: Threads,
) -> Result<Vec<f64>> {
    let batch = batch_size.max(1);
    let mut y = Vec::with_capacity(masks.len());
    for chunk in masks.chunks(batch) {
        let scores = map_indexed(chunk.len(), threads, |i| -> Result<f64> {
            let x = perturb_with(image, seg, &chunk[i], values)?;
            Ok(model.probabilities(&x)?[class] as f64)
        });
        for s in scores {
            y.push(s?);
        }
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::micronet::test_nets::linear;
    use proptest::prelude::*;

    /// Probability of class 0 is `bias + sum_i coef_i [segment i untouched]`.
    pub(crate) struct IndicatorStub {
        pub seg: SegmentMap,
        pub image: Tensor,
        pub coef: Vec<f64>,
        pub bias: f64,
    }

    impl Classifier for IndicatorStub {
        fn num_classes(&self) -> usize {
            2
        }

        fn input_shape(&self) -> &[usize] {
            self.image.shape()
        }

        fn probabilities(&self, input: &Tensor) -> Result<Vec<f32>> {
            let n = self.seg.len();
            let mut on = vec![true; self.coef.len()];
            for (i, (&a, &b)) in input.data().iter().zip(self.image.data()).enumerate() {
                if a != b {
                    on[self.seg.labels()[i % n] as usize] = false;
                }
            }
            let p = self.bias + self.coef.iter().zip(&on).filter(|(_, &o)| o).map(|(c, _)| c).sum::<f64>();
            Ok(vec![p as f32, 1.0 - p as f32])
        }
    }

    fn stub(seed: u64) -> IndicatorStub {
        let mut rng = Prng::new(seed);
        let seg = SegmentMap::new(vec![2, 4], (0..8).collect()).unwrap();
        let image = Tensor::from_fn(vec![3, 2, 4], |i| 0.1 * (i % 8) as f32 + 0.05).unwrap();
        let coef: Vec<f64> = (0..8).map(|_| rng.uniform(-0.05, 0.1) as f64).collect();
        IndicatorStub {
            seg,
            image,
            coef,
            bias: 0.2,
        }
    }

    fn all_masks(d: usize) -> Vec<Vec<bool>> {
        (0..1u32 << d).map(|m| (0..d).map(|i| m >> i & 1 == 1).collect()).collect()
    }

    #[test]
    fn mask_sampling() {
        assert_eq!(sample_masks(1, 4, &mut Prng::new(0)), vec![vec![true; 4]]);
        let a = sample_masks(20, 6, &mut Prng::new(3));
        assert_eq!(a, sample_masks(20, 6, &mut Prng::new(3)));
        let many = sample_masks(10_001, 10, &mut Prng::new(5));
        for bit in 0..10 {
            let mean = many[1..].iter().filter(|m| m[bit]).count() as f64 / 10_000.0;
            assert!((0.45..=0.55).contains(&mean), "{mean}");
        }
    }

    #[test]
    fn median_matches_sorted_middle() {
        let img = Tensor::new(vec![2, 1, 4], vec![4.0, 1.0, 3.0, 2.0, 5.0, 5.0, 0.0, 9.0]).unwrap();
        assert_eq!(channel_medians(&img), vec![2.5, 5.0]);
        let odd = Tensor::new(vec![1, 1, 3], vec![7.0, -1.0, 3.0]).unwrap();
        assert_eq!(channel_medians(&odd), vec![3.0]);
    }

    #[test]
    fn perturbation_cases() {
        let seg = SegmentMap::new(vec![2, 3], vec![0, 0, 1, 1, 2, 2]).unwrap();
        let img = Tensor::from_fn(vec![3, 2, 3], |i| (i * 37 % 11) as f32 / 11.0).unwrap();
        assert_eq!(perturb(&img, &seg, &[true; 3], Fill::MedianImage).unwrap(), img);
        let med = channel_medians(&img);
        let off = perturb(&img, &seg, &[false; 3], Fill::MedianImage).unwrap();
        for c in 0..3 {
            assert!(off.channel(c).iter().all(|&v| v == med[c]));
        }
        let one = perturb(&img, &seg, &[true, false, true], Fill::Zero).unwrap();
        let changed = (0..6).filter(|&p| (0..3).any(|c| one.data()[c * 6 + p] != img.data()[c * 6 + p])).count();
        assert_eq!(changed, 2);
        assert!(perturb(&img, &seg, &[true; 2], Fill::Zero).is_err());
    }

    #[test]
    fn kernel_values() {
        assert_eq!(kernel_weight(&[true; 6], 0.25), 1.0);
        assert_eq!(kernel_weight(&[false; 6], 0.25), (-16.0f64).exp());
        let half = [true, false, true, false];
        let d = 1.0 - 0.5f64.sqrt();
        assert!((kernel_weight(&half, 0.25) - (-(d * d) / 0.0625).exp()).abs() < 1e-15);
        assert_eq!(kernel_weight(&[false; 3], f64::INFINITY), 1.0);
    }

    #[test]
    fn ridge_two_point_line_and_shrinkage() {
        let x = vec![vec![false], vec![true]];
        let (b, b0) = fit_weighted_ridge(&x, &[0.0, 2.0], &[1.0, 1.0], 0.0).unwrap();
        assert!((b[0] - 2.0).abs() < 1e-12 && b0.abs() < 1e-12);
        let (b, b0) = fit_weighted_ridge(&x, &[0.0, 2.0], &[1.0, 1.0], 1e9).unwrap();
        assert!(b[0].abs() < 1e-6);
        assert!((b0 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn ridge_singular_without_penalty() {
        let x = vec![vec![true; 3]];
        assert!(matches!(fit_weighted_ridge(&x, &[0.7], &[1.0], 0.0), Err(Error::SingularSystem)));
        let (b, b0) = fit_weighted_ridge(&x, &[0.7], &[1.0], 1.0).unwrap();
        assert_eq!(b, vec![0.0; 3]);
        assert!((b0 - 0.7).abs() < 1e-12);
    }

    #[test]
    fn ridge_optimality_on_random_system() {
        let mut rng = Prng::new(11);
        let (n, d, lambda) = (200, 8, 0.5);
        let x: Vec<Vec<bool>> = (0..n).map(|_| (0..d).map(|_| rng.bernoulli(0.5)).collect()).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.next_f64()).collect();
        let w: Vec<f64> = (0..n).map(|_| rng.next_f64() + 0.1).collect();
        let (b, b0) = fit_weighted_ridge(&x, &y, &w, lambda).unwrap();
        // Gradient of the objective in (b0, b) must vanish.
        let mut grad = vec![0.0; d + 1];
        for i in 0..n {
            let pred = b0 + (0..d).map(|j| b[j] * x[i][j] as u8 as f64).sum::<f64>();
            let r = -2.0 * w[i] * (y[i] - pred);
            grad[0] += r;
            for j in 0..d {
                grad[j + 1] += r * x[i][j] as u8 as f64;
            }
        }
        for j in 0..d {
            grad[j + 1] += 2.0 * lambda * b[j];
        }
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        assert!(norm < 1e-6, "{norm}");
    }

    #[test]
    fn exhaustive_masks_recover_linear_stub() {
        let s = stub(42);
        let cfg = LimeConfig {
            kernel_width: f64::INFINITY,
            ridge_lambda: 0.0,
            ..LimeConfig::default()
        };
        let r = lime_with_masks(&s, &s.image, &s.seg, 0, &all_masks(8), &cfg).unwrap();
        for (c, t) in r.coefficients.iter().zip(&s.coef) {
            assert!((c - t).abs() < 1e-6, "{c} vs {t}");
        }
        let best = (0..8).max_by(|&a, &b| s.coef[a].total_cmp(&s.coef[b])).unwrap();
        assert_eq!(r.ranking.top(), Some(best as u32));
    }

    #[test]
    fn single_sample_cases() {
        let s = stub(1);
        let mut cfg = LimeConfig::with_samples(1);
        cfg.ridge_lambda = 0.0;
        assert!(matches!(lime_explain(&s, &s.image, &s.seg, 0, &cfg), Err(Error::SingularSystem)));
        cfg.ridge_lambda = 1.0;
        let r = lime_explain(&s, &s.image, &s.seg, 0, &cfg).unwrap();
        assert!(r.coefficients.iter().all(|&c| c == 0.0));
    }

    #[test]
    fn deterministic_across_threads_and_batches() {
        let net = linear(vec![3, 2, 4], 3, 9);
        let seg = SegmentMap::new(vec![2, 4], vec![0, 0, 1, 1, 2, 2, 3, 3]).unwrap();
        let img = Tensor::from_fn(vec![3, 2, 4], |i| (i % 5) as f32 / 5.0).unwrap();
        let base = LimeConfig {
            n_samples: 64,
            seed: 3,
            ..LimeConfig::default()
        };
        let a = lime_explain(&net, &img, &seg, 1, &base).unwrap();
        for (batch, threads) in [(1, Threads::Sequential), (7, Threads::Pool), (64, Threads::Pool)] {
            let cfg = LimeConfig {
                batch_size: batch,
                threads,
                ..base.clone()
            };
            assert_eq!(lime_explain(&net, &img, &seg, 1, &cfg).unwrap(), a);
        }
        assert!(lime_explain(&net, &img, &seg, 3, &base).is_err());
    }

    #[test]
    fn absolute_ranking_orders_by_magnitude() {
        let r = rank_coefficients(&[0.2, -0.5, 0.1], RankBy::Absolute).unwrap();
        assert_eq!(r.ids().collect::<Vec<_>>(), vec![1, 0, 2]);
        let r = rank_coefficients(&[0.2, -0.5, 0.1], RankBy::Signed).unwrap();
        assert_eq!(r.ids().collect::<Vec<_>>(), vec![0, 2, 1]);
    }

    proptest! {
        #[test]
        fn perturb_changes_only_masked_segments(bits in prop::collection::vec(any::<bool>(), 4), seed in any::<u64>()) {
            let seg = SegmentMap::new(vec![2, 2], vec![0, 1, 2, 3]).unwrap();
            let mut rng = Prng::new(seed);
            let img = Tensor::from_fn(vec![3, 2, 2], |_| rng.next_f32()).unwrap();
            let out = perturb(&img, &seg, &bits, Fill::Zero).unwrap();
            for p in 0..4 {
                for c in 0..3 {
                    let expect = if bits[p] { img.data()[c * 4 + p] } else { 0.0 };
                    prop_assert_eq!(out.data()[c * 4 + p], expect);
                }
            }
        }
    }
}
