//! Superpixel scoring: pixel saliency summed per segment, ranked, and
//! rendered as top-k explanations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::micronet::Network;
use crate::saliency::{scores_from_trace, SaliencyMap, SaliencyMethod};
use crate::segmentation::{SegmentMap, Segmenter};
use crate::tensor::Tensor;

/// Segment ids ordered by weight, descending; ties by ascending id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRanking {
    entries: Vec<(u32, f64)>,
}

impl SegmentRanking {
    /// Ranks segment `i` by `weights[i]`.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("segment weights"));
        }
        let mut entries: Vec<(u32, f64)> = weights.iter().enumerate().map(|(i, &w)| (i as u32, w)).collect();
        entries.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        Ok(SegmentRanking { entries })
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Segment ids from most to least important.
    pub fn ids(&self) -> impl DoubleEndedIterator<Item = u32> + ExactSizeIterator + '_ {
        self.entries.iter().map(|e| e.0)
    }

    pub fn top(&self) -> Option<u32> {
        self.entries.first().map(|e| e.0)
    }

    pub fn top_k(&self, k: usize) -> &[(u32, f64)] {
        &self.entries[..k.min(self.entries.len())]
    }

    /// Weights indexed by segment id.
    pub fn weights_by_id(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.entries.len()];
        for &(id, v) in &self.entries {
            w[id as usize] = v;
        }
        w
    }
}

/// How pixel scores combine within a segment. Only `Sum` is the
/// reference behaviour; the others are experimental.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Aggregation {
    #[default]
    Sum,
    Mean,
    Max,
}

impl std::str::FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sum" => Ok(Aggregation::Sum),
            "mean" => Ok(Aggregation::Mean),
            "max" => Ok(Aggregation::Max),
            _ => Err(Error::invalid(format!("unknown aggregation {s:?}"))),
        }
    }
}

fn check_spatial(values: &Tensor, seg: &SegmentMap) -> Result<()> {
    if values.shape() != seg.shape() {
        return Err(Error::ShapeMismatch {
            expected: seg.shape().to_vec(),
            actual: values.shape().to_vec(),
        });
    }
    Ok(())
}

/// Per-segment weights of `|values|`, accumulated in f64.
pub fn segment_weights(values: &Tensor, seg: &SegmentMap, how: Aggregation) -> Result<Vec<f64>> {
    check_spatial(values, seg)?;
    let mut w = vec![0.0f64; seg.n_segments()];
    for (&l, &v) in seg.labels().iter().zip(values.data()) {
        let v = v.abs() as f64;
        match how {
            Aggregation::Max => w[l as usize] = w[l as usize].max(v),
            _ => w[l as usize] += v,
        }
    }
    if how == Aggregation::Mean {
        for (w, s) in w.iter_mut().zip(seg.sizes()) {
            *w /= s as f64;
        }
    }
    Ok(w)
}

/// Sums `|saliency|` per segment and ranks the segments.
pub fn aggregate(saliency: &SaliencyMap, seg: &SegmentMap) -> Result<SegmentRanking> {
    aggregate_with(saliency, seg, Aggregation::Sum)
}

pub fn aggregate_with(saliency: &SaliencyMap, seg: &SegmentMap, how: Aggregation) -> Result<SegmentRanking> {
    SegmentRanking::from_weights(&segment_weights(saliency.values(), seg, how)?)
}

fn check_ranking(seg: &SegmentMap, ranking: &SegmentRanking) -> Result<()> {
    if ranking.len() != seg.n_segments() {
        return Err(Error::invalid(format!(
            "ranking has {} segments, segment map has {}",
            ranking.len(),
            seg.n_segments()
        )));
    }
    Ok(())
}

/// Keeps the pixels of the `top_k` highest-ranked segments and blacks out
/// the rest.
pub fn render_explanation(image: &Tensor, seg: &SegmentMap, ranking: &SegmentRanking, top_k: usize) -> Result<Tensor> {
    check_ranking(seg, ranking)?;
    if top_k < 1 || top_k > seg.n_segments() {
        return Err(Error::invalid(format!("top_k = {top_k} must be in 1..={}", seg.n_segments())));
    }
    if !seg.matches(image) || image.rank() != seg.shape().len() + 1 {
        return Err(Error::ShapeMismatch {
            expected: seg.shape().to_vec(),
            actual: image.shape().to_vec(),
        });
    }
    let mut keep = vec![false; seg.n_segments()];
    for &(id, _) in ranking.top_k(top_k) {
        keep[id as usize] = true;
    }
    let n = seg.len();
    let data = image
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| if keep[seg.labels()[i % n] as usize] { v } else { 0.0 })
        .collect();
    Ok(Tensor::from_parts(image.shape().to_vec(), data))
}

/// Everything produced by one [`explain`] call.
#[derive(Debug, Clone)]
pub struct Explanation {
    pub class: usize,
    pub segments: SegmentMap,
    pub saliency: SaliencyMap,
    pub ranking: SegmentRanking,
    /// Input with all but the top-k segments blacked out.
    pub rendered: Tensor,
}

/// Segments `input`, scores pixels for `class` (the network's prediction
/// when `None`), aggregates per segment and renders the top `top_k`.
/// Runs one forward and one backward pass.
pub fn explain(
    net: &Network,
    input: &Tensor,
    class: Option<usize>,
    method: SaliencyMethod,
    segmenter: &Segmenter,
    top_k: usize,
) -> Result<Explanation> {
    let segments = segmenter.segment(input)?;
    let trace = net.forward(input)?;
    let class = class.unwrap_or_else(|| trace.predicted());
    let saliency = scores_from_trace(net, &trace, input, class, method)?;
    let ranking = aggregate(&saliency, &segments)?;
    let rendered = render_explanation(input, &segments, &ranking, top_k.min(segments.n_segments()))?;
    Ok(Explanation {
        class,
        segments,
        saliency,
        ranking,
        rendered,
    })
}

/// Saliency scaled to `[0, 1]` by its maximum (all zero stays zero).
pub fn normalized(map: &Tensor) -> Tensor {
    let max = map.data().iter().fold(0.0f32, |m, &v| m.max(v.abs()));
    let scale = if max > 0.0 { 1.0 / max } else { 0.0 };
    Tensor::from_parts(map.shape().to_vec(), map.data().iter().map(|v| v.abs() * scale).collect())
}

/// Grey heatmap of a 2D map as a `[3, H, W]` image.
pub fn heatmap_image(map: &Tensor) -> Tensor {
    let n = normalized(map);
    let mut shape = vec![3];
    shape.extend_from_slice(map.shape());
    Tensor::from_parts(shape, n.data().repeat(3))
}

/// Blends `heatmap` (red channel) over `image` with alpha 0.5.
pub fn overlay(image: &Tensor, map: &Tensor) -> Result<Tensor> {
    if image.shape().get(1..) != Some(map.shape()) {
        return Err(Error::ShapeMismatch {
            expected: image.spatial_shape().to_vec(),
            actual: map.shape().to_vec(),
        });
    }
    let heat = normalized(map);
    let n = map.len();
    let data = image
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let h = if i / n == 0 { heat.data()[i % n] } else { 0.0 };
            0.5 * v + 0.5 * h
        })
        .collect();
    Ok(Tensor::from_parts(image.shape().to_vec(), data))
}

/// Colour-coded segment preview with boundary pixels darkened.
pub fn segment_preview(seg: &SegmentMap) -> Result<Tensor> {
    let [h, w] = *seg.shape() else {
        return Err(Error::invalid("segment previews are 2D only"));
    };
    let labels = seg.labels();
    let color = |l: u32, c: usize| {
        let x = (l as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15) >> (16 * c + 8);
        0.35 + 0.6 * ((x & 0xFF) as f32 / 255.0)
    };
    let mut data = vec![0.0; 3 * h * w];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let l = labels[i];
            let edge = (x + 1 < w && labels[i + 1] != l) || (y + 1 < h && labels[i + w] != l);
            for c in 0..3 {
                data[c * h * w + i] = if edge { 0.25 * color(l, c) } else { color(l, c) };
            }
        }
    }
    Ok(Tensor::from_parts(vec![3, h, w], data))
}
