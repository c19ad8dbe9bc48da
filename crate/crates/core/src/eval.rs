//! Evaluation protocols: superpixel deletion, top-k agreement with a LIME
//! baseline, and scoring-time measurement, plus the random baseline.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lime::{fill_values, lime_explain, Fill, LimeConfig};
use crate::micronet::{count_passes, Classifier, Network};
use crate::par::{map_indexed, Threads};
use crate::rng::Prng;
use crate::saliency::{pixel_scores, scores_from_trace, SaliencyMethod};
use crate::segmentation::SegmentMap;
use crate::spscore::{aggregate, SegmentRanking};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Order {
    /// Highest-weighted segment removed first.
    #[serde(rename = "best-first")]
    BestFirst,
    #[serde(rename = "worst-first")]
    WorstFirst,
}

impl Order {
    pub const BOTH: [Order; 2] = [Order::BestFirst, Order::WorstFirst];

    pub fn name(self) -> &'static str {
        match self {
            Order::BestFirst => "best-first",
            Order::WorstFirst => "worst-first",
        }
    }
}

impl fmt::Display for Order {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Order {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "best-first" | "bestfirst" | "best" => Ok(Order::BestFirst),
            "worst-first" | "worstfirst" | "worst" => Ok(Order::WorstFirst),
            _ => Err(Error::invalid(format!("unknown order {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeletionResult {
    pub order: Order,
    /// Segments removed at the first change of prediction over the segment
    /// count; 1.0 when the prediction never changes.
    pub fraction_removed: f64,
    pub removed: usize,
    pub n_segments: usize,
}

/// Removes segments one by one in `order`, filling them per `fill`, until
/// the predicted class differs from `reference` (the initial prediction
/// when `None`). A `reference` the unmodified input does not already get
/// yields a fraction of 0.
#[allow(clippy::too_many_arguments)]
pub fn deletion_run<M: Classifier + ?Sized>(
    model: &M,
    image: &Tensor,
    seg: &SegmentMap,
    ranking: &SegmentRanking,
    order: Order,
    fill: Fill,
    reference: Option<usize>,
) -> Result<DeletionResult> {
    let d = seg.n_segments();
    if ranking.len() != d {
        return Err(Error::invalid(format!("ranking has {} segments, segment map has {d}", ranking.len())));
    }
    if image.shape().get(1..) != Some(seg.shape()) {
        return Err(Error::ShapeMismatch {
            expected: seg.shape().to_vec(),
            actual: image.shape().to_vec(),
        });
    }
    let (initial, _) = model.predict(image)?;
    let reference = reference.unwrap_or(initial);
    let result = |removed: usize| DeletionResult {
        order,
        fraction_removed: removed as f64 / d as f64,
        removed,
        n_segments: d,
    };
    if initial != reference {
        return Ok(result(0));
    }

    let mut pixels: Vec<Vec<usize>> = vec![Vec::new(); d];
    for (i, &l) in seg.labels().iter().enumerate() {
        pixels[l as usize].push(i);
    }
    let values = fill_values(image, fill);
    let n = seg.len();
    let mut data = image.data().to_vec();
    let ids: Vec<u32> = match order {
        Order::BestFirst => ranking.ids().collect(),
        Order::WorstFirst => ranking.ids().rev().collect(),
    };
    for (step, id) in ids.into_iter().enumerate() {
        for &p in &pixels[id as usize] {
            for (c, &v) in values.iter().enumerate() {
                data[c * n + p] = v;
            }
        }
        let current = Tensor::from_parts(image.shape().to_vec(), data.clone());
        if model.predict(&current)?.0 != reference {
            return Ok(result(step + 1));
        }
    }
    Ok(result(d))
}

/// Uniformly random permutation of the segments, weighted by descending
/// rank.
pub fn random_ranking(n_segments: usize, rng: &mut Prng) -> SegmentRanking {
    let mut ids: Vec<usize> = (0..n_segments).collect();
    rng.shuffle(&mut ids);
    let mut weights = vec![0.0; n_segments];
    for (rank, id) in ids.into_iter().enumerate() {
        weights[id] = (n_segments - rank) as f64;
    }
    SegmentRanking::from_weights(&weights).expect("finite weights")
}

/// True iff the candidate's top segment is among the baseline's top `k`.
pub fn topk_agreement(candidate: &SegmentRanking, baseline: &SegmentRanking, k: usize) -> bool {
    candidate
        .top()
        .is_some_and(|top| baseline.top_k(k).iter().any(|&(id, _)| id == top))
}

/// Seed of item `index` in the family `(seed, salt)`.
pub fn derive_seed(seed: u64, salt: u64, index: u64) -> u64 {
    let family = Prng::derive(seed, salt).next_u64();
    Prng::derive(family, index).next_u64()
}

/// Source of a segment ranking in an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Ranker {
    Saliency(SaliencyMethod),
    /// Random permutations; deletion fractions are averaged over
    /// `repeats` draws per input.
    Random { seed: u64, repeats: usize },
    Lime(LimeConfig),
}

impl Ranker {
    pub fn label(&self) -> String {
        match self {
            Ranker::Saliency(m) => m.name().to_string(),
            Ranker::Random { .. } => "random".to_string(),
            Ranker::Lime(cfg) => format!("lime-{}", cfg.n_samples),
        }
    }

    fn repeats(&self) -> usize {
        match self {
            Ranker::Random { repeats, .. } => (*repeats).max(1),
            _ => 1,
        }
    }

    /// Ranking `repeat` for corpus item `index`, explaining `class`.
    fn rank(&self, net: &Network, item: &EvalItem, index: usize, repeat: usize, class: usize, trace: &crate::micronet::ForwardTrace) -> Result<SegmentRanking> {
        match self {
            Ranker::Saliency(m) => {
                let map = scores_from_trace(net, trace, &item.input, class, *m)?;
                aggregate(&map, &item.segments)
            }
            Ranker::Random { seed, repeats } => {
                let stream = (index * repeats.max(&1) + repeat) as u64;
                Ok(random_ranking(item.segments.n_segments(), &mut Prng::derive(*seed, stream)))
            }
            Ranker::Lime(cfg) => {
                let cfg = LimeConfig {
                    seed: derive_seed(cfg.seed, cfg.n_samples as u64, index as u64),
                    threads: Threads::Sequential,
                    ..cfg.clone()
                };
                Ok(lime_explain(net, &item.input, &item.segments, class, &cfg)?.ranking)
            }
        }
    }
}

/// One evaluation input with its precomputed segmentation.
#[derive(Debug, Clone)]
pub struct EvalItem {
    pub input: Tensor,
    /// Ground-truth class, when known.
    pub label: Option<usize>,
    pub segments: SegmentMap,
}

/// Which class deletion must preserve.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReferenceMode {
    #[default]
    InitialPrediction,
    GroundTruth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeletionConfig {
    pub orders: Vec<Order>,
    pub fill: Fill,
    pub reference: ReferenceMode,
    /// Leave out inputs whose initial prediction differs from the label.
    pub skip_misclassified: bool,
    pub threads: Threads,
    /// Inputs evaluated between log flushes.
    pub chunk_size: usize,
    /// Per-input CSV log; existing complete inputs are not re-run.
    pub log: Option<PathBuf>,
}

impl Default for DeletionConfig {
    fn default() -> Self {
        DeletionConfig {
            orders: Order::BOTH.to_vec(),
            fill: Fill::MedianImage,
            reference: ReferenceMode::InitialPrediction,
            skip_misclassified: false,
            threads: Threads::Pool,
            chunk_size: 32,
            log: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeletionRow {
    pub method: String,
    pub order: Order,
    pub mean_fraction: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopKRow {
    pub method: String,
    pub k: usize,
    pub agreement: f64,
    pub n: usize,
}

/// Per-input record of an experiment log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub input: usize,
    pub method: String,
    /// Deletion order or top-k cutoff.
    pub key: String,
    pub value: f64,
    pub n_segments: usize,
    pub misclassified: bool,
}

fn read_log(path: &Path) -> Result<Vec<LogRow>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut reader = csv::Reader::from_path(path).map_err(|e| log_error(path, e))?;
    reader
        .deserialize()
        .collect::<std::result::Result<Vec<LogRow>, _>>()
        .map_err(|e| log_error(path, e))
}

fn log_error(path: &Path, e: csv::Error) -> Error {
    Error::Format {
        what: "experiment log",
        path: path.to_path_buf(),
        detail: e.to_string(),
    }
}

fn append_log(path: &Path, rows: &[LogRow]) -> Result<()> {
    let fresh = !path.exists() || std::fs::metadata(path)?.len() == 0;
    let file = OpenOptions::new().create(true).append(true).open(path)?;
    let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
    for r in rows {
        w.serialize(r).map_err(|e| log_error(path, e))?;
    }
    let mut file = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    file.flush()?;
    file.sync_data()?;
    Ok(())
}

/// Runs `evaluate` over the corpus in chunks, appending each chunk's rows to
/// the log and skipping inputs the log already covers with `expected` rows.
fn run_logged<F>(n_items: usize, expected: usize, threads: Threads, chunk_size: usize, log: Option<&Path>, evaluate: F) -> Result<Vec<LogRow>>
where
    F: Fn(usize) -> Result<Vec<LogRow>> + Sync + Send,
{
    let mut rows = match log {
        Some(p) => read_log(p)?,
        None => Vec::new(),
    };
    let mut per_input: BTreeMap<usize, usize> = BTreeMap::new();
    for r in &rows {
        *per_input.entry(r.input).or_default() += 1;
    }
    let done: BTreeSet<usize> = per_input.into_iter().filter(|&(_, c)| c == expected).map(|(i, _)| i).collect();
    rows.retain(|r| done.contains(&r.input) && r.input < n_items);
    let todo: Vec<usize> = (0..n_items).filter(|i| !done.contains(i)).collect();
    for chunk in todo.chunks(chunk_size.max(1)) {
        let results = map_indexed(chunk.len(), threads, |j| evaluate(chunk[j]));
        let mut fresh = Vec::new();
        for r in results {
            fresh.extend(r?);
        }
        if let Some(p) = log {
            append_log(p, &fresh)?;
        }
        rows.extend(fresh);
    }
    rows.sort_by_key(|r| r.input);
    Ok(rows)
}

fn initial_state(net: &Network, item: &EvalItem, reference: ReferenceMode) -> Result<(crate::micronet::ForwardTrace, usize, bool)> {
    let trace = net.forward(&item.input)?;
    let predicted = trace.predicted();
    let misclassified = item.label.is_some_and(|l| l != predicted);
    let class = match (reference, item.label) {
        (ReferenceMode::GroundTruth, Some(l)) => l,
        (ReferenceMode::GroundTruth, None) => return Err(Error::invalid("ground-truth reference needs labels")),
        (ReferenceMode::InitialPrediction, _) => predicted,
    };
    Ok((trace, class, misclassified))
}

/// Deletion protocol over a corpus: mean fraction per ranker and order.
pub fn run_deletion(net: &Network, items: &[EvalItem], rankers: &[Ranker], cfg: &DeletionConfig) -> Result<Vec<DeletionRow>> {
    if items.is_empty() {
        return Err(Error::Empty("corpus"));
    }
    let expected = rankers.len() * cfg.orders.len();
    let rows = run_logged(items.len(), expected, cfg.threads, cfg.chunk_size, cfg.log.as_deref(), |index| {
        let item = &items[index];
        let (trace, class, misclassified) = initial_state(net, item, cfg.reference)?;
        if cfg.skip_misclassified && misclassified {
            return Ok(Vec::new());
        }
        let mut out = Vec::with_capacity(expected);
        for ranker in rankers {
            let reps = ranker.repeats();
            let mut sums = vec![0.0; cfg.orders.len()];
            for r in 0..reps {
                let ranking = ranker.rank(net, item, index, r, class, &trace)?;
                for (s, &order) in sums.iter_mut().zip(&cfg.orders) {
                    *s += deletion_run(net, &item.input, &item.segments, &ranking, order, cfg.fill, Some(class))?.fraction_removed;
                }
            }
            for (s, &order) in sums.iter().zip(&cfg.orders) {
                out.push(LogRow {
                    input: index,
                    method: ranker.label(),
                    key: order.name().to_string(),
                    value: s / reps as f64,
                    n_segments: item.segments.n_segments(),
                    misclassified,
                });
            }
        }
        Ok(out)
    })?;
    let mut table = Vec::new();
    for ranker in rankers {
        for &order in &cfg.orders {
            let label = ranker.label();
            let values: Vec<f64> = rows
                .iter()
                .filter(|r| r.method == label && r.key == order.name())
                .map(|r| r.value)
                .collect();
            table.push(DeletionRow {
                method: label,
                order,
                mean_fraction: mean(&values),
                n: values.len(),
            });
        }
    }
    Ok(table)
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        f64::NAN
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopKConfig {
    pub ks: Vec<usize>,
    pub baseline: LimeConfig,
    pub threads: Threads,
    pub chunk_size: usize,
    pub log: Option<PathBuf>,
}

impl Default for TopKConfig {
    fn default() -> Self {
        TopKConfig {
            ks: vec![1, 3, 5],
            baseline: LimeConfig::with_samples(1000),
            threads: Threads::Pool,
            chunk_size: 16,
            log: None,
        }
    }
}

/// Top-k protocol: how often each candidate's top segment falls in the
/// baseline LIME's top k, explaining the initial prediction.
pub fn run_topk(net: &Network, items: &[EvalItem], candidates: &[Ranker], cfg: &TopKConfig) -> Result<Vec<TopKRow>> {
    if items.is_empty() {
        return Err(Error::Empty("corpus"));
    }
    let expected = candidates.len() * cfg.ks.len();
    let baseline = Ranker::Lime(cfg.baseline.clone());
    let rows = run_logged(items.len(), expected, cfg.threads, cfg.chunk_size, cfg.log.as_deref(), |index| {
        let item = &items[index];
        let (trace, class, misclassified) = initial_state(net, item, ReferenceMode::InitialPrediction)?;
        let reference = baseline.rank(net, item, index, 0, class, &trace)?;
        let mut out = Vec::with_capacity(expected);
        for cand in candidates {
            let ranking = cand.rank(net, item, index, 0, class, &trace)?;
            for &k in &cfg.ks {
                out.push(LogRow {
                    input: index,
                    method: cand.label(),
                    key: k.to_string(),
                    value: topk_agreement(&ranking, &reference, k) as u8 as f64,
                    n_segments: item.segments.n_segments(),
                    misclassified,
                });
            }
        }
        Ok(out)
    })?;
    let mut table = Vec::new();
    for cand in candidates {
        for &k in &cfg.ks {
            let label = cand.label();
            let key = k.to_string();
            let values: Vec<f64> = rows.iter().filter(|r| r.method == label && r.key == key).map(|r| r.value).collect();
            table.push(TopKRow {
                method: label,
                k,
                agreement: mean(&values),
                n: values.len(),
            });
        }
    }
    Ok(table)
}

/// A scoring method whose cost is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TimedMethod {
    Saliency(SaliencyMethod),
    /// LIME with this many samples.
    Lime(usize),
}

impl TimedMethod {
    pub fn label(&self) -> String {
        match self {
            TimedMethod::Saliency(m) => m.name().to_string(),
            TimedMethod::Lime(n) => format!("lime-{n}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingResult {
    pub method: String,
    pub n_inputs: usize,
    pub mean_seconds: f64,
    /// Network passes per timed input.
    pub forward_passes: f64,
    pub backward_passes: f64,
}

/// Mean single-threaded wall time per input of scoring every segment.
/// Segmentations are precomputed, and the explained class (the network's
/// prediction) is found outside the timed region. The first `warmup`
/// inputs of each method are run but not counted.
pub fn bench_timing(net: &Network, items: &[EvalItem], methods: &[TimedMethod], lime: &LimeConfig, warmup: usize) -> Result<Vec<TimingResult>> {
    if items.len() <= warmup {
        return Err(Error::invalid(format!("timing needs more than {warmup} inputs, got {}", items.len())));
    }
    let classes = items.iter().map(|it| net.predict(&it.input).map(|p| p.0)).collect::<Result<Vec<_>>>()?;
    let mut out = Vec::new();
    for &method in methods {
        let mut seconds = 0.0;
        let mut forward = 0;
        let mut backward = 0;
        for (i, (item, &class)) in items.iter().zip(&classes).enumerate() {
            let start = Instant::now();
            let (ranking, passes) = count_passes(|| -> Result<SegmentRanking> {
                match method {
                    TimedMethod::Saliency(m) => aggregate(&pixel_scores(net, &item.input, class, m)?, &item.segments),
                    TimedMethod::Lime(n) => {
                        let cfg = LimeConfig {
                            n_samples: n,
                            seed: derive_seed(lime.seed, n as u64, i as u64),
                            threads: Threads::Sequential,
                            ..lime.clone()
                        };
                        Ok(lime_explain(net, &item.input, &item.segments, class, &cfg)?.ranking)
                    }
                }
            });
            let elapsed = start.elapsed().as_secs_f64();
            std::hint::black_box(ranking?);
            if i >= warmup {
                seconds += elapsed;
                forward += passes.forward;
                backward += passes.backward;
            }
        }
        let n = items.len() - warmup;
        out.push(TimingResult {
            method: method.label(),
            n_inputs: n,
            mean_seconds: seconds / n as f64,
            forward_passes: forward as f64 / n as f64,
            backward_passes: backward as f64 / n as f64,
        });
    }
    Ok(out)
}
