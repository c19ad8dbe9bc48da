use std::path::Path;

use segrank::eval::{
    bench_timing, run_deletion, run_topk, DeletionConfig, EvalItem, Order, Ranker, ReferenceMode, TimedMethod, TopKConfig,
};
use segrank::lime::{lime_explain, Fill, LimeConfig, RankBy};
use segrank::micronet::{load_checkpoint, save_checkpoint, NetKind, Network, NetworkSpec, TrainConfig};
use segrank::par::{self, Threads};
use segrank::ppm::{read_ppm, write_ppm};
use segrank::saliency::{scores_from_trace, SaliencyMethod};
use segrank::segmentation::{relabel_compact, QuickShiftParams, SegmentMap, Segmenter, SlicParams};
use segrank::spscore::{aggregate_with, heatmap_image, overlay, render_explanation, segment_preview, Aggregation, SegmentRanking};
use segrank::stf::{read_tensor, write_tensor};
use segrank::Tensor;
use serde::Serialize;

use crate::args::*;
use crate::dataset::{self, Dataset};
use crate::error::{CliError, Result};
use crate::output::{create_dir, ensure_parent, write_table};

pub struct Globals {
    pub threads: Threads,
    pub json: bool,
}

fn load_input(path: &Path) -> Result<Tensor> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    Ok(if ext.eq_ignore_ascii_case("ppm") {
        read_ppm(path)?
    } else {
        read_tensor(path)?
    })
}

fn segmenter(p: &SegParams, seed: u64, input: &Tensor) -> Result<Segmenter> {
    let volumetric = input.rank() == 4;
    let algo = match p.algo {
        Algo::Auto if volumetric => Algo::Slic,
        Algo::Auto => Algo::Quickshift,
        a => a,
    };
    Ok(match algo {
        Algo::Quickshift if volumetric => {
            return Err(CliError::Usage("quickshift segments images only; use --algo slic for clips".into()));
        }
        Algo::Quickshift => Segmenter::QuickShift(QuickShiftParams {
            ratio: p.ratio,
            kernel_size: p.kernel_size,
            max_dist: p.max_dist,
            seed,
        }),
        _ => Segmenter::Slic(SlicParams {
            k: p.k,
            m: p.m,
            max_iters: p.slic_iters,
            min_size_factor: p.min_size_factor,
            seed,
        }),
    })
}

fn parse_methods(names: &[String]) -> Result<Vec<SaliencyMethod>> {
    if names.iter().any(|n| n == "all") {
        return Ok(SaliencyMethod::ALL.to_vec());
    }
    names
        .iter()
        .filter(|n| !n.is_empty() && *n != "none")
        .map(|n| n.parse().map_err(|e: segrank::Error| CliError::Usage(e.to_string())))
        .collect()
}

fn lime_config(n_samples: usize, p: &LimeParams, threads: Threads) -> LimeConfig {
    LimeConfig {
        n_samples,
        kernel_width: p.kernel_width,
        ridge_lambda: p.lambda,
        seed: p.lime_seed,
        batch_size: p.batch,
        fill: fill(p.fill),
        rank_by: match p.rank_by {
            RankByArg::Signed => RankBy::Signed,
            RankByArg::Absolute => RankBy::Absolute,
        },
        threads,
    }
}

fn fill(f: FillArg) -> Fill {
    match f {
        FillArg::Median => Fill::MedianImage,
        FillArg::Zero => Fill::Zero,
    }
}

/// Frame `t` of a clip (`[3, T, H, W]` or `[T, H, W]`); images pass through.
fn frame_of(t: &Tensor, frame: usize) -> Result<Tensor> {
    let (channels, spatial) = match t.rank() {
        4 => (t.shape()[0], &t.shape()[1..]),
        3 if t.shape()[0] != 3 => (1, t.shape()),
        _ => return Ok(t.clone()),
    };
    let [d, h, w] = *spatial else { unreachable!() };
    let frame = frame.min(d - 1);
    let data = (0..channels)
        .flat_map(|c| {
            let start = (c * d + frame) * h * w;
            t.data()[start..start + h * w].iter().copied()
        })
        .collect();
    let shape = if t.rank() == 4 { vec![channels, h, w] } else { vec![h, w] };
    Ok(Tensor::new(shape, data)?)
}

fn preview(seg: &SegmentMap, frame: usize) -> Result<Tensor> {
    match *seg.shape() {
        [d, h, w] => {
            let f = frame.min(d - 1);
            let labels = &seg.labels()[f * h * w..(f + 1) * h * w];
            Ok(segment_preview(&relabel_compact(&[h, w], labels))?)
        }
        _ => Ok(segment_preview(seg)?),
    }
}

fn middle(input: &Tensor, frame: Option<usize>) -> usize {
    frame.unwrap_or(if input.rank() == 4 { input.shape()[1] / 2 } else { 0 })
}

pub fn datagen(a: &DatagenArgs, g: &Globals) -> Result<()> {
    dataset::write(&a.out, a.kind, a.n_train, a.n_val, a.seed, a.ppm, g.json)?;
    println!("wrote {} ({} train, {} val) to {}", a.kind.name(), a.n_train, a.n_val, a.out.display());
    Ok(())
}

#[derive(Serialize)]
struct EpochRow {
    epoch: usize,
    train_loss: f32,
    train_accuracy: f32,
    val_accuracy: Option<f32>,
}

pub fn train(a: &TrainArgs, g: &Globals) -> Result<()> {
    let data = Dataset::open(&a.data)?;
    let kind = match data.kind {
        DataKind::Shapes2d => NetKind::Net2D,
        DataKind::MovingShapes3d => NetKind::Net3D,
        DataKind::TwoShape2d => {
            return Err(CliError::Usage("two-shape data has no single label to train on".into()));
        }
    };
    let train: Vec<_> = data.load(SplitArg::Train, None)?.into_iter().map(|d| d.sample).collect();
    let val: Vec<_> = data.load(SplitArg::Val, None)?.into_iter().map(|d| d.sample).collect();
    let spec = NetworkSpec {
        kind,
        num_classes: segrank::datagen::NUM_CLASSES,
    };
    let mut net = Network::init_weights(spec, a.seed)?;
    let cfg = TrainConfig {
        epochs: a.epochs.unwrap_or(if kind == NetKind::Net2D { 15 } else { 25 }),
        batch_size: a.batch,
        lr: a.lr,
        momentum: a.momentum,
        seed: a.seed,
        target_accuracy: a.target_accuracy,
        threads: g.threads,
    };
    let report = segrank::micronet::train_sgd(&mut net, &train, &val, &cfg)?;
    for e in &report.epochs {
        println!(
            "epoch {:>3}  loss {:.4}  train {:.4}  val {}",
            e.epoch,
            e.train_loss,
            e.train_accuracy,
            e.val_accuracy.map_or("-".into(), |v| format!("{v:.4}"))
        );
    }
    save_checkpoint(&net, &a.out)?;
    let rows: Vec<EpochRow> = report
        .epochs
        .iter()
        .map(|e| EpochRow {
            epoch: e.epoch,
            train_loss: e.train_loss,
            train_accuracy: e.train_accuracy,
            val_accuracy: e.val_accuracy,
        })
        .collect();
    write_table(&a.out.join("metrics.csv"), &rows, g.json)
}

pub fn segment(a: &SegmentArgs) -> Result<()> {
    let input = load_input(&a.input)?;
    let seg = segmenter(&a.seg, a.seed, &input)?.segment(&input)?;
    ensure_parent(&a.out)?;
    let preview_path = a.preview.clone().unwrap_or_else(|| a.out.with_extension("ppm"));
    let image = preview(&seg, middle(&input, None))?;
    seg.save(&a.out)?;
    ensure_parent(&preview_path)?;
    write_ppm(&preview_path, &image)?;
    println!("{} segments -> {}", seg.n_segments(), a.out.display());
    Ok(())
}

struct Prepared {
    net: Network,
    input: Tensor,
    segments: SegmentMap,
    class: usize,
    trace: segrank::micronet::ForwardTrace,
}

fn prepare(c: &SingleInput) -> Result<Prepared> {
    let net = load_checkpoint(&c.model)?;
    let input = load_input(&c.input)?;
    let segments = match &c.segments {
        Some(p) => SegmentMap::load(p)?,
        None => segmenter(&c.seg, c.seg_seed, &input)?.segment(&input)?,
    };
    if !segments.matches(&input) {
        return Err(CliError::Usage(format!(
            "segment map {:?} does not fit input {:?}",
            segments.shape(),
            input.shape()
        )));
    }
    let trace = net.forward(&input)?;
    let class = c.class.unwrap_or_else(|| trace.predicted());
    if class >= net.spec().num_classes {
        return Err(CliError::Usage(format!("class {class} out of range")));
    }
    Ok(Prepared {
        net,
        input,
        segments,
        class,
        trace,
    })
}

/// Files shared by `explain` and `lime`: the per-pixel map, the segments,
/// a heatmap, its overlay and the top-k rendering.
fn write_artifacts(c: &SingleInput, p: &Prepared, map: &Tensor, map_name: &str, ranking: &SegmentRanking) -> Result<()> {
    create_dir(&c.out)?;
    let frame = middle(&p.input, c.frame);
    let rendered = render_explanation(&p.input, &p.segments, ranking, c.top_k.min(ranking.len()))?;
    write_tensor(c.out.join(format!("{map_name}.stf")), map)?;
    p.segments.save(c.out.join("segments.stf"))?;
    let map_frame = frame_of(map, frame)?;
    write_ppm(c.out.join("heatmap.ppm"), &heatmap_image(&map_frame))?;
    write_ppm(c.out.join("overlay.ppm"), &overlay(&frame_of(&p.input, frame)?, &map_frame)?)?;
    write_ppm(c.out.join("explanation.ppm"), &frame_of(&rendered, frame)?)?;
    if rendered.rank() == 4 {
        write_tensor(c.out.join("explanation.stf"), &rendered)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct RankRow {
    segment_id: u32,
    weight: f64,
    rank: usize,
}

#[derive(Serialize)]
struct CoefRow {
    segment_id: u32,
    coefficient: f64,
    rank: usize,
}

fn report_top(class: usize, ranking: &SegmentRanking, k: usize) {
    let top: Vec<String> = ranking.top_k(k).iter().map(|(id, _)| id.to_string()).collect();
    println!("class {class}; top segments: {}", top.join(" "));
}

pub fn explain(a: &ExplainArgs, g: &Globals) -> Result<()> {
    let method: SaliencyMethod = a.method.parse().map_err(|e: segrank::Error| CliError::Usage(e.to_string()))?;
    let p = prepare(&a.common)?;
    let how = match a.aggregation {
        AggregationArg::Sum => Aggregation::Sum,
        AggregationArg::Mean => Aggregation::Mean,
        AggregationArg::Max => Aggregation::Max,
    };
    let saliency = scores_from_trace(&p.net, &p.trace, &p.input, p.class, method)?;
    let ranking = aggregate_with(&saliency, &p.segments, how)?;
    write_artifacts(&a.common, &p, saliency.values(), "saliency", &ranking)?;
    let rows: Vec<RankRow> = ranking
        .entries()
        .iter()
        .enumerate()
        .map(|(i, &(segment_id, weight))| RankRow {
            segment_id,
            weight,
            rank: i + 1,
        })
        .collect();
    write_table(&a.common.out.join("ranking.csv"), &rows, g.json)?;
    report_top(p.class, &ranking, a.common.top_k);
    Ok(())
}

pub fn lime(a: &LimeArgs, g: &Globals) -> Result<()> {
    let p = prepare(&a.common)?;
    let cfg = lime_config(a.samples, &a.lime, g.threads);
    let res = lime_explain(&p.net, &p.input, &p.segments, p.class, &cfg)?;
    let weights: Vec<f32> = p
        .segments
        .labels()
        .iter()
        .map(|&l| res.coefficients[l as usize].max(0.0) as f32)
        .collect();
    let map = Tensor::new(p.segments.shape().to_vec(), weights)?;
    write_artifacts(&a.common, &p, &map, "weights", &res.ranking)?;
    let rows: Vec<CoefRow> = res
        .ranking
        .entries()
        .iter()
        .enumerate()
        .map(|(i, &(segment_id, _))| CoefRow {
            segment_id,
            coefficient: res.coefficients[segment_id as usize],
            rank: i + 1,
        })
        .collect();
    write_table(&a.common.out.join("coefficients.csv"), &rows, g.json)?;
    report_top(p.class, &res.ranking, a.common.top_k);
    Ok(())
}

fn corpus(c: &CorpusArgs, threads: Threads) -> Result<(Network, Vec<EvalItem>)> {
    let net = load_checkpoint(&c.model)?;
    let data = Dataset::open(&c.data)?.load(c.split, c.limit)?;
    let Some(first) = data.first() else {
        return Err(CliError::data(&c.data, "empty split"));
    };
    let seg = segmenter(&c.seg, c.seg_seed, &first.sample.input)?;
    let items = par::map_slice(&data, threads, |d| -> Result<EvalItem> {
        Ok(EvalItem {
            segments: seg.segment(&d.sample.input)?,
            input: d.sample.input.clone(),
            label: Some(d.sample.label),
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok((net, items))
}

pub fn eval_deletion(a: &DeletionArgs, g: &Globals) -> Result<()> {
    let mut rankers: Vec<Ranker> = parse_methods(&a.methods)?.into_iter().map(Ranker::Saliency).collect();
    if a.random_repeats > 0 {
        rankers.push(Ranker::Random {
            seed: a.random_seed,
            repeats: a.random_repeats,
        });
    }
    rankers.extend(a.lime_samples.iter().map(|&n| Ranker::Lime(lime_config(n, &a.lime, Threads::Sequential))));
    if rankers.is_empty() {
        return Err(CliError::Usage("nothing to evaluate".into()));
    }
    let (net, items) = corpus(&a.corpus, g.threads)?;
    let cfg = DeletionConfig {
        orders: Order::BOTH.to_vec(),
        fill: fill(a.lime.fill),
        reference: match a.reference {
            ReferenceArg::Initial => ReferenceMode::InitialPrediction,
            ReferenceArg::Truth => ReferenceMode::GroundTruth,
        },
        skip_misclassified: a.skip_misclassified,
        threads: g.threads,
        chunk_size: a.chunk,
        log: a.log.clone(),
    };
    if let Some(log) = &a.log {
        ensure_parent(log)?;
    }
    let rows = run_deletion(&net, &items, &rankers, &cfg)?;
    for r in &rows {
        println!("{:<24} {:<12} {:.4}  (n = {})", r.method, r.order, r.mean_fraction, r.n);
    }
    write_table(&a.out, &rows, g.json)
}

pub fn eval_topk(a: &TopKArgs, g: &Globals) -> Result<()> {
    let mut candidates: Vec<Ranker> = parse_methods(&a.methods)?.into_iter().map(Ranker::Saliency).collect();
    candidates.extend(a.lime_samples.iter().map(|&n| Ranker::Lime(lime_config(n, &a.lime, Threads::Sequential))));
    if a.random {
        candidates.push(Ranker::Random {
            seed: a.random_seed,
            repeats: 1,
        });
    }
    if candidates.is_empty() {
        return Err(CliError::Usage("nothing to evaluate".into()));
    }
    if a.ks.contains(&0) {
        return Err(CliError::Usage("--ks values must be positive".into()));
    }
    let (net, items) = corpus(&a.corpus, g.threads)?;
    let cfg = TopKConfig {
        ks: a.ks.clone(),
        baseline: lime_config(a.baseline_samples, &a.lime, Threads::Sequential),
        threads: g.threads,
        chunk_size: a.chunk,
        log: a.log.clone(),
    };
    if let Some(log) = &a.log {
        ensure_parent(log)?;
    }
    let rows = run_topk(&net, &items, &candidates, &cfg)?;
    for r in &rows {
        println!("{:<24} k={:<3} {:.4}  (n = {})", r.method, r.k, r.agreement, r.n);
    }
    write_table(&a.out, &rows, g.json)
}

#[derive(Serialize)]
struct BenchRow {
    method: String,
    n_inputs: usize,
    mean_seconds: f64,
}

pub fn bench(a: &BenchArgs, g: &Globals) -> Result<()> {
    let mut methods: Vec<TimedMethod> = parse_methods(&a.methods)?.into_iter().map(TimedMethod::Saliency).collect();
    methods.extend(a.lime_samples.iter().map(|&n| TimedMethod::Lime(n)));
    if methods.is_empty() {
        return Err(CliError::Usage("nothing to time".into()));
    }
    let (net, items) = corpus(&a.corpus, g.threads)?;
    let lime = lime_config(0, &a.lime, Threads::Sequential);
    let results = bench_timing(&net, &items, &methods, &lime, a.warmup)?;
    for r in &results {
        println!(
            "{:<24} {:.6} s  ({} inputs, {:.1} forward, {:.1} backward)",
            r.method, r.mean_seconds, r.n_inputs, r.forward_passes, r.backward_passes
        );
    }
    let rows: Vec<BenchRow> = results
        .into_iter()
        .map(|r| BenchRow {
            method: r.method,
            n_inputs: r.n_inputs,
            mean_seconds: r.mean_seconds,
        })
        .collect();
    write_table(&a.out, &rows, g.json)
}
