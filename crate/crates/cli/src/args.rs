use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Superpixel explanations for small CNNs: data generation, training,
/// segmentation, saliency, LIME and evaluation.
#[derive(Debug, Parser)]
#[command(name = "segrank", version, propagate_version = true)]
pub struct Cli {
    /// Plain `key = value` file; keys are long flag names. Flags given on
    /// the command line take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Worker threads for corpus-parallel work (0 = all cores).
    /// Defaults to all cores, or 1 for `bench`.
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,

    /// Also write every CSV as a JSON array next to it.
    #[arg(long, global = true)]
    pub json: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with train and validation splits.
    Datagen(DatagenArgs),
    /// Train a network on a generated dataset.
    Train(TrainArgs),
    /// Segment one image (PPM or STF1) or clip (STF1) into superpixels.
    Segment(SegmentArgs),
    /// Score pixels with a saliency method and rank superpixels.
    Explain(ExplainArgs),
    /// Rank superpixels with LIME.
    Lime(LimeArgs),
    /// Superpixel deletion benchmark over a dataset split.
    EvalDeletion(DeletionArgs),
    /// Top-k agreement with a LIME baseline over a dataset split.
    EvalTopk(TopKArgs),
    /// Time superpixel weighting per method.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DataKind {
    /// 3x64x64 images, one shape each, labelled by shape.
    #[value(name = "shapes-2d")]
    Shapes2d,
    /// 3x16x32x32 clips, one moving shape, labelled by direction.
    #[value(name = "moving-shapes-3d")]
    MovingShapes3d,
    /// 3x64x64 images with two shapes of different classes.
    #[value(name = "two-shape-2d")]
    TwoShape2d,
}

impl DataKind {
    pub fn name(self) -> &'static str {
        match self {
            DataKind::Shapes2d => "shapes-2d",
            DataKind::MovingShapes3d => "moving-shapes-3d",
            DataKind::TwoShape2d => "two-shape-2d",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Algo {
    /// QuickShift for images, SLIC for clips.
    Auto,
    Slic,
    Quickshift,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FillArg {
    Median,
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RankByArg {
    Signed,
    Absolute,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AggregationArg {
    Sum,
    Mean,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReferenceArg {
    /// The class the network predicts for the intact input.
    Initial,
    /// The dataset label.
    Truth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
}

impl SplitArg {
    pub fn name(self) -> &'static str {
        match self {
            SplitArg::Train => "train",
            SplitArg::Val => "val",
        }
    }
}

/// Superpixel parameters shared by every command that segments.
#[derive(Debug, Clone, Args)]
pub struct SegParams {
    #[arg(long, value_enum, default_value_t = Algo::Auto)]
    pub algo: Algo,
    /// SLIC: requested number of segments.
    #[arg(long, default_value_t = 50)]
    pub k: usize,
    /// SLIC: compactness.
    #[arg(long, default_value_t = 20.0)]
    pub m: f64,
    /// SLIC: k-means iterations.
    #[arg(long, default_value_t = 10)]
    pub slic_iters: usize,
    /// SLIC: segments smaller than this fraction of N/k are merged.
    #[arg(long, default_value_t = 0.25)]
    pub min_size_factor: f64,
    /// QuickShift: colour weight against position.
    #[arg(long, default_value_t = 0.3)]
    pub ratio: f64,
    /// QuickShift: density kernel width.
    #[arg(long, default_value_t = 3.0)]
    pub kernel_size: f64,
    /// QuickShift: longest link.
    #[arg(long, default_value_t = 6.0)]
    pub max_dist: f64,
}

/// A trained checkpoint and a dataset split to evaluate on.
#[derive(Debug, Clone, Args)]
pub struct CorpusArgs {
    /// Checkpoint directory written by `train`.
    #[arg(long, value_name = "DIR")]
    pub model: PathBuf,
    /// Dataset directory written by `datagen`.
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitArg::Val)]
    pub split: SplitArg,
    /// Use only the first N inputs of the split.
    #[arg(long, value_name = "N")]
    pub limit: Option<usize>,
    #[command(flatten)]
    pub seg: SegParams,
    #[arg(long, default_value_t = 0)]
    pub seg_seed: u64,
}

#[derive(Debug, Args)]
pub struct DatagenArgs {
    #[arg(long, value_enum, default_value_t = DataKind::Shapes2d)]
    pub kind: DataKind,
    #[arg(long, default_value_t = 2000)]
    pub n_train: usize,
    #[arg(long, default_value_t = 400)]
    pub n_val: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write each 2D input as a PPM.
    #[arg(long)]
    pub ppm: bool,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory written by `datagen`.
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    /// Default: 15 for images, 25 for clips.
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, default_value_t = 8)]
    pub batch: usize,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f32,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f32,
    /// Seeds weight initialisation and shuffling.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Stop once validation accuracy reaches this value.
    #[arg(long)]
    pub target_accuracy: Option<f32>,
    /// Checkpoint directory; per-epoch metrics go to `metrics.csv` inside.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    #[arg(long = "in", value_name = "FILE")]
    pub input: PathBuf,
    #[command(flatten)]
    pub seg: SegParams,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Segment map (STF1, with an `.nseg` sidecar).
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Boundary preview PPM. Default: `--out` with a `.ppm` extension.
    #[arg(long, value_name = "FILE")]
    pub preview: Option<PathBuf>,
}

/// Inputs shared by `explain` and `lime`.
#[derive(Debug, Args)]
pub struct SingleInput {
    /// Checkpoint directory written by `train`.
    #[arg(long, value_name = "DIR")]
    pub model: PathBuf,
    #[arg(long = "in", value_name = "FILE")]
    pub input: PathBuf,
    /// Class to explain. Default: the predicted class.
    #[arg(long)]
    pub class: Option<usize>,
    /// Precomputed segment map; segments the input when absent.
    #[arg(long, value_name = "FILE")]
    pub segments: Option<PathBuf>,
    #[command(flatten)]
    pub seg: SegParams,
    #[arg(long, default_value_t = 0)]
    pub seg_seed: u64,
    /// Segments kept in the rendered explanation.
    #[arg(long, default_value_t = 5)]
    pub top_k: usize,
    /// Frame shown in the PPM outputs of clips. Default: the middle one.
    #[arg(long)]
    pub frame: Option<usize>,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[command(flatten)]
    pub common: SingleInput,
    #[arg(long, default_value = "grad-cam")]
    pub method: String,
    #[arg(long, value_enum, default_value_t = AggregationArg::Sum)]
    pub aggregation: AggregationArg,
}

#[derive(Debug, Clone, Args)]
pub struct LimeParams {
    #[arg(long, default_value_t = 0.25)]
    pub kernel_width: f64,
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 0)]
    pub lime_seed: u64,
    /// Perturbed inputs per evaluation batch.
    #[arg(long, default_value_t = 16)]
    pub batch: usize,
    #[arg(long, value_enum, default_value_t = FillArg::Median)]
    pub fill: FillArg,
    #[arg(long, value_enum, default_value_t = RankByArg::Signed)]
    pub rank_by: RankByArg,
}

#[derive(Debug, Args)]
pub struct LimeArgs {
    #[command(flatten)]
    pub common: SingleInput,
    #[arg(long, default_value_t = 1000)]
    pub samples: usize,
    #[command(flatten)]
    pub lime: LimeParams,
}

#[derive(Debug, Args)]
pub struct DeletionArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Saliency methods, comma separated, or `all`.
    #[arg(long, value_delimiter = ',', default_value = "all")]
    pub methods: Vec<String>,
    /// Random rankings averaged per input; 0 leaves the random baseline out.
    #[arg(long, default_value_t = 10)]
    pub random_repeats: usize,
    #[arg(long, default_value_t = 0)]
    pub random_seed: u64,
    /// LIME sample counts to include as rankers.
    #[arg(long, value_delimiter = ',')]
    pub lime_samples: Vec<usize>,
    #[command(flatten)]
    pub lime: LimeParams,
    #[arg(long, value_enum, default_value_t = ReferenceArg::Initial)]
    pub reference: ReferenceArg,
    /// Leave out inputs the network gets wrong.
    #[arg(long)]
    pub skip_misclassified: bool,
    /// Inputs evaluated between log flushes.
    #[arg(long, default_value_t = 32)]
    pub chunk: usize,
    /// Per-input log; a rerun resumes from it.
    #[arg(long, value_name = "FILE")]
    pub log: Option<PathBuf>,
    /// Summary CSV: `method,order,mean_fraction,n`.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TopKArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Saliency methods, comma separated, or `all`.
    #[arg(long, value_delimiter = ',', default_value = "all")]
    pub methods: Vec<String>,
    /// LIME sample counts to compare against the baseline.
    #[arg(long, value_delimiter = ',')]
    pub lime_samples: Vec<usize>,
    /// Include random rankings as a candidate.
    #[arg(long)]
    pub random: bool,
    #[arg(long, default_value_t = 0)]
    pub random_seed: u64,
    #[arg(long, value_delimiter = ',', default_value = "1,3,5")]
    pub ks: Vec<usize>,
    /// Samples of the reference LIME run.
    #[arg(long, default_value_t = 1000)]
    pub baseline_samples: usize,
    #[command(flatten)]
    pub lime: LimeParams,
    #[arg(long, default_value_t = 16)]
    pub chunk: usize,
    #[arg(long, value_name = "FILE")]
    pub log: Option<PathBuf>,
    /// Summary CSV: `method,k,agreement,n`.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long, value_delimiter = ',', default_value = "all")]
    pub methods: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "100")]
    pub lime_samples: Vec<usize>,
    #[command(flatten)]
    pub lime: LimeParams,
    /// Untimed inputs run first.
    #[arg(long, default_value_t = 2)]
    pub warmup: usize,
    /// Timing CSV: `method,n_inputs,mean_seconds`.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}
