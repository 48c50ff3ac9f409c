use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dflow_core::data::Split;
use dflow_core::network::parse_colors;
use dflow_core::{FlowColor, Preset};

#[derive(Debug, Parser)]
#[command(name = "dflow", version, about = "Dual-flow ConvMGU segmentation experiments")]
pub struct Cli {
    /// Increase log verbosity (-v debug, -vv trace).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    /// Only log warnings and errors.
    #[arg(short, long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with a manifest.
    Synth(SynthArgs),
    /// Train a network and write its checkpoint and learning curve.
    Train(TrainArgs),
    /// Write probability maps and masks predicted by a checkpoint.
    Infer(InferArgs),
    /// Score a checkpoint on one split.
    Eval(EvalArgs),
    /// Run a classical thresholding method over a dataset.
    Baseline(BaselineArgs),
    /// Print analytic and constructed parameter counts.
    Params(ParamsArgs),
    /// Compare analytic gradients with finite differences on a tiny network.
    Gradcheck(GradcheckArgs),
    /// Train the seven colour/flow configurations, one curve each.
    Ablate(TrainArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON file of settings; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; nothing is written outside it.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Flows {
    Single,
    Double,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum LossArg {
    Bce,
    Focal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Mean,
    Gaussian,
    Dtransform,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DownsampleArg {
    Box,
    Nearest,
}

pub type Colors = (FlowColor, Option<FlowColor>);

fn colors(s: &str) -> Result<Colors, String> {
    parse_colors(s).map_err(|e| e.to_string())
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Start from a named model size.
    #[arg(long)]
    pub preset: Option<Preset>,
    /// Frames of history before the segmented frame.
    #[arg(long = "k")]
    pub k: Option<usize>,
    /// Feature maps per flow.
    #[arg(long)]
    pub channels: Option<usize>,
    #[arg(long, value_enum)]
    pub flows: Option<Flows>,
    /// Colour space of each flow, e.g. `rgb+yuv` or `yuv`.
    #[arg(long, value_parser = colors)]
    pub colors: Option<Colors>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: Common,
    /// Number of training sequences.
    #[arg(long)]
    pub train: Option<usize>,
    /// Number of validation sequences.
    #[arg(long)]
    pub val: Option<usize>,
    /// Number of test sequences.
    #[arg(long)]
    pub test: Option<usize>,
    /// Frames per sequence.
    #[arg(long)]
    pub len: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Dataset directory or manifest file.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub loss: Option<LossArg>,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Resume from this checkpoint.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Downsample frames and labels by four on load.
    #[arg(long, value_enum)]
    pub downsample: Option<DownsampleArg>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Restrict to one split.
    #[arg(long)]
    pub split: Option<Split>,
    /// Restrict to one source id.
    #[arg(long)]
    pub source: Option<String>,
    #[arg(long, value_enum)]
    pub downsample: Option<DownsampleArg>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<Split>,
    #[arg(long, value_enum)]
    pub downsample: Option<DownsampleArg>,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
    /// Odd window size of the local statistics.
    #[arg(long)]
    pub window: Option<usize>,
    /// Offset subtracted from the local mean.
    #[arg(long = "offset-c", allow_negative_numbers = true)]
    pub offset_c: Option<f64>,
    /// Gaussian window standard deviation.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Fraction of the maximum distance kept by the distance transform.
    #[arg(long = "dt-fraction")]
    pub dt_fraction: Option<f64>,
    #[arg(long)]
    pub split: Option<Split>,
}

#[derive(Debug, Args)]
pub struct ParamsArgs {
    #[command(flatten)]
    pub common: Common,
    /// 2D kernel size m.
    #[arg(long)]
    pub kernel: Option<u64>,
    /// Input channels γ.
    #[arg(long)]
    pub gamma: Option<u64>,
    /// Feature maps κ.
    #[arg(long)]
    pub kappa: Option<u64>,
    /// Output channels n.
    #[arg(long)]
    pub hidden: Option<u64>,
    /// 3D shortcut kernel size f.
    #[arg(long = "shortcut-kernel")]
    pub shortcut_kernel: Option<u64>,
    /// Sets both κ and n.
    #[arg(long)]
    pub channels: Option<u64>,
    #[arg(long = "k")]
    pub k: Option<u64>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, value_enum)]
    pub loss: Option<LossArg>,
    /// Height and width of the synthetic sample.
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub tolerance: Option<f64>,
    #[arg(long, hide = true)]
    pub corrupt_backward: bool,
}
