use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "cie",
    version,
    about = "Score chain-of-thought faithfulness by comparing traced circuits with the written reasoning",
    arg_required_else_help = true
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate labeled synthetic traces and a ground-truth sidecar.
    Synth(SynthArgs),
    /// Score and select informative tokens for every sentence.
    Select(SelectArgs),
    /// Restrict each sentence's circuit to its selected tokens.
    TraceRestrict(RestrictArgs),
    /// Train a detector and calibrate its threshold.
    Train(TrainArgs),
    /// Score traces with a trained detector.
    Score(ScoreArgs),
    /// Evaluate a detector on labeled traces.
    Eval(EvalArgs),
    /// Cross-domain relative transfer ratios.
    Transfer(TransferArgs),
    /// Correlate discrepancy types with the feature and structure terms.
    Analyze(AnalyzeArgs),
    /// Export the optimal coupling of every trace.
    Couplings(CouplingsArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// Threads for trace-parallel stages.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub workers: u64,
}

impl Common {
    pub fn workers(&self) -> usize {
        self.workers as usize
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// JSON generator config; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub n_traces: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub noise_std: Option<f64>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct SelectionFlags {
    /// JSON selection config; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long = "lambda")]
    pub lambda_nec: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub redundancy: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub selection: SelectionFlags,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct RestrictArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub selection: SelectionFlags,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// JSON training config; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Checkpoint path; the tensor manifest goes to `<out>.json`.
    #[arg(long)]
    pub out: PathBuf,
    /// Training log CSV, defaults to `<out>.log.csv`.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Start from the settings tuned for the synthetic generator.
    #[arg(long)]
    pub synthetic_preset: bool,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub margin: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub lambda_edge: Option<f64>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub detector: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// CSV of per-trace scores.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub detector: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long)]
    pub per_trace: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Metric {
    F1,
    Accuracy,
    Auc,
}

#[derive(Debug, Args)]
pub struct TransferArgs {
    /// One checkpoint per domain, in domain order.
    #[arg(long, value_delimiter = ',', required = true)]
    pub detectors: Vec<PathBuf>,
    /// One test set per domain: a JSONL file or a directory holding `test.jsonl`.
    #[arg(long, value_delimiter = ',', required = true)]
    pub data_dirs: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t = Metric::F1)]
    pub metric: Metric,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub detector: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct CouplingsArgs {
    #[arg(long)]
    pub detector: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Only export these trace ids.
    #[arg(long, value_delimiter = ',')]
    pub ids: Vec<String>,
    #[command(flatten)]
    pub common: Common,
}
