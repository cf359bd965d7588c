use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "orthocav", version, about = "Fit, orthogonalize, evaluate and steer concept activation vectors")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic activations, labels and ground-truth directions.
    Gen(GenArgs),
    /// Fit one baseline CAV per concept.
    Fit(FitArgs),
    /// Jointly fine-tune CAVs under the orthogonality penalty.
    Orthogonalize(OrthArgs),
    /// Cosine matrix, orthogonality and AUROC for a bundle.
    Metrics(MetricsArgs),
    /// Edit activations along a concept's CAV and report collateral changes.
    Steer(SteerArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// TOML generator configuration.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out_activations: PathBuf,
    #[arg(long)]
    pub out_labels: PathBuf,
    #[arg(long)]
    pub out_truth: PathBuf,
    /// Override the seed from the config file.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Pattern,
    Ridge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerArg {
    Gd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Insert,
    Remove,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub activations: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Held-out activations for reported metrics (default: training data).
    #[arg(long, requires = "eval_labels")]
    pub eval_activations: Option<PathBuf>,
    #[arg(long, requires = "eval_activations")]
    pub eval_labels: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub eval: EvalArgs,
    /// TOML file supplying any flag below; command-line values win.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub method: Option<Method>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct OrthArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub eval: EvalArgs,
    /// TOML file supplying any flag below; command-line values win.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Start from this bundle's CAVs.
    #[arg(long, conflicts_with = "random_seed")]
    pub init: Option<PathBuf>,
    /// Start from seeded random unit CAVs.
    #[arg(long)]
    pub random_seed: Option<u64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    /// Target pairs as `a:b,c:d` (concept names or indices).
    #[arg(long)]
    pub pairs: Option<String>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub eval_every: Option<usize>,
    #[arg(long)]
    pub min_avg_auroc: Option<f64>,
    #[arg(long)]
    pub max_avg_drop: Option<f64>,
    #[arg(long)]
    pub max_single_drop: Option<f64>,
    #[arg(long, value_enum)]
    pub optimizer: Option<OptimizerArg>,
    #[arg(long)]
    pub out: PathBuf,
    /// Long-format metric history (epoch,metric,concept,value).
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Also write the report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SteerArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// TOML file supplying any flag below; command-line values win.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Concept name to steer.
    #[arg(long)]
    pub target: Option<String>,
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    /// Insertion step along the unit CAV.
    #[arg(long, conflicts_with = "sweep")]
    pub step: Option<f64>,
    /// Comma-separated insertion steps; one output file per step.
    #[arg(long)]
    pub sweep: Option<String>,
    /// Removal level (default: mean projection of the target's negatives).
    #[arg(long)]
    pub tau: Option<f64>,
    /// Edited activations (a sweep appends `_step<i>` before the extension).
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the delta report here.
    #[arg(long)]
    pub report: Option<PathBuf>,
}
