use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use selpred_core::confidence::{BaldConvention, EstimatorKind};
use selpred_core::defaults::{format_grid, BUCKET_BOUNDARIES, CER_WEIGHTS, ECE_BINS, GAMBLER_REWARDS, MC_RUNS};
use selpred_core::selective::DegeneratePolicy;

/// Help footer listing the built-in experiment defaults.
pub fn defaults_help() -> String {
    format!(
        "Defaults:\n  N = {MC_RUNS} MC dropout runs\n  M = {ECE_BINS} ECE bins\n  CER weight grid λ ∈ {}\n  Gambler reward grid r ∈ {}\n  frequency bucket boundaries {}",
        format_grid(&CER_WEIGHTS),
        format_grid(&GAMBLER_REWARDS),
        format_grid(&BUCKET_BOUNDARIES),
    )
}

#[derive(Debug, Parser)]
#[command(
    name = "selpred",
    version,
    about = "Selective-prediction evaluation for multi-label classifiers",
    after_help = defaults_help()
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a prediction log and list every problem found.
    Validate(ValidateArgs),
    /// Compute per-label and macro AURCC, RPP, refinement and F1.
    Eval(EvalArgs),
    /// Emit risk–coverage curves.
    Curve(CurveArgs),
    /// Check analytic loss gradients against finite differences.
    Losscheck(LosscheckArgs),
    /// Average refinement within label-frequency buckets.
    Bucket(BucketArgs),
    /// Generate a synthetic prediction log.
    Simulate(SimulateArgs),
    /// Print the built-in defaults as JSON.
    Config,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EstimatorArg {
    Sr,
    Smp,
    Pv,
    Bald,
}

impl From<EstimatorArg> for EstimatorKind {
    fn from(a: EstimatorArg) -> Self {
        match a {
            EstimatorArg::Sr => EstimatorKind::Sr,
            EstimatorArg::Smp => EstimatorKind::Smp,
            EstimatorArg::Pv => EstimatorKind::Pv,
            EstimatorArg::Bald => EstimatorKind::Bald,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Default)]
pub enum BaldConventionArg {
    #[default]
    Standard,
    PaperLiteral,
}

impl From<BaldConventionArg> for BaldConvention {
    fn from(a: BaldConventionArg) -> Self {
        match a {
            BaldConventionArg::Standard => BaldConvention::Standard,
            BaldConventionArg::PaperLiteral => BaldConvention::PaperLiteral,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Jsonl,
    Svg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Default)]
pub enum DegenerateArg {
    /// Leave labels with undefined refinement out of the macro mean.
    #[default]
    Exclude,
    /// Count them as zero.
    Zero,
}

impl From<DegenerateArg> for DegeneratePolicy {
    fn from(a: DegenerateArg) -> Self {
        match a {
            DegenerateArg::Exclude => DegeneratePolicy::Exclude,
            DegenerateArg::Zero => DegeneratePolicy::IncludeAsZero,
        }
    }
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub input: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct EstimatorArgs {
    #[arg(long, value_enum, default_value = "sr")]
    pub estimator: EstimatorArg,
    #[arg(long, value_enum, default_value = "standard")]
    pub bald_convention: BaldConventionArg,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[command(flatten)]
    pub estimator: EstimatorArgs,
    /// Multiplier applied to reported AURCC and RPP (100 for percentage tables).
    #[arg(long, default_value_t = 1.0)]
    pub scale: f64,
    #[arg(long, default_value = "selpred-out")]
    pub out: PathBuf,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "csv,jsonl")]
    pub format: Vec<Format>,
    /// How labels with undefined refinement enter the macro mean.
    #[arg(long, value_enum, default_value = "exclude")]
    pub degenerate_rf: DegenerateArg,
    /// Fail unless every record carries exactly this many MC samples.
    #[arg(long, value_name = "N")]
    pub expect_samples: Option<usize>,
}

#[derive(Debug, Args)]
pub struct CurveArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[command(flatten)]
    pub estimator: EstimatorArgs,
    /// Label name; all labels when omitted.
    #[arg(long)]
    pub label: Option<String>,
    /// Output directory; the curve CSV goes to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "csv")]
    pub format: Vec<Format>,
}

#[derive(Debug, Args)]
pub struct LosscheckArgs {
    #[arg(long, default_value_t = 100)]
    pub batches: usize,
    #[arg(long, default_value_t = 0x5e1ec7)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-6)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
    /// Corrupts one analytic gradient entry per batch (negative control).
    #[arg(long, hide = true)]
    pub inject_fault: bool,
}

#[derive(Debug, Args)]
pub struct BucketArgs {
    /// One prediction log per configuration; the header's meta `loss` and
    /// `model` keys tag each result.
    #[arg(long, required = true)]
    pub input: Vec<PathBuf>,
    /// CSV with `label,fraction` rows giving each label's training frequency.
    #[arg(long)]
    pub buckets: PathBuf,
    #[arg(long, value_delimiter = ',')]
    pub boundaries: Option<Vec<f64>>,
    /// Estimators to evaluate; all applicable ones when omitted.
    #[arg(long, value_enum, value_delimiter = ',')]
    pub estimator: Vec<EstimatorArg>,
    #[arg(long, value_enum, default_value = "standard")]
    pub bald_convention: BaldConventionArg,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Output JSONL file.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub records: usize,
    #[arg(long, default_value_t = 14)]
    pub labels: usize,
    /// MC samples per record.
    #[arg(long, default_value_t = MC_RUNS)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Logit temperature; above 1 is overconfident, below 1 underconfident.
    #[arg(long, default_value_t = 1.0)]
    pub temperature: f64,
    /// Half-width of uniform MC sample noise.
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    /// Per-label mean latent probability.
    #[arg(long, value_delimiter = ',')]
    pub base_rates: Option<Vec<f64>>,
    /// Written to the header as meta `loss`.
    #[arg(long)]
    pub loss_tag: Option<String>,
    /// Written to the header as meta `model`.
    #[arg(long)]
    pub model_tag: Option<String>,
}
