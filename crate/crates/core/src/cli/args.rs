use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::transport::{Lambda, SolverConfig, Stabilization};

#[derive(Debug, Parser)]
#[command(
    name = "pot",
    version,
    about = "Prototype-based optimal transport OOD scoring over embedding files",
    after_help = "Exit codes: 0 ok, 2 I/O failure, 3 validation failure, 4 solver failure.\n\
                  Set POT_LOG (e.g. POT_LOG=debug) for diagnostics on stderr."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build class prototypes and write them with a JSON sidecar
    Prototypes(PrototypesArgs),
    /// Score test embeddings with the contrastive transport cost
    Score(ScoreArgs),
    /// Score ID and OOD test sets and report AUROC / FPR95
    Eval(EvalArgs),
    /// Evaluate over a grid of one parameter
    Sweep(SweepArgs),
    /// Generate a synthetic Gaussian-mixture benchmark
    Synth(SynthArgs),
}

/// Where the prototypes come from. Exactly one source may be given.
#[derive(Debug, Clone, Args)]
pub struct SourceArgs {
    /// Training embeddings (binary POTF, or CSV when the name ends in .csv)
    #[arg(long, requires = "train_labels", conflicts_with_all = ["weights", "prototypes"])]
    pub train_features: Option<PathBuf>,
    /// Training labels, one integer per line
    #[arg(long, requires = "train_features")]
    pub train_labels: Option<PathBuf>,
    /// Number of classes (defaults to max label + 1)
    #[arg(long)]
    pub num_classes: Option<usize>,
    /// Final-layer weight matrix, d x C (C x d with --transpose)
    #[arg(long, conflicts_with = "prototypes")]
    pub weights: Option<PathBuf>,
    /// The weight file is stored C x d
    #[arg(long, requires = "weights")]
    pub transpose: bool,
    /// Prototypes written by `pot prototypes` (reads the .json sidecar too)
    #[arg(long)]
    pub prototypes: Option<PathBuf>,
    /// CSV inputs carry one header line
    #[arg(long)]
    pub skip_header: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StabilizationArg {
    Plain,
    LogDomain,
}

#[derive(Debug, Clone, Args)]
pub struct SolverArgs {
    /// Fixed entropic coefficient
    #[arg(long, conflicts_with = "lambda_relative")]
    pub lambda: Option<f64>,
    /// Entropic coefficient as a multiple of the median ground cost of each batch
    #[arg(long, default_value_t = 0.5)]
    pub lambda_relative: f64,
    #[arg(long, value_enum, default_value_t = StabilizationArg::LogDomain)]
    pub stabilization: StabilizationArg,
    /// Marginal max-norm tolerance
    #[arg(long, default_value_t = 1e-8)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 10_000)]
    pub max_iters: usize,
}

impl SolverArgs {
    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            lambda: match self.lambda {
                Some(v) => Lambda::Fixed(v),
                None => Lambda::MedianRelative(self.lambda_relative),
            },
            max_iterations: self.max_iters,
            tolerance: self.tolerance,
            stabilization: match self.stabilization {
                StabilizationArg::Plain => Stabilization::Plain,
                StabilizationArg::LogDomain => Stabilization::LogDomain,
            },
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct ScoringArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// In-distribution test embeddings
    #[arg(long)]
    pub test_id: PathBuf,
    /// Out-of-distribution test embeddings
    #[arg(long)]
    pub test_ood: Option<PathBuf>,
    /// Extrapolation coefficient for virtual outliers (> 1)
    #[arg(long, default_value_t = 2.0)]
    pub omega: f64,
    #[arg(long, default_value_t = 512)]
    pub batch_size: usize,
    /// Seed of the batch shuffle
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// L2-normalize prototypes and test embeddings
    #[arg(long)]
    pub normalize: bool,
}

#[derive(Debug, Args)]
pub struct PrototypesArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[arg(long)]
    pub normalize: bool,
    /// Output prototype file; the sidecar goes to <out>.json
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[command(flatten)]
    pub scoring: ScoringArgs,
    /// Output CSV (stdout when omitted)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    /// Contrastive transport cost T - T*
    Pot,
    /// Transport cost to the prototypes only
    Transport,
    /// Maximum softmax probability; test files hold logits
    Msp,
    /// Log-sum-exp of logits; test files hold logits
    Energy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Json,
    Csv,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub scoring: ScoringArgs,
    #[arg(long, value_enum, default_value_t = Method::Pot)]
    pub method: Method,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ReportFormat::Json)]
    pub format: ReportFormat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepParam {
    Lambda,
    LambdaRelative,
    Omega,
    BatchSize,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub scoring: ScoringArgs,
    #[arg(long, value_enum, default_value_t = Method::Pot)]
    pub method: Method,
    /// Parameter to vary
    #[arg(long, value_enum)]
    pub param: SweepParam,
    /// Comma-separated grid values
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Far,
    Near,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// JSON synthetic spec; overrides --preset
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Preset::Far)]
    pub preset: Preset,
    /// Overrides the seed of the spec or preset
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
}
