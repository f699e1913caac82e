mod commands;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use multiplex_forge::Error;

pub const THREADS_ENV: &str = "MULTIPLEX_FORGE_THREADS";

#[derive(Parser)]
#[command(name = "multiplex-forge", version, about = "Adversarial brain multiplex prediction pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labelled synthetic source/target dataset.
    Synth(SynthArgs),
    /// Train a translator/discriminator pair and write a checkpoint.
    Train(TrainArgs),
    /// MAE of a trained translator against the KNN baseline.
    Evaluate(EvaluateArgs),
    /// Cross-validated classification over the n_f sweep.
    Classify(ClassifyArgs),
    /// Top discriminative connections from a classification report.
    Markers(MarkersArgs),
    /// Finite-difference check of every layer kind and both models.
    Gradcheck(GradcheckArgs),
}

#[derive(Clone, Copy, ValueEnum)]
pub enum TargetMapArg {
    Mixed,
    Identity,
}

#[derive(Args)]
pub struct SynthArgs {
    /// Output directory (manifest plus one CSV per network).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub subjects: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Mean source offset between classes on the signal edges.
    #[arg(long)]
    pub delta: Option<f64>,
    /// Target offset on edges touching a signal node.
    #[arg(long)]
    pub target_delta: Option<f64>,
    #[arg(long)]
    pub signal_nodes: Option<usize>,
    #[arg(long)]
    pub signal_spread: Option<f64>,
    #[arg(long)]
    pub positive_fraction: Option<f64>,
    #[arg(long, value_enum)]
    pub target_map: Option<TargetMapArg>,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum GeneratorLossArg {
    Saturating,
    Nonsaturating,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum PairingArg {
    Source,
    Target,
}

/// Optimizer flags shared by `train` and `classify`.
#[derive(Args)]
pub struct TrainFlags {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lambda_l1: Option<f64>,
    #[arg(long)]
    pub lr_t: Option<f64>,
    #[arg(long)]
    pub lr_d: Option<f64>,
    /// Discriminator steps per translator step; 0 trains on L1 alone.
    #[arg(long)]
    pub d_steps: Option<usize>,
    #[arg(long, value_enum)]
    pub generator_loss: Option<GeneratorLossArg>,
    /// Network that conditions the discriminator.
    #[arg(long, value_enum)]
    pub pairing: Option<PairingArg>,
}

#[derive(Args)]
pub struct TrainArgs {
    /// Dataset manifest or the directory holding it.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for the checkpoint, trace and run report.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Args)]
pub struct EvaluateArgs {
    /// Subjects to evaluate on.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Reference set for the KNN baseline; defaults to `--data`.
    #[arg(long)]
    pub train_data: Option<PathBuf>,
    /// K values, as `lo..hi` (inclusive) or a comma list.
    #[arg(long, default_value = "2..10")]
    pub knn_k: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct ClassifyArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Repeatable; all five variants when omitted.
    #[arg(long = "variant")]
    pub variants: Vec<String>,
    /// `start:stop:step`, stop inclusive.
    #[arg(long, default_value = "310:350:10")]
    pub nf_range: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 2)]
    pub folds: usize,
    /// Build training-fold multiplexes from ground-truth targets instead of
    /// translator predictions.
    #[arg(long)]
    pub truth_train_features: bool,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Args)]
pub struct MarkersArgs {
    /// `classify.json` written by `classify`, or its directory.
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long, default_value = "predicted_multiplex")]
    pub variant: String,
    /// Defaults to the middle of the report's n_f sweep.
    #[arg(long)]
    pub n_f: Option<usize>,
    #[arg(long, default_value_t = 10)]
    pub top: usize,
    /// Text file with one ROI name per line, in node order.
    #[arg(long)]
    pub roi_names: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 6)]
    pub n: usize,
    #[arg(long, default_value_t = 5)]
    pub seeds: u64,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    /// Optional CSV of the per-check rows.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Scale analytic gradients by `1 + x` (negative control).
    #[arg(long, hide = true, default_value_t = 0.0)]
    pub inject_fault: f64,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Io { path: PathBuf, source: std::io::Error },
    Numeric(String),
    Core(Error),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Io { path, source } => write!(f, "I/O error on {}: {source}", path.display()),
            CliError::Numeric(m) => write!(f, "numeric failure: {m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Io { .. } => 3,
            CliError::Numeric(_) => 5,
            CliError::Core(e) => core_exit_code(e),
        }
    }
}

fn core_exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::KTooLarge { .. } => 2,
        Error::Io { .. } => 3,
        Error::ShapeMismatch(_)
        | Error::SizeMismatch { .. }
        | Error::Domain(_)
        | Error::EmptyTrainingSet
        | Error::EmptyDataset
        | Error::MissingTarget(_)
        | Error::SingleClass
        | Error::InsufficientClassCount { .. }
        | Error::Parse { .. }
        | Error::Asymmetry { .. }
        | Error::NonSquare { .. }
        | Error::DuplicateId(_)
        | Error::Format(_)
        | Error::ChecksumMismatch { .. } => 4,
        _ => 5,
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn thread_count() -> CliResult<usize> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(t) if t >= 1 => Ok(t),
            _ => Err(CliError::Usage(format!("{THREADS_ENV} must be a positive integer, got {v:?}"))),
        },
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let threads = thread_count()?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Usage(format!("cannot start {threads} worker threads: {e}")))?;
    match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Train(a) => commands::train(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::Classify(a) => commands::classify(&a, threads),
        Command::Markers(a) => commands::markers(&a),
        Command::Gradcheck(a) => commands::gradcheck(&a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
