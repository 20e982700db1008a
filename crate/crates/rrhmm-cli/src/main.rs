//! Command-line front end for the spectral RR-HMM pipeline.
//!
//! The pipeline is file-based so each stage can be cached and re-run:
//! `gen` writes datasets, `learn` turns a dataset (or cached moments) into a
//! model file, `eval` scores a model against a ground-truth model, `filter`
//! and `simulate` run inference, and `experiment` produces the synthetic
//! recovery CSVs. Every run writes a manifest next to its outputs recording
//! the resolved arguments; re-running the recorded argv reproduces the
//! outputs byte-for-byte for the discrete pipelines.

mod commands;
mod manifest;
mod source;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

/// Errors split by exit code: usage problems exit 2, runtime problems 1.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl From<rrhmm::Error> for CliError {
    fn from(e: rrhmm::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

pub type CliResult = Result<(), CliError>;

#[derive(Parser)]
#[command(
    name = "rrhmm",
    version,
    about = "Spectral learning and inference for reduced-rank HMMs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a dataset (triples or a sequence) from a model.
    Gen(GenArgs),
    /// Estimate moments and learn an observable model.
    Learn(LearnArgs),
    /// Score a learned model against a ground-truth model.
    Eval(EvalArgs),
    /// Filter an observation stream, writing a per-step trace.
    Filter(FilterArgs),
    /// Simulate observations from a learned model.
    Simulate(SimulateArgs),
    /// Run a named synthetic experiment.
    Experiment(ExperimentArgs),
}

#[derive(Clone, Copy, ValueEnum)]
pub enum GenMode {
    Restart,
    Sliding,
}

#[derive(Args)]
pub struct GenArgs {
    /// Builtin name (example1, example2, example3, polygon) or a model JSON
    /// file.
    #[arg(long)]
    pub model: String,
    /// State count for the polygon builtin.
    #[arg(long)]
    pub m: Option<usize>,
    /// Number of observation triples to draw.
    #[arg(long)]
    pub n: Option<usize>,
    /// How triples are drawn.
    #[arg(long, value_enum, default_value = "restart")]
    pub mode: GenMode,
    /// Emit one sequence of this length instead of triples.
    #[arg(long)]
    pub length: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: std::path::PathBuf,
}

#[derive(Args)]
pub struct LearnArgs {
    /// Dataset CSV (triples, sequence, or continuous points).
    #[arg(long)]
    pub data: Option<std::path::PathBuf>,
    /// Cached moments JSON, replacing --data.
    #[arg(long)]
    pub moments: Option<std::path::PathBuf>,
    /// Model rank; chosen from the spectrum when omitted.
    #[arg(long)]
    pub k: Option<usize>,
    /// Relative singular-value threshold for automatic rank selection.
    #[arg(long, default_value_t = 1e-6)]
    pub threshold: f64,
    /// Stacking width for sequence datasets.
    #[arg(long, default_value_t = 1)]
    pub window: usize,
    /// Alphabet size; inferred from the data when omitted.
    #[arg(long)]
    pub alphabet: Option<usize>,
    /// Per-step normalizer floor carried into inference.
    #[arg(long, default_value_t = 1e-12)]
    pub floor: f64,
    /// Kernel center count for continuous datasets.
    #[arg(long, default_value_t = 25)]
    pub centers: usize,
    /// Kernel bandwidth for continuous datasets.
    #[arg(long, default_value_t = 1.0)]
    pub bandwidth: f64,
    /// Also write the estimated moments for later reuse.
    #[arg(long)]
    pub save_moments: Option<std::path::PathBuf>,
    #[arg(long)]
    pub out: std::path::PathBuf,
}

#[derive(Args)]
pub struct EvalArgs {
    /// Learned model JSON.
    #[arg(long)]
    pub model: std::path::PathBuf,
    /// Ground-truth model: builtin name or model JSON.
    #[arg(long)]
    pub truth: String,
    /// State count for the polygon builtin.
    #[arg(long)]
    pub m: Option<usize>,
    /// Sequence length for the exhaustive L1 comparison.
    #[arg(long, default_value_t = 3)]
    pub t: usize,
    /// Write metrics and the eigenvalue table as CSV next to this path.
    #[arg(long)]
    pub out: Option<std::path::PathBuf>,
}

#[derive(Args)]
pub struct FilterArgs {
    #[arg(long)]
    pub model: std::path::PathBuf,
    /// Sequence CSV or continuous points CSV.
    #[arg(long)]
    pub data: std::path::PathBuf,
    /// Kernel configuration for continuous streams; defaults to
    /// `<model>.kde.json` when present.
    #[arg(long)]
    pub kde: Option<std::path::PathBuf>,
    #[arg(long)]
    pub out: std::path::PathBuf,
}

#[derive(Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub model: std::path::PathBuf,
    #[arg(long)]
    pub length: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: std::path::PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum ExperimentName {
    /// Eigenvalues of the summed learned operators against the truth.
    EigenRecovery,
    /// Exhaustive L1 joint error as a function of sample size.
    L1Curve,
}

#[derive(Args)]
pub struct ExperimentArgs {
    #[arg(value_enum)]
    pub name: ExperimentName,
    /// Builtin name or model JSON for the generating model.
    #[arg(long)]
    pub model: String,
    /// State count for the polygon builtin.
    #[arg(long)]
    pub m: Option<usize>,
    /// Learned rank; defaults to the generating model's rank.
    #[arg(long)]
    pub k: Option<usize>,
    /// Stacking width (eigen-recovery only).
    #[arg(long, default_value_t = 1)]
    pub window: usize,
    /// Sequence length for the L1 comparison.
    #[arg(long, default_value_t = 3)]
    pub t: usize,
    /// Comma-separated sample sizes.
    #[arg(long, value_delimiter = ',', default_value = "10000,100000")]
    pub ns: Vec<u64>,
    #[arg(long, default_value_t = 20)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: std::path::PathBuf,
}

fn main() -> ExitCode {
    rrhmm::configure_threads_from_env();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // Help and version requests are not errors.
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    let argv: Vec<String> = std::env::args().skip(1).collect();
    let outcome = match cli.command {
        Command::Gen(args) => commands::gen(&args, &argv),
        Command::Learn(args) => commands::learn(&args, &argv),
        Command::Eval(args) => commands::eval(&args, &argv),
        Command::Filter(args) => commands::filter(&args, &argv),
        Command::Simulate(args) => commands::simulate(&args, &argv),
        Command::Experiment(args) => commands::experiment(&args, &argv),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
