//! `arnet`: generate synthetic AR series, fit them by least squares or SGD,
//! evaluate fits and run the comparison sweeps.
//!
//! Exit codes: 0 success, 2 usage or input error, 3 numerical failure.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use arnet_core::experiments::ExperimentName;
use arnet_core::metrics::DEFAULT_SUPPORT_THRESHOLD;
use arnet_core::{ArError, Fitter};
use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(
    name = "arnet",
    version,
    about = "Auto-regressive model fitting by least squares and sparse SGD"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate an AR(p) process and write it as CSV plus a JSON sidecar.
    Generate(GenerateArgs),
    /// Fit an AR model to a series CSV and write the fit as JSON.
    Fit(FitArgs),
    /// One-step-ahead evaluation of a fit on held-out data.
    Evaluate(EvaluateArgs),
    /// Run one of the comparison sweeps and write its records.
    Experiment(ExperimentArgs),
}

#[derive(Args, Debug)]
struct GenerateArgs {
    /// JSON file with any of the flag names below as keys; flags win.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Lag coefficients, most recent lag first.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    coefficients: Option<Vec<f64>>,
    /// Order of the process; coefficients are sampled when none are given.
    #[arg(long)]
    order: Option<usize>,
    /// Absolute coefficient sum for sampled coefficients.
    #[arg(long)]
    abs_sum: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    intercept: Option<f64>,
    #[arg(long)]
    noise_std: Option<f64>,
    /// Number of samples kept after burn-in.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long, short)]
    out: PathBuf,
    /// Provenance JSON path; defaults to the output path with a .json extension.
    #[arg(long)]
    sidecar: Option<PathBuf>,
}

/// SGD hyperparameter overrides shared by `fit` and `experiment`.
#[derive(Args, Debug, Default)]
struct TrainFlags {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    /// `constant` or `one-cycle`.
    #[arg(long)]
    lr_schedule: Option<String>,
    /// `none`, `sigmoid-root` or `sqrt-alt`.
    #[arg(long)]
    regularizer: Option<String>,
    /// A number, or `auto` to estimate it from the data.
    #[arg(long)]
    c_lambda: Option<String>,
    #[arg(long)]
    c1: Option<f64>,
    #[arg(long)]
    c2: Option<f64>,
    /// Train on the raw series instead of the standardized one.
    #[arg(long)]
    no_standardize: bool,
}

#[derive(Args, Debug)]
struct FitArgs {
    /// Series CSV with a single `value` column.
    #[arg(long, short)]
    input: PathBuf,
    /// `classic` (least squares) or `sgd`.
    #[arg(long, default_value = "classic")]
    fitter: Fitter,
    #[arg(long)]
    order: usize,
    /// Training config, JSON or `key = value` lines; flags win.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    train: TrainFlags,
    /// Estimated fraction of active lags; enables the sigmoid-root regularizer.
    #[arg(long)]
    sparsity: Option<f64>,
    /// SGD seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Fit without an intercept.
    #[arg(long)]
    no_intercept: bool,
    /// Fit on the first N values only.
    #[arg(long)]
    split: Option<usize>,
    /// Report sTPE against these coefficients.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    true_coefficients: Option<Vec<f64>>,
    /// Fit JSON path; stdout when absent.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Fit JSON written by `fit`.
    #[arg(long)]
    fit: PathBuf,
    #[arg(long)]
    test: Option<PathBuf>,
    /// Series preceding the test segment, at least p values.
    #[arg(long)]
    context: Option<PathBuf>,
    /// Single series to split into context and test with `--split`.
    #[arg(long, short)]
    input: Option<PathBuf>,
    /// Number of leading values used as context.
    #[arg(long)]
    split: Option<usize>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    true_coefficients: Option<Vec<f64>>,
    /// Magnitude at or above which a lag counts as recovered.
    #[arg(long, default_value_t = DEFAULT_SUPPORT_THRESHOLD)]
    threshold: f64,
    /// Write `index,actual,predicted,residual` rows here.
    #[arg(long)]
    residuals: Option<PathBuf>,
    /// Report JSON path; stdout when absent.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    /// dense-sweep, sparse-sweep, small-data or timing.
    #[arg(long)]
    name: ExperimentName,
    /// Partial experiment spec as JSON, applied over the preset; flags win.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model orders, comma separated.
    #[arg(long = "p", value_delimiter = ',')]
    p_values: Option<Vec<usize>>,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_test: Option<usize>,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    noise_std: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    fitters: Option<Vec<Fitter>>,
    /// Fixed generating coefficients, most recent lag first.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    true_coefficients: Option<Vec<f64>>,
    /// Sparsity handed to SGD instead of the true active-lag ratio.
    #[arg(long)]
    sparsity: Option<f64>,
    #[arg(long)]
    threads: Option<usize>,
    #[command(flatten)]
    train: TrainFlags,
    #[arg(long, default_value = "results")]
    out_dir: PathBuf,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(ArError),
}

impl From<ArError> for CliError {
    fn from(e: ArError) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if e.is_numerical() => 3,
            _ => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(msg) => f.write_str(msg),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Generate(args) => commands::generate(args),
        Command::Fit(args) => commands::fit(args),
        Command::Evaluate(args) => commands::evaluate(args),
        Command::Experiment(args) => commands::experiment(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
