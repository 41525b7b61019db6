//! `antiforensics` — data generation, detector training and evaluation,
//! attacks, transfer matrices and perturbation statistics from one binary.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::ConfigError;

#[derive(Parser, Debug)]
#[command(name = "antiforensics", version, about)]
pub struct Cli {
    /// Seed for every random choice (default 0).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for per-image work; results do not depend on it.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// TOML or JSON file with default settings; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate the synthetic two-class dataset.
    GenData(GenDataArgs),
    /// Train a detector (A1, A2, A3 or ndl) on a dataset's train split.
    Train(TrainArgs),
    /// Report TPR/TNR of a model on one split.
    Eval(EvalArgs),
    /// Attack one class of a split and score the results.
    Attack(AttackArgs),
    /// Source-by-target attack success matrix.
    Transfer(TransferArgs),
    /// Covariance of gradient-sign triples in RGB and YCbCr.
    AnalyzeCov(CovArgs),
    /// Per-channel histograms of the perturbations of an attack run.
    Histogram(HistogramArgs),
    /// Attack success and image quality over a list of budgets.
    Sweep(SweepArgs),
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub resolution: Option<usize>,
    #[arg(long)]
    pub train_per_class: Option<usize>,
    #[arg(long)]
    pub val_per_class: Option<usize>,
    #[arg(long)]
    pub test_per_class: Option<usize>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// A1, A2, A3 or ndl.
    #[arg(long)]
    pub arch: Option<String>,
    /// Dataset directory or manifest file.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Model file to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-epoch history CSV (default: next to the model).
    #[arg(long)]
    pub history: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f32>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub weight_decay: Option<f32>,
    #[arg(long)]
    pub patience: Option<usize>,
    /// sgd or adam.
    #[arg(long)]
    pub optimizer: Option<String>,
}

#[derive(Args, Debug)]
pub struct DataArgs {
    /// Dataset directory or manifest file.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// train, val or test (default test).
    #[arg(long)]
    pub split: Option<String>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// JSON report path (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AttackOpts {
    /// fgsm, mim or ycc.
    #[arg(long)]
    pub method: Option<String>,
    /// One RGB radius, or `y,cb,cr` for ycc.
    #[arg(long)]
    pub eps: Option<String>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub momentum: Option<f32>,
    /// exact or reciprocal.
    #[arg(long)]
    pub transport: Option<String>,
    /// Class to attack: fake (default) or real.
    #[arg(long)]
    pub label: Option<String>,
}

#[derive(Args, Debug)]
pub struct AttackArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub attack: AttackOpts,
    /// Source model; repeat for an equal-weight ensemble.
    #[arg(long = "source")]
    pub sources: Vec<PathBuf>,
    /// Model to score; repeat for several (default: the sources).
    #[arg(long = "target")]
    pub targets: Vec<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Skip writing adversarial PNGs.
    #[arg(long)]
    pub no_images: bool,
}

#[derive(Args, Debug)]
pub struct TransferArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub attack: AttackOpts,
    #[arg(long = "source")]
    pub sources: Vec<PathBuf>,
    #[arg(long = "target")]
    pub targets: Vec<PathBuf>,
    /// CSV path; a JSON copy with the configuration is written alongside.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CovArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Sampled (image, pixel) pairs (default 10000).
    #[arg(long)]
    pub samples: Option<usize>,
    /// Class whose images are sampled: fake (default) or real.
    #[arg(long)]
    pub label: Option<String>,
    /// CSV path; a JSON copy with the configuration is written alongside.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct HistogramArgs {
    /// Output directory of an `attack` run.
    #[arg(long)]
    pub run: Option<PathBuf>,
    /// rgb or ycc.
    #[arg(long)]
    pub domain: Option<String>,
    /// Directory for the CSVs (default: the run directory).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub attack: AttackOpts,
    /// Budgets to visit, e.g. `2 4 6 8` or `2.5,6,6 3,7,7`.
    #[arg(long, num_args = 1..)]
    pub budgets: Vec<String>,
    #[arg(long = "source")]
    pub sources: Vec<PathBuf>,
    /// CSV path; a JSON copy with the configuration is written alongside.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Exit code for invalid configuration.
const EXIT_CONFIG: u8 = 2;
/// Exit code for failures while running.
const EXIT_RUNTIME: u8 = 3;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version.
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => return report(EXIT_CONFIG, "config", vec![e.kind().to_string(), e.to_string()]),
    };
    match commands::run(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => match e.downcast::<ConfigError>() {
            Ok(c) => report(EXIT_CONFIG, "config", c.0),
            Err(e) => report(EXIT_RUNTIME, "runtime", e.chain().map(|c| c.to_string()).collect()),
        },
    }
}

/// Prints a machine-readable error object on stderr.
fn report(code: u8, kind: &str, errors: Vec<String>) -> ExitCode {
    let body = serde_json::json!({
        "status": "error",
        "kind": kind,
        "exit_code": code,
        "errors": errors,
    });
    eprintln!("{body}");
    ExitCode::from(code)
}
