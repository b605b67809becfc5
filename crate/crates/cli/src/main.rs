//! `airl`: data generation, training, evaluation, theory checks and boundary
//! export as reproducible runs under a run root directory.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use airl_core::eval::Protocol;
use airl_core::theory::TheoryCheck;
use airl_core::training::Method;
use clap::{Args, Parser, Subcommand, ValueEnum};

use config::{Methods, Seeds};

/// Environment variable naming the run root (default `runs`).
pub const RUNS_ENV: &str = "AIRL_RUNS";

#[derive(Debug, Parser)]
#[command(name = "airl", version, about = "Adaptive invariant representation learning over evolving domains")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a domain sequence as CSV plus JSON sidecar.
    Generate(GenerateArgs),
    /// Train one method on the source domains, one run directory per seed.
    Train(TrainArgs),
    /// Run an evaluation protocol per method and seed and summarize.
    Eval(EvalArgs),
    /// Randomized checks of the divergence bounds and identities.
    VerifyTheory(VerifyArgs),
    /// Predictions of a trained run on a 2-D grid for one domain.
    ExportBoundary(ExportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Dataset {
    Circle,
    CircleHard,
    Rmnist,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    dataset: Dataset,
    #[arg(long, default_value_t = 30)]
    domains: usize,
    #[arg(long, default_value_t = 1000)]
    per_domain: usize,
    #[arg(long, default_value_t = 0.2)]
    sigma: f64,
    #[arg(long, default_value_t = 1.0)]
    radius: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Rotation step in degrees for rmnist.
    #[arg(long, default_value_t = 6.0)]
    step_deg: f64,
    /// Directory holding the MNIST idx files (rmnist only).
    #[arg(long)]
    mnist_dir: Option<PathBuf>,
    #[arg(long, default_value = "data")]
    out: PathBuf,
}

/// Options shared by `train` and `eval`.
#[derive(Debug, Clone, Args)]
struct RunArgs {
    /// `circle`, `circle-hard`, `rmnist:<mnist dir>` or a sequence CSV path.
    #[arg(long, default_value = "circle")]
    data: String,
    /// Domains to generate for synthetic and rmnist data.
    #[arg(long)]
    domains: Option<usize>,
    #[arg(long)]
    per_domain: Option<usize>,
    /// Number of source domains; defaults to the first half.
    #[arg(long)]
    sources: Option<usize>,
    /// JSON file with optional `model` and `train` sections.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Samples per active domain and step.
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    steps_per_epoch: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    /// Softmax over attention scores.
    #[arg(long)]
    softmax: bool,
    /// `N`, `A..B` (inclusive) or `A,B,C`; seeds both data and training.
    #[arg(long, default_value = "0")]
    seed: Seeds,
    /// Parallel worker processes over independent (method, seed) tasks.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Replace existing run directories.
    #[arg(long)]
    overwrite: bool,
    /// Run root; overrides the environment variable.
    #[arg(long)]
    runs: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// airl, erm, ld, ft or ablation:{no_lstm,no_trans,no_inv}.
    #[arg(value_parser = config::parse_method)]
    method: Method,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ProtocolArg {
    EvalS,
    EvalD,
}

impl From<ProtocolArg> for Protocol {
    fn from(p: ProtocolArg) -> Self {
        match p {
            ProtocolArg::EvalS => Protocol::EvalS,
            ProtocolArg::EvalD => Protocol::EvalD,
        }
    }
}

#[derive(Debug, Args)]
struct EvalArgs {
    protocol: ProtocolArg,
    #[arg(long, default_value_t = 5)]
    k: usize,
    /// Comma-separated methods.
    #[arg(long, default_value = "airl")]
    method: Methods,
    /// Summary directory; defaults to one named by the runs it covers.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Skip the summary (used by worker processes).
    #[arg(long, hide = true)]
    no_summary: bool,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CheckArg {
    Lemma1,
    Prop1,
    Pinsker,
    All,
}

impl CheckArg {
    fn checks(self) -> Vec<TheoryCheck> {
        match self {
            CheckArg::Lemma1 => vec![TheoryCheck::Lemma1],
            CheckArg::Prop1 => vec![TheoryCheck::Prop1],
            CheckArg::Pinsker => vec![TheoryCheck::Pinsker],
            CheckArg::All => TheoryCheck::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Args)]
struct VerifyArgs {
    check: CheckArg,
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the reports to this JSON file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExportArgs {
    /// A `train` run directory.
    #[arg(long)]
    run: PathBuf,
    /// Domain whose classifier is drawn.
    #[arg(long)]
    target: usize,
    #[arg(long, default_value_t = 100)]
    resolution: usize,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Generate(a) => commands::generate(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::VerifyTheory(a) => commands::verify_theory(&a),
        Command::ExportBoundary(a) => commands::export_boundary(&a),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            commands::exit_code(&e)
        }
    }
}
