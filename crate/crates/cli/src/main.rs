mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// MC-dropout embedding-spread features for out-of-distribution detection.
#[derive(Debug, Parser)]
#[command(name = "embedspread", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a dropout network and save it as a model bundle.
    Train(TrainArgs),
    /// Compute per-datum feature rows for a dataset and write them as CSV.
    Features(FeaturesArgs),
    /// Run the repeated OOD detection protocol over feature CSVs.
    Eval(EvalArgs),
    /// Run one of the synthetic studies.
    Simulate(SimulateArgs),
    /// Compare analytic layer gradients with central differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// JSON run configuration; flags take precedence over its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed, overriding every seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct DataArgs {
    /// IDX image file; requires --labels.
    #[arg(long, requires = "labels")]
    images: Option<PathBuf>,
    /// IDX label file; requires --images.
    #[arg(long, requires = "images")]
    labels: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    epochs: Option<usize>,
    /// Output directory for model.json and training_log.csv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct FeaturesArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataArgs,
    /// Model bundle written by `train`.
    #[arg(long)]
    bundle: PathBuf,
    /// Use the synthetic in-distribution or OOD pool instead of IDX files.
    #[arg(long, value_enum, conflicts_with = "images")]
    synthetic: Option<config::SynthPart>,
    /// MC dropout passes per datum.
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    metric: Option<String>,
    /// Also write mean embedding norms per layer.
    #[arg(long)]
    norms: bool,
    /// Omit the spread columns.
    #[arg(long)]
    no_spread: bool,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    /// In-distribution feature CSV.
    #[arg(long)]
    id: PathBuf,
    /// OOD feature CSV used for training draws.
    #[arg(long)]
    ood_train: PathBuf,
    /// Held-out OOD feature CSV; defaults to the undrawn training OOD rows.
    #[arg(long)]
    ood_test: Option<PathBuf>,
    /// lr, rf, if or all. Defaults to the configured detector.
    #[arg(long)]
    detector: Option<String>,
    /// last, last+spread or all (default).
    #[arg(long)]
    features: Option<String>,
    #[arg(long)]
    n_per_class: Option<usize>,
    #[arg(long)]
    repetitions: Option<usize>,
    /// Output directory for report.json and report.txt.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Study {
    Norms,
    Correlations,
    Softmax,
    Confounding,
    Variance,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(value_enum)]
    study: Study,
    #[command(flatten)]
    common: Common,
    /// Model bundle for the confounding study.
    #[arg(long)]
    bundle: Option<PathBuf>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    draws: Option<usize>,
    /// Random trials for the softmax study.
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    /// Random layers for the variance study.
    #[arg(long, default_value_t = 20)]
    cases: usize,
    /// Output directory; the report is printed either way.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
    /// Largest acceptable relative error.
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Features(a) => commands::features(a),
        Command::Eval(a) => commands::eval(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(commands::Failure::Invalid(problems)) => {
            for p in &problems {
                eprintln!("error: {p}");
            }
            ExitCode::from(1)
        }
        Err(commands::Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
