use clap::{Parser, Subcommand};
use serde::Serialize;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use grale::ensemble::StrategyChoice;
use grale::experiment::{
    load_config, run_cv, run_diag, run_gen_data, run_predict, run_train, ExperimentConfig,
};
use grale::{Error, Result};

/// Multilabel classification with ensembles of tree-structured graphical
/// models.
#[derive(Debug, Parser)]
#[command(name = "grale", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment config JSON; flags below override its fields.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Random seed for data generation, tree sampling, and folds.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Worker threads; defaults to all cores.
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,

    /// Output directory for artifacts.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Aggregation strategy: mve, amm, mam, or all.
    #[arg(long, global = true, value_name = "NAME")]
    strategy: Option<StrategyChoice>,

    /// Number of base models in the ensemble.
    #[arg(long, global = true, value_name = "N")]
    ensemble_size: Option<usize>,

    /// Slack bound C on each example's dual mass.
    #[arg(long, global = true, value_name = "C")]
    slack: Option<f64>,

    /// Select the slack bound on a held-out sample before cross validating.
    #[arg(long, global = true)]
    tune: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the configured synthetic dataset as CSV files.
    GenData,
    /// Train an ensemble on the configured dataset and save it.
    Train,
    /// Predict labels for test inputs with a saved ensemble.
    Predict,
    /// Run stratified cross validation with an ensemble learning curve.
    Cv,
    /// Report score-variance diagnostics of a saved ensemble.
    Diag,
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::InvalidArgument(_) | Error::TooLarge { .. } => 2,
        Error::Parse { .. } | Error::DimensionMismatch { .. } | Error::Io(_) => 3,
        Error::Disconnected { .. } | Error::Integrity(_) => 4,
    }
}

fn effective_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => load_config(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.display().to_string();
    }
    if let Some(strategy) = cli.strategy {
        cfg.strategy = strategy;
    }
    if let Some(t) = cli.ensemble_size {
        cfg.ensemble_size = t;
    }
    if let Some(c) = cli.slack {
        cfg.slack = c;
    }
    if cli.tune {
        cfg.tune = true;
    }
    Ok(cfg)
}

fn print_summary<T: Serialize>(value: &T) -> Result<()> {
    let body = serde_json::to_string_pretty(value)
        .map_err(|e| Error::integrity(format!("serialization failed: {e}")))?;
    match writeln!(io::stdout(), "{body}") {
        Err(e) if e.kind() == io::ErrorKind::BrokenPipe => Ok(()),
        other => Ok(other?),
    }
}

fn run(cli: &Cli) -> Result<()> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(Error::invalid("jobs must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| Error::invalid(format!("cannot configure {jobs} worker threads: {e}")))?;
    }
    let cfg = effective_config(cli)?;
    match cli.command {
        Command::GenData => print_summary(&run_gen_data(&cfg)?),
        Command::Train => print_summary(&run_train(&cfg)?),
        Command::Predict => print_summary(&run_predict(&cfg)?),
        Command::Cv => print_summary(&run_cv(&cfg)?),
        Command::Diag => print_summary(&run_diag(&cfg)?),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
