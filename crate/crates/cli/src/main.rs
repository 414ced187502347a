//! `mmlab`: simulations, backtests, predictor evaluations and asset
//! rankings from config files and flags.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;
mod error;
mod manifest;

use commands::backtest::BacktestArgs;
use commands::evaluate::EvaluateArgs;
use commands::predict::PredictArgs;
use commands::simulate::SimulateArgs;
use commands::Globals;
use error::CliError;

#[derive(Parser, Debug)]
#[command(
    name = "mmlab",
    version,
    about = "Deterministic market-making laboratory"
)]
struct Cli {
    /// Seed for every random stream; overrides config files.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for independent runs.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Permit oracle (future-peeking) predictions.
    #[arg(long, global = true)]
    allow_oracle: bool,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run agent simulations over a synthetic price curve.
    Simulate(SimulateArgs),
    /// Replay a recorded tape against virtual strategies.
    Backtest(BacktestArgs),
    /// Evaluate a rolling price predictor against persistence.
    Predict(PredictArgs),
    /// Compute asset metrics and rankings, optionally by backtest.
    Evaluate(EvaluateArgs),
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(CliError::usage("--jobs must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::runtime(e.to_string()))?;
    }
    let g = Globals {
        seed: cli.seed,
        allow_oracle: cli.allow_oracle,
        out: cli.out,
    };
    match &cli.command {
        Command::Simulate(a) => commands::simulate::run(a, &g),
        Command::Backtest(a) => commands::backtest::run(a, &g),
        Command::Predict(a) => commands::predict::run(a, &g),
        Command::Evaluate(a) => commands::evaluate::run(a, &g),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
