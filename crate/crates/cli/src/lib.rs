//! The `mssl` command line: simulate data, fit models, evaluate fits and run
//! simulation benchmarks. Every command writes a `manifest.json` next to its
//! outputs; passing that file back through `--manifest` reproduces the run.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod manifest;

use std::ffi::OsString;

use clap::{Parser, Subcommand};

use crate::error::CliResult;

#[derive(Debug, Parser)]
#[command(name = "mssl", version, about = "Spike-and-slab LASSO for mixed binary and continuous outcomes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a dataset and its generating truth.
    Simulate(commands::simulate::SimulateArgs),
    /// Fit a model along the spike-penalty ladder.
    Fit(commands::fit::FitArgs),
    /// Score fitted models against a truth and/or a test set.
    Evaluate(commands::evaluate::EvaluateArgs),
    /// Simulate, fit and evaluate over structures, regimes and replicates.
    Benchmark(commands::benchmark::BenchmarkArgs),
}

pub fn execute(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Simulate(a) => commands::simulate::execute(a),
        Command::Fit(a) => commands::fit::execute(a),
        Command::Evaluate(a) => commands::evaluate::execute(a),
        Command::Benchmark(a) => commands::benchmark::execute(a),
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
