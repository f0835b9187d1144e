//! `hfa`: home-field advantage pipelines.
//!
//! Exit codes: 0 success (possibly with warnings), 2 usage error, 1 runtime
//! failure. Warnings go to stderr; stdout is left for nothing machine-readable.

mod commands;
mod input;
mod output;

use std::fmt;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "hfa", version, about = "Home-field advantage estimation from game results")]
struct Cli {
    /// Cap on worker threads for parallel work; results do not depend on it.
    #[arg(long, global = true, value_parser = clap::value_parser!(u16).range(1..))]
    threads: Option<u16>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit per-season (or per-conference-season) HFA models.
    Phase1(commands::phase1::Args),
    /// Schedule-bias diagnostic for each season or conference-season.
    Diagnose(commands::diagnose::Args),
    /// Resampling study of the HFA estimators.
    Simulate(commands::simulate::Args),
    /// Trend models over a Phase-I HFA series.
    Phase2(commands::phase2::Args),
    /// Write a synthetic games file and conference map.
    Generate(commands::generate::Args),
}

/// Bad invocation that clap cannot detect on its own.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.into()).build_global() {
            eprintln!("error: could not start thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match cli.command {
        Command::Phase1(a) => commands::phase1::run(a),
        Command::Diagnose(a) => commands::diagnose::run(a),
        Command::Simulate(a) => commands::simulate::run(a),
        Command::Phase2(a) => commands::phase2::run(a),
        Command::Generate(a) => commands::generate::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.downcast_ref::<UsageError>().is_some() => {
            eprintln!("error: {e}");
            eprintln!("\nFor more information, try '--help'.");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
