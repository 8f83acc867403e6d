//! `fingan`: train GANs on daily returns, sample from them, and score the
//! samples against the stylized facts of a reference series.
//!
//! Exit codes: 0 success, 2 configuration, 3 data or I/O, 4 numeric failure.

mod artifacts;
mod error;
mod evaluate;
mod generate;
mod report;
mod series;
mod train;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "fingan", version, about = "GANs for financial return series")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a preset on a price or returns CSV.
    Train(train::TrainArgs),
    /// Sample returns (and optionally prices) from a checkpoint.
    Generate(generate::GenerateArgs),
    /// Score a candidate series against a reference.
    Evaluate(evaluate::EvaluateArgs),
    /// Render plot-data CSVs as SVG.
    Report(report::ReportArgs),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(a) => train::run(a),
        Command::Generate(a) => generate::run(a),
        Command::Evaluate(a) => evaluate::run(a),
        Command::Report(a) => report::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
