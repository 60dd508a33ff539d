//! `durm`: training runs, dummy-count sweeps, theory checks and flatness
//! probes.
//!
//! Exit codes: 0 success, 1 a theory check reported FAIL, 2 configuration or
//! input error, 3 numerical divergence.

mod dataset;
mod flatness;
mod manifest;
mod sweep;
mod theory;
mod train;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "durm", version, about = "Dummy Risk Minimization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one model and write its artifacts to a run directory.
    Train(Box<train::TrainArgs>),
    /// Train over a grid of dummy counts and seeds.
    Sweep(Box<sweep::SweepArgs>),
    /// Numerical checks of the variance and order-statistic results.
    #[command(subcommand)]
    Theory(theory::TheoryCommand),
    /// Sharpness and flatness probes of saved checkpoints.
    Flatness(Box<flatness::FlatnessArgs>),
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let numerical = err.chain().any(|e| {
        matches!(
            e.downcast_ref::<durm::Error>(),
            Some(durm::Error::Divergence { .. } | durm::Error::NonFinite { .. } | durm::Error::Quadrature { .. })
        )
    });
    if numerical {
        3
    } else {
        2
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Train(a) => train::run(a).map(|_| true),
        Command::Sweep(a) => sweep::run(a).map(|_| true),
        Command::Theory(c) => theory::run(c),
        Command::Flatness(a) => flatness::run(a).map(|_| true),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
