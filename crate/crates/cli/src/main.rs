use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use snls_cli::commands::{self, CmdError};
use snls_cli::config::RunConfig;

/// Simulations of the 1D focusing nonlinear Schrödinger equation with
/// multiplicative space-correlated noise.
#[derive(Parser)]
#[command(name = "snls", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed override (mc.seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for the CSV files.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Trial-count override (mc.trials).
    #[arg(long)]
    trials: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Fixed-step evolution; writes timeseries.csv and summary.csv
    /// (mean_energy.csv for trial ensembles).
    Evolve(Common),
    /// Blow-up probability over a (beta, epsilon) grid; writes sweep.csv.
    Sweep(Common),
    /// Blow-up dynamics with adaptive stepping and mesh refinement; writes
    /// rate traces, profile, centers and their statistics.
    Blowup(Common),
    /// Covariance construction and sampling diagnostics; writes
    /// covariance.csv and report.csv.
    NoiseCheck(Common),
}

fn load(common: &Common) -> Result<RunConfig, CmdError> {
    let mut config = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.set("mc.seed", seed);
    }
    if let Some(trials) = common.trials {
        config.set("mc.trials", trials);
    }
    Ok(config)
}

fn run() -> Result<(), CmdError> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Evolve(c) => commands::cmd_evolve(&load(c)?, &c.out),
        Command::Sweep(c) => commands::cmd_sweep(&load(c)?, &c.out),
        Command::Blowup(c) => commands::cmd_blowup(&load(c)?, &c.out),
        Command::NoiseCheck(c) => commands::cmd_noise_check(&load(c)?, &c.out),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ CmdError::Config(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
    }
}
