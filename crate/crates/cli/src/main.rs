//! `swave`: run the experiment suites from a config file.
//!
//! Exit status is 0 when every assertion of the run holds, 1 when one fails or the run
//! stops on a numerical error, and 2 for usage and configuration errors.

mod output;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use swave::config::{Overrides, RunConfig};

/// Config used when `--config` is absent.
const DEFAULT_CONFIG: &str = "[grid]\nd = 1\n";

#[derive(Parser)]
#[command(name = "swave", version, about = "Stochastic wave equation experiments on the torus")]
struct Cli {
    /// TOML run configuration; defaults to a one-dimensional run with default settings.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    replicas: Option<usize>,
    /// Output directory; overrides the config and `SWAVE_OUT`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Integrability conditions for the configured kernel and measure.
    CheckKernel,
    /// Sample the solution and report its moments.
    Simulate,
    /// Malliavin derivative: finite-difference check, norms and small-window decomposition.
    Malliavin,
    /// Law of u(t,x): density estimate, Gaussian oracle and small-derivative probabilities.
    Density,
    /// Run every self-checking suite.
    Verify,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::CheckKernel => "check-kernel",
            Command::Simulate => "simulate",
            Command::Malliavin => "malliavin",
            Command::Density => "density",
            Command::Verify => "verify",
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let overrides = Overrides {
        seed: cli.seed,
        replicas: cli.replicas,
        out: cli.out.clone(),
        workers: cli.workers,
    };
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p, &overrides),
        None => RunConfig::parse(DEFAULT_CONFIG, &overrides),
    };
    let cfg = match cfg {
        Ok(c) => c,
        Err(e) => {
            eprintln!("swave: {e}");
            return ExitCode::from(2);
        }
    };
    let dir = cfg
        .out
        .clone()
        .or_else(|| std::env::var_os("SWAVE_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("swave-out"));
    run::execute(cli.command.name(), &cfg, dir)
}
