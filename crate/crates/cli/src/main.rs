//! `smld` command line: simulate grouped data, fit a constrained stochastic
//! mirror Langevin chain with variance correction, run a Gibbs baseline,
//! query closed-form oracles, and demonstrate divergence of the
//! unconstrained parameterization.

mod config;
mod run;

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use config::read_config;

#[derive(Parser)]
#[command(name = "smld", about = "Mirror Langevin sampling for constrained Bayesian models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// JSON configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    /// Override the seed from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Wall-clock budget; the chain stops early but still writes outputs.
    #[arg(long)]
    max_seconds: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate grouped mixed-model data to CSV.
    Simulate(Common),
    /// Run the stochastic mirror Langevin sampler and variance correction.
    Fit(Common),
    /// Run the data-augmentation Gibbs baseline for a mixed model.
    Gibbs(Common),
    /// Write closed-form posterior moments for models that have them.
    Oracle(Common),
    /// Compare the unconstrained and barrier parameterizations of the
    /// variance toy model across seeds.
    DemoDivergence(Common),
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("SMLD_THREADS") {
        let n: usize = v
            .parse()
            .with_context(|| format!("SMLD_THREADS must be a positive integer, got {v:?}"))?;
        if n == 0 {
            anyhow::bail!("SMLD_THREADS must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("installing rayon thread pool")?;
    }
    Ok(())
}

fn dispatch() -> Result<i32> {
    init_threads()?;
    let cli = Cli::parse();
    match cli.command {
        Command::Simulate(c) => run::cmd_simulate(read_config(&c.config)?, &c.out, c.seed),
        Command::Fit(c) => run::cmd_fit(read_config(&c.config)?, &c.out, c.seed, c.max_seconds),
        Command::Gibbs(c) => {
            run::cmd_gibbs(read_config(&c.config)?, &c.out, c.seed, c.max_seconds)
        }
        Command::Oracle(c) => run::cmd_oracle(read_config(&c.config)?, &c.out),
        Command::DemoDivergence(c) => {
            run::cmd_demo_divergence(read_config(&c.config)?, &c.out, c.seed, c.max_seconds)
        }
    }
}

fn main() {
    match dispatch() {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(1);
        }
    }
}
