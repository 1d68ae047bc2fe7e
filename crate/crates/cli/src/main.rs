//! `geonet`: simulate, estimate, refine, verify and calibrate from a JSON
//! experiment config. Exit status is 0 on success, 2 when a verification
//! fails and 1 on any error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context as _, Result};
use clap::{Parser, Subcommand};

use commands::{Context, Outcome};
use config::ExperimentConfig;

#[derive(Debug, Parser)]
#[command(name = "geonet", version, about = "Intrinsic distance reconstruction experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Output directory, overriding the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw samples and noisy, masked observations.
    Simulate,
    /// Run the three-net estimator on the observations.
    Estimate,
    /// Refine the coarse net into chart coordinates and refined distances.
    Refine,
    /// Compare every available output with ground truth.
    Verify,
    /// Calibrate c₅ or C₃.
    Calibrate,
}

fn run(cli: Cli) -> Result<Outcome> {
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("configuring the worker pool")?;
    }
    let path = cli.config.context("--config is required")?;
    let cfg = ExperimentConfig::load(&path)?;
    let ctx = Context::new(cfg, cli.seed, cli.out)?;
    match cli.command {
        Command::Simulate => commands::simulate(&ctx),
        Command::Estimate => commands::estimate(&ctx),
        Command::Refine => commands::refine_cmd(&ctx),
        Command::Verify => commands::verify(&ctx),
        Command::Calibrate => commands::calibrate(&ctx),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(Outcome::Pass) => ExitCode::SUCCESS,
        Ok(Outcome::Fail) => {
            eprintln!("verification failed; see verify.json");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
