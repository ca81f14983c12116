//! Command-line front end for the BTD solvers: data generation, batch and
//! streaming decomposition, and the two synthetic experiments.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use commands::{error_exit_code, Outcome, EXIT_CONFIG, EXIT_NOT_CONVERGED, EXIT_NUMERICAL, EXIT_OK};
pub use config::{Overrides, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "btd", version, about = "Rank-revealing block-term tensor decomposition")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// JSON configuration file (unknown keys are rejected).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Master seed for data, noise and initialization.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Monte Carlo trials (Experiment 1) or independent runs (Experiment 2).
    #[arg(long, global = true, value_name = "N")]
    pub trials: Option<usize>,
    /// Signal-to-noise ratio in dB.
    #[arg(long = "snr-db", global = true, value_name = "X", allow_negative_numbers = true)]
    pub snr_db: Option<f64>,
    /// Forgetting factor of the streaming solver.
    #[arg(long, global = true, value_name = "X")]
    pub xi: Option<f64>,
    /// Reduced Experiment 1 protocol (20 trials).
    #[arg(long, global = true)]
    pub quick: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic tensor with its ground-truth factors.
    Generate,
    /// Decompose a whole tensor with the batch solver.
    Batch,
    /// Warm-start on the first slices, then decompose slice by slice.
    Stream,
    /// Reproduce one of the synthetic experiments.
    Experiment {
        /// 1: batch vs streaming accuracy; 2: tracking an abrupt change.
        #[arg(value_parser = clap::value_parser!(u8).range(1..=2))]
        which: u8,
    },
    /// Print the effective configuration as JSON.
    Config,
}

impl Cli {
    pub fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            out: self.out.clone(),
            trials: self.trials,
            snr_db: self.snr_db,
            xi: self.xi,
            quick: self.quick,
        }
    }

    /// Loads the configuration file (or the defaults) and applies the flags.
    pub fn run_config(&self) -> btd_core::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        cfg.apply(&self.overrides());
        Ok(cfg)
    }
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: &Cli) -> i32 {
    let result = cli.run_config().and_then(|cfg| match &cli.command {
        Command::Generate => commands::cmd_generate(&cfg),
        Command::Batch => commands::cmd_batch(&cfg),
        Command::Stream => commands::cmd_stream(&cfg),
        Command::Experiment { which } => commands::cmd_experiment(&cfg, *which),
        Command::Config => {
            println!("{}", cfg.to_json()?);
            Ok(Outcome::Done)
        }
    });
    match result {
        Ok(outcome) => outcome.exit_code(),
        Err(e) => {
            eprintln!("error: {e}");
            error_exit_code(&e)
        }
    }
}
