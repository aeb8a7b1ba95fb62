//! Experiment harness for the fBm-SDE minimum-distance estimators.

pub mod commands;
pub mod config;
pub mod records;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use thiserror::Error;

pub use config::ExperimentConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Validation(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error(transparent)]
    Core(#[from] fracest_core::Error),
    #[error("{failed} of {total} trials failed")]
    TrialFailures { failed: usize, total: usize },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::TrialFailures { .. } => 3,
            _ => 1,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "fracest", version, about = "Minimum-distance estimation for SDEs driven by fractional Brownian motion")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML experiment configuration; defaults are used when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides `master_seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides `output`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for independent trials.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one observed path and write it as CSV.
    Simulate,
    /// Run the configured estimator over independent trials.
    Estimate {
        /// CSV with a `y` column of coarse observations; replaces the
        /// simulated trials with a single estimate.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Identifiability margins and injectivity gaps.
    Identifiability,
    /// Histograms and SGD loss series for the one-, two- and three-parameter cases.
    Benchmark,
}

impl Cli {
    pub fn resolve_config(&self) -> Result<ExperimentConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.master_seed = s;
        }
        if let Some(o) = &self.out {
            cfg.output = o.clone();
        }
        Ok(cfg)
    }
}

/// Runs a parsed command line.
pub fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = cli.resolve_config()?;
    if cli.threads == Some(0) {
        return Err(CliError::Validation("flag `--threads`: must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Io(e.to_string()))?;
    pool.install(|| match &cli.command {
        Command::Simulate => commands::cmd_simulate(&cfg).map(|_| ()),
        Command::Estimate { data } => commands::cmd_estimate(&cfg, data.as_deref()).map(|_| ()),
        Command::Identifiability => commands::cmd_identifiability(&cfg).map(|_| ()),
        Command::Benchmark => commands::cmd_benchmark(&cfg).map(|_| ()),
    })
}
