//! Batch experiment runner: generate data, fit models, sweep α, measure
//! contraction rates and check risk bounds, writing plot-ready CSV and JSON.

pub mod commands;
pub mod config;
pub mod data;
pub mod fit;
pub mod output;

use std::path::PathBuf;

use alphavb::synth::DatasetKind;
use clap::{Parser, Subcommand};
use thiserror::Error;

pub use commands::{execute, RunOutcome};
pub use config::{ExperimentConfig, Overrides, ResolvedConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CliError {
    #[error("bad config: {0}")]
    Config(String),
    #[error("i/o failure: {0}")]
    Io(String),
    #[error("computation failed: {0}")]
    Compute(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Compute(_) => 1,
        }
    }
}

#[derive(Debug, Clone, Parser)]
#[command(name = "alphavb", version, about = "Run α-VB experiments in batch")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON experiment config.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// One α or a comma-separated list.
    #[arg(long, global = true, value_delimiter = ',')]
    pub alpha: Option<Vec<f64>>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Exit with status 1 if any fit fails to converge or a bound check is
    /// outside its nominal level.
    #[arg(long, global = true)]
    pub strict: bool,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset and its truth sidecar.
    Generate {
        /// Dataset kind: linreg_s21, gmm_s22, lda_synth or tiny_discrete.
        #[arg(long)]
        kind: Option<DatasetKind>,
    },
    /// Fit one model at one α.
    Fit,
    /// Fit one model over a list of α values.
    SweepAlpha,
    /// Posterior risk against sample size and its log-log slope.
    RateExperiment,
    /// Replicated check of the variational risk bound.
    VerifyBounds,
    /// Fit, then write a coefficient, top-words or component table.
    Report,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Generate { .. } => "generate",
            Command::Fit => "fit",
            Command::SweepAlpha => "sweep-alpha",
            Command::RateExperiment => "rate-experiment",
            Command::VerifyBounds => "verify-bounds",
            Command::Report => "report",
        }
    }
}

/// Parses the config, applies overrides and runs the command.
pub fn run(cli: &Cli) -> Result<RunOutcome, CliError> {
    let cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    let overrides = Overrides {
        seed: cli.seed,
        alpha: cli.alpha.clone(),
        out: cli.out.clone(),
        kind: match &cli.command {
            Command::Generate { kind } => *kind,
            _ => None,
        },
    };
    let resolved = ResolvedConfig::resolve(cli.command.name(), cfg, overrides)?;
    execute(cli.command.clone(), &resolved)
}
