//! Command-line front end: dataset generation, training, evaluation, and
//! posterior sampling, glued together by reproducible TOML run configs.
//!
//! Exit codes: 0 success, 1 validation error, 2 runtime failure. The
//! `PDET_THREADS` environment variable caps the worker count.

pub mod commands;
pub mod config;

use clap::{Parser, Subcommand};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("validation failed")]
    Validation(Vec<String>),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn runtime(e: impl std::fmt::Display) -> Self {
        CliError::Runtime(e.to_string())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "pdet", about = "Spectral PDE datasets and transformer surrogates")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a simulation dataset (.pdet)
    Gen(commands::gen::GenArgs),
    /// Train a model from a TOML run config
    Train(commands::train::TrainArgs),
    /// Evaluate a checkpoint on datasets (nRMSE at fixed horizons)
    Eval(commands::eval::EvalArgs),
    /// Autoregressively sample a trajectory from a diffusion checkpoint
    Sample(commands::sample::SampleArgs),
}

/// Configure the global worker pool from PDET_THREADS (optionally tightened
/// by a command-line cap).
pub fn init_threads(cli_cap: Option<usize>) {
    let env_cap = std::env::var("PDET_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok());
    let cap = match (env_cap, cli_cap) {
        (Some(a), Some(b)) => Some(a.min(b)),
        (a, b) => a.or(b),
    };
    if let Some(n) = cap {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global();
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(args) => commands::gen::run(args),
        Command::Train(args) => commands::train::run(args),
        Command::Eval(args) => commands::eval::run(args),
        Command::Sample(args) => commands::sample::run(args),
    }
}
