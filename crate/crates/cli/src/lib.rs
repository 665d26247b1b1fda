//! Command-line driver: one scenario per invocation, tables out.
//!
//! Exit codes: 0 success, 1 validation, 2 numerical ambiguity (spectral
//! boundary, rank or compatibility failures), 3 resource cap.

pub mod commands;
pub mod config;
pub mod output;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use rkck::ErrorClass;

/// Environment variable overriding the Hilbert-space dimension cap.
pub const RESOURCE_CAP_ENV: &str = "RKCK_RESOURCE_CAP";

#[derive(Debug, Parser)]
#[command(
    name = "rkck",
    version,
    about = "Constrained coherent-state kernels in truncated Fock spaces"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Scenario file (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Seed for random label grids.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Constrained kernel over a label grid.
    Kernel,
    /// Delta-to-zero reduction of a kernel family.
    Reduce,
    /// Infinite-product classification.
    Product,
    /// Renormalised propagator, spectrum and product propagator.
    Propagate,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Kernel => "kernel",
            Command::Reduce => "reduce",
            Command::Product => "product",
            Command::Propagate => "propagate",
        }
    }
}

#[derive(Debug)]
pub enum CliError {
    Config {
        field: String,
        message: String,
    },
    Core(rkck::Error),
    Io {
        context: String,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn missing(field: &str, command: Command) -> Self {
        CliError::Config {
            field: field.to_string(),
            message: format!("required by `{}`", command.name()),
        }
    }

    pub fn invalid(field: &str, message: impl Into<String>) -> Self {
        CliError::Config {
            field: field.to_string(),
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } | CliError::Io { .. } => 1,
            CliError::Core(e) => match e.class() {
                ErrorClass::Validation => 1,
                ErrorClass::Ambiguity => 2,
                ErrorClass::ResourceCap => 3,
            },
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config { field, message } => write!(f, "scenario field `{field}`: {message}"),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Io { context, source } => write!(f, "{context}: {source}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<rkck::Error> for CliError {
    fn from(e: rkck::Error) -> Self {
        CliError::Core(e)
    }
}

/// Parses the environment cap override, if set.
pub fn resource_cap_override() -> Result<Option<usize>, CliError> {
    match std::env::var(RESOURCE_CAP_ENV) {
        Ok(v) => v.trim().parse().map(Some).map_err(|_| {
            CliError::invalid(RESOURCE_CAP_ENV, format!("not a positive integer: {v:?}"))
        }),
        Err(_) => Ok(None),
    }
}

pub fn run(cli: &Cli) -> Result<output::OutputSet, CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::invalid("--threads", "must be at least 1"));
        }
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::invalid("--config", "no scenario file given"))?;
    let scenario = config::load_scenario(path)?;
    let cap = resource_cap_override()?;
    let outputs = commands::execute(cli.command, &scenario, cli.seed, cap)?;
    outputs.commit(&cli.out)?;
    Ok(outputs)
}
