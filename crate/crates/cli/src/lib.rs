//! Drivers behind the `stiffnet` binary.

pub mod commands;
pub mod config;

use std::fmt;

pub use config::{Cli, Command, ConfigFile, Opts, RunConfig, SEED_ENV};

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numerical(stiffnet::Error),
    Io(std::io::Error),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Numerical(e) => write!(f, "{e}"),
            CliError::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<stiffnet::Error> for CliError {
    fn from(e: stiffnet::Error) -> Self {
        use stiffnet::Error as E;
        match e {
            E::InvalidConfig(m) | E::InvalidNetwork(m) => CliError::Config(m),
            E::Io(e) => CliError::Io(e),
            other => CliError::Numerical(other),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(e.into())
    }
}

/// What a finished command reports back to the shell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outcome {
    pub files: Vec<std::path::PathBuf>,
    /// Some micro-equilibrations hit the jump cap; results were still written.
    pub nonconverged: bool,
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_NONCONVERGED: i32 = 4;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Numerical(_) => EXIT_NUMERICAL,
            CliError::Io(_) => EXIT_CONFIG,
        }
    }
}

/// Resolves the configuration and runs one command.
pub fn run(cli: &Cli, env_seed: Option<&str>) -> Result<Outcome, CliError> {
    let cfg = RunConfig::resolve(cli.command, &cli.opts, env_seed)?;
    std::fs::create_dir_all(&cfg.out)?;
    match cfg.command {
        Command::Simulate => commands::simulate(&cfg),
        Command::Tts => commands::tts(&cfg),
        Command::Compare => commands::compare(&cfg),
        Command::Oracle => commands::oracle(&cfg),
    }
}
