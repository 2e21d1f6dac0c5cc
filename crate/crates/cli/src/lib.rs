//! Experiment runner behind the `ingsl` binary.

pub mod commands;
pub mod config;
pub mod report;
pub mod runner;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] ingsl_core::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("check failed: {0}")]
    CheckFailed(String),
}

impl CliError {
    /// 1 for configuration and input problems, 2 for numeric divergence,
    /// 3 for a failed lemma or gradient check.
    pub fn exit_code(&self) -> i32 {
        use ingsl_core::Error as E;
        match self {
            CliError::Core(E::Diverged { .. } | E::Numeric(_)) => 2,
            CliError::CheckFailed(_) => 3,
            _ => 1,
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(e.into())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.into())
    }
}
