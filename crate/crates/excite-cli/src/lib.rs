//! Experiment orchestration, theory-verification checks, and file/plot
//! emission behind the `excite` command-line tool.

pub mod config;
pub mod experiment;
pub mod plot;
pub mod systems;
pub mod verify;

/// Errors surfaced by the CLI layer; variants map onto process exit codes.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Invalid configuration or spec (exit code 2).
    #[error("config error: {0}")]
    Config(String),
    /// A verification check failed (exit code 1).
    #[error("verification failed: {0}")]
    Verification(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Lib(#[from] excite::Error),
}

impl CliError {
    /// Process exit code for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Verification(_) => 1,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
