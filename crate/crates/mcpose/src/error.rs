use std::path::{Path, PathBuf};

use thiserror::Error;

/// Failures surfaced to the command line, split by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad arguments, configuration or input files (exit code 2).
    #[error("{0}")]
    Invalid(String),
    /// Failure while running a valid request (exit code 1).
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invalid(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        CliError::Invalid(msg.into())
    }

    pub fn runtime(msg: impl Into<String>) -> Self {
        CliError::Runtime(msg.into())
    }

    /// A file that could not be read is an input problem.
    pub fn read(path: &Path, err: impl std::fmt::Display) -> Self {
        CliError::Invalid(format!("{}: {err}", path.display()))
    }

    /// A file that could not be written is a runtime problem.
    pub fn write(path: &Path, err: impl std::fmt::Display) -> Self {
        CliError::Runtime(format!("{}: {err}", path.display()))
    }
}

impl From<mcpose_core::Error> for CliError {
    fn from(e: mcpose_core::Error) -> Self {
        use mcpose_core::Error as E;
        match e {
            E::NoValidDepth | E::BehindCamera(_) => CliError::Runtime(e.to_string()),
            _ => CliError::Invalid(e.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Attaches a path to a core error while keeping its classification.
pub fn at_path(path: &PathBuf, e: mcpose_core::Error) -> CliError {
    match CliError::from(e) {
        CliError::Invalid(m) => CliError::Invalid(format!("{}: {m}", path.display())),
        CliError::Runtime(m) => CliError::Runtime(format!("{}: {m}", path.display())),
    }
}
