use std::path::PathBuf;

use percoqs_core::Error as CoreError;
use thiserror::Error;

/// Process exit codes. Stable; documented in the README.
pub mod exit {
    pub const OK: i32 = 0;
    pub const USAGE: i32 = 1;
    pub const CAPACITY: i32 = 2;
    pub const IO: i32 = 3;
    pub const CHECK_FAILED: i32 = 4;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] CoreError),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("failed checks: {}", .0.join(", "))]
    CheckFailed(Vec<String>),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => exit::USAGE,
            CliError::Core(e) => match e {
                CoreError::Capacity { .. } | CoreError::RejectionBudget { .. } => exit::CAPACITY,
                CoreError::Io(_) | CoreError::Format(_) | CoreError::Json(_) => exit::IO,
                CoreError::Domain(_) | CoreError::Precondition(_) => exit::USAGE,
            },
            CliError::Io { .. } | CliError::Csv(_) => exit::IO,
            CliError::CheckFailed(_) => exit::CHECK_FAILED,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub(crate) fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Usage(msg.into()))
}
