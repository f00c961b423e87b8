use std::path::PathBuf;

use lensless_core::Error as CoreError;
use thiserror::Error;

/// Exit codes, also documented in the README.
pub mod exit {
    pub const SUCCESS: i32 = 0;
    pub const CONFIG: i32 = 2;
    pub const SINGULAR_RATE: i32 = 3;
    pub const FACTORIZATION: i32 = 4;
    pub const IO: i32 = 5;
    pub const VERIFY_FAILED: i32 = 6;
    pub const NUMERIC: i32 = 7;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] CoreError),

    #[error("verification failed: {0}")]
    VerifyFailed(String),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => exit::CONFIG,
            CliError::Io { .. } => exit::IO,
            CliError::VerifyFailed(_) => exit::VERIFY_FAILED,
            CliError::Core(e) => match e {
                CoreError::SingularRate { .. } => exit::SINGULAR_RATE,
                CoreError::Factorization { .. } => exit::FACTORIZATION,
                CoreError::InvalidParameter(_)
                | CoreError::Dimension(_)
                | CoreError::Placement { .. } => exit::CONFIG,
                CoreError::NegativeValue { .. } | CoreError::TrialFailures { .. } => exit::NUMERIC,
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
