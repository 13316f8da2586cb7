use std::path::PathBuf;

use convlstm_ad::Error as CoreError;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}:{line}: {message}")]
    ConfigLine { path: PathBuf, line: usize, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },

    #[error("{message}")]
    Divergence { message: String },

    #[error("gradient check failed: worst relative error {worst:.3e} above {tolerance:.1e}")]
    GradCheck { worst: f64, tolerance: f64 },

    #[error(transparent)]
    Core(#[from] CoreError),
}

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const CONFIG: i32 = 2;
    pub const DATA: i32 = 3;
    pub const DIVERGENCE: i32 = 4;
    pub const GRADCHECK: i32 = 5;
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::ConfigLine { .. } | CliError::Config(_) => exit::CONFIG,
            CliError::Checkpoint { .. } => exit::DATA,
            CliError::Divergence { .. } => exit::DIVERGENCE,
            CliError::GradCheck { .. } => exit::GRADCHECK,
            CliError::Core(e) => match e {
                CoreError::Config(_) => exit::CONFIG,
                CoreError::Divergence { .. } | CoreError::NonFiniteGradient { .. } => exit::DIVERGENCE,
                CoreError::Io { .. } | CoreError::Format { .. } | CoreError::Evaluation(_) | CoreError::Shape { .. } => {
                    exit::DATA
                }
            },
        }
    }
}
