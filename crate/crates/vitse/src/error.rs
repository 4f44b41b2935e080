use thiserror::Error;

use crate::checkpoint::CheckpointError;
use crate::fer::FerError;
use crate::pgm::PgmError;

/// Failure of a subcommand, grouped by exit status.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric check failed: {0}")]
    Numeric(String),
}

impl CliError {
    /// 1 for usage and configuration, 2 for data, 3 for numeric checks.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl From<vitse_core::Error> for CliError {
    fn from(e: vitse_core::Error) -> Self {
        match e {
            vitse_core::Error::Config(msg) => CliError::Config(msg),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<FerError> for CliError {
    fn from(e: FerError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<PgmError> for CliError {
    fn from(e: PgmError) -> Self {
        CliError::Data(e.to_string())
    }
}
