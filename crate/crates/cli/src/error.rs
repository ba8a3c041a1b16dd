use std::path::PathBuf;

use cflgcn::datasets::DataError;
use thiserror::Error;

use crate::config::ConfigError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),
    #[error("verification failed: {0} suite(s) reported violations")]
    VerifyFailed(usize),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Other(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Config(_) => 3,
            CliError::MissingFile(_) => 4,
            CliError::VerifyFailed(_) => 5,
        }
    }

    pub fn other(e: impl std::fmt::Display) -> Self {
        CliError::Other(e.to_string())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, e: std::io::Error) -> Self {
        let path = path.into();
        if e.kind() == std::io::ErrorKind::NotFound {
            CliError::MissingFile(path)
        } else {
            CliError::Other(format!("{}: {e}", path.display()))
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Io { path, source } => CliError::io(path, source),
            other => CliError::Other(other.to_string()),
        }
    }
}
