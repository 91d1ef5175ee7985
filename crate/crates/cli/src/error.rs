use std::path::PathBuf;

use thiserror::Error;

/// Command failures, each mapped to a process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),

    #[error("{0}")]
    Divergence(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error(transparent)]
    Library(seqratio::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Library(_) => 2,
            CliError::Divergence(_) => 3,
            CliError::Io { .. } | CliError::Format { .. } => 4,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        CliError::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

impl From<seqratio::Error> for CliError {
    fn from(e: seqratio::Error) -> Self {
        match e {
            seqratio::Error::NumericalDivergence { .. } => CliError::Divergence(e.to_string()),
            other => CliError::Library(other),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
