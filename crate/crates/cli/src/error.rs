use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A malformed cell, located by 1-based file line and column header.
    #[error("{}: line {line}, column '{column}': {message}", .path.display())]
    Cell {
        path: PathBuf,
        line: u64,
        column: String,
        message: String,
    },

    #[error("{}: {message}", .path.display())]
    Format { path: PathBuf, message: String },

    #[error(transparent)]
    Model(#[from] bimlta::Error),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Self::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    /// 1 for usage and configuration problems, 2 when estimation fails and
    /// 3 for unreadable, unwritable or malformed files.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) | Self::Config(_) => 1,
            Self::Model(bimlta::Error::EstimationFailed { .. } | bimlta::Error::AllCellsFailed) => 2,
            Self::Model(_) => 1,
            Self::Io { .. } | Self::Cell { .. } | Self::Format { .. } => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
