use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the costmap stack.
#[derive(Debug, Error)]
pub enum RiskError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    /// A masked average was requested over a mask with no true cells.
    #[error("mask has no known cells")]
    EmptyMask,
    /// A ratio metric has a zero denominator.
    #[error("degenerate data: {0}")]
    DegenerateData(String),
    #[error("numeric failure: {0}")]
    NumericFailure(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl RiskError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        RiskError::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        RiskError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = RiskError> = std::result::Result<T, E>;
