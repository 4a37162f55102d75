use riskmap::RiskError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid argument: {0}")]
    Usage(String),
    #[error(transparent)]
    Risk(#[from] RiskError),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    /// 2 invalid arguments, 3 data-format or io error, 4 numeric failure.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Risk(e) => match e {
                RiskError::InvalidArgument(_) | RiskError::EmptyMask => 2,
                RiskError::Format(_) | RiskError::Io { .. } => 3,
                RiskError::DegenerateData(_) | RiskError::NumericFailure(_) => 4,
            },
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Wraps an io failure with its path.
pub fn io_err(path: &std::path::Path, source: std::io::Error) -> CliError {
    CliError::Risk(RiskError::Io { path: path.to_path_buf(), source })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::usage("x").exit_code(), 2);
        assert_eq!(CliError::from(RiskError::EmptyMask).exit_code(), 2);
        assert_eq!(CliError::from(RiskError::Format("x".into())).exit_code(), 3);
        assert_eq!(io_err(std::path::Path::new("a"), std::io::ErrorKind::NotFound.into()).exit_code(), 3);
        assert_eq!(CliError::from(RiskError::NumericFailure("x".into())).exit_code(), 4);
    }
}
