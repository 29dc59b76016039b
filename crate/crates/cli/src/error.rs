use std::process::ExitCode;

/// Command failure, grouped by exit status.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Io(_) => 2,
            CliError::Validation(_) => 3,
            CliError::Internal(_) => 4,
        }
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(self.code())
    }

    pub fn io(context: impl std::fmt::Display, e: std::io::Error) -> Self {
        CliError::Io(format!("{context}: {e}"))
    }
}

impl From<swallow_core::Error> for CliError {
    fn from(e: swallow_core::Error) -> Self {
        match e {
            swallow_core::Error::Io(_) => CliError::Io(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<swallow_service::ServiceError> for CliError {
    fn from(e: swallow_service::ServiceError) -> Self {
        use swallow_service::store::StoreError;
        use swallow_service::ServiceError as S;
        match e {
            S::Store(StoreError::Io(_)) => CliError::Io(e.to_string()),
            S::Model(swallow_core::Error::Io(_)) => CliError::Io(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
