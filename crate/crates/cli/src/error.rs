use std::path::Path;

use thiserror::Error;

/// Exit code 1 for anything the user can fix in their input, 2 for I/O.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }

    pub fn invalid(e: impl std::fmt::Display) -> Self {
        CliError::Invalid(e.to_string())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invalid(_) => 1,
            CliError::Io(_) => 2,
        }
    }
}

impl From<surgkit_core::cleaning::CleaningError> for CliError {
    fn from(e: surgkit_core::cleaning::CleaningError) -> Self {
        match e {
            surgkit_core::cleaning::CleaningError::Io(e) => CliError::Io(e.to_string()),
            other => CliError::Invalid(other.to_string()),
        }
    }
}

impl From<surgkit_core::metrics::MetricError> for CliError {
    fn from(e: surgkit_core::metrics::MetricError) -> Self {
        match e {
            surgkit_core::metrics::MetricError::Io(e) => CliError::Io(e.to_string()),
            other => CliError::Invalid(other.to_string()),
        }
    }
}
