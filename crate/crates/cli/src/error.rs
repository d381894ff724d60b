use thiserror::Error;

/// Exit code 1 for anything caught before outputs are touched, 2 after.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Invalid(cafv_core::Error),

    #[error(transparent)]
    Failed(cafv_core::Error),

    #[error("{0}")]
    CheckFailed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Invalid(_) => 1,
            CliError::Failed(_) | CliError::CheckFailed(_) => 2,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub trait Phase<T> {
    /// Input or config problem: nothing has been written yet.
    fn invalid(self) -> CliResult<T>;
    /// Failure while producing outputs.
    fn failed(self) -> CliResult<T>;
}

impl<T> Phase<T> for cafv_core::Result<T> {
    fn invalid(self) -> CliResult<T> {
        self.map_err(CliError::Invalid)
    }

    fn failed(self) -> CliResult<T> {
        self.map_err(CliError::Failed)
    }
}
