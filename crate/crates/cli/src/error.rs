use thiserror::Error;

/// Process exit codes. The numeric values are a stable interface.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum ExitCode {
    Success = 0,
    Failure = 1,
    Usage = 2,
    Data = 3,
    Diverged = 4,
    Checkpoint = 5,
    EvalMismatch = 6,
    GradcheckFailed = 7,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("cannot read data: {0}")]
    Data(String),
    #[error("{0}")]
    Diverged(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("evaluation inputs do not match: {0}")]
    EvalMismatch(String),
    #[error("gradient check failed: {0}")]
    GradcheckFailed(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Usage(_) => ExitCode::Usage,
            CliError::Data(_) => ExitCode::Data,
            CliError::Diverged(_) => ExitCode::Diverged,
            CliError::Checkpoint(_) => ExitCode::Checkpoint,
            CliError::EvalMismatch(_) => ExitCode::EvalMismatch,
            CliError::GradcheckFailed(_) => ExitCode::GradcheckFailed,
            CliError::Other(_) => ExitCode::Failure,
        }
    }
}
