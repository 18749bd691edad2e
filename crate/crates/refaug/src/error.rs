use std::path::Path;

/// Failure of a command, carrying its exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad config, bad flags, missing or unreadable input, unwritable output.
    #[error("{0}")]
    Input(String),
    #[error("training aborted: {0}")]
    Training(refaug_core::Error),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("self-check failed: {0}")]
    SelfCheck(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::SelfCheck(_) => 1,
            CliError::Input(_) => 2,
            CliError::Training(_) => 3,
            CliError::Checkpoint(_) => 4,
        }
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        CliError::Input(format!("{}: {err}", path.display()))
    }
}

impl From<refaug_core::Error> for CliError {
    fn from(e: refaug_core::Error) -> Self {
        match e {
            refaug_core::Error::Aborted { .. } | refaug_core::Error::Numeric(_) => {
                CliError::Training(e)
            }
            other => CliError::Input(other.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
