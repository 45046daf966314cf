use std::fmt;
use std::path::Path;

/// Command failure, mapped onto the process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Inputs were readable but violate a precondition (exit 1).
    Validation(String),
    /// Unreadable, unwritable or malformed files (exit 2).
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Io(_) => 2,
        }
    }

    pub fn io(path: &Path, err: impl fmt::Display) -> Self {
        CliError::Io(format!("{}: {err}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(msg) | CliError::Io(msg) => f.write_str(msg),
        }
    }
}

impl From<simtrans_core::Error> for CliError {
    fn from(err: simtrans_core::Error) -> Self {
        match err {
            simtrans_core::Error::Format { .. } | simtrans_core::Error::Io(_) => CliError::Io(err.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<simtrans_core::toy::TrainError> for CliError {
    fn from(err: simtrans_core::toy::TrainError) -> Self {
        match err {
            simtrans_core::toy::TrainError::Kernel(e) => e.into(),
            diverged => CliError::Validation(diverged.to_string()),
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(err: csv::Error) -> Self {
        CliError::Io(err.to_string())
    }
}
