use std::io;
use std::path::Path;

use thiserror::Error;

/// Failure of a CLI command, classified by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, unknown config keys or invalid values (exit 1).
    #[error("usage: {0}")]
    Usage(String),

    /// Missing, corrupt or mismatched files (exit 2).
    #[error("data: {0}")]
    Data(String),

    /// Training or sampling produced non-finite values (exit 3).
    #[error("numerical abort: {0}")]
    Numerical(String),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }

    pub(crate) fn io(path: &Path, err: io::Error) -> Self {
        CliError::Data(format!("{}: {err}", path.display()))
    }
}

impl From<scndb::Error> for CliError {
    fn from(err: scndb::Error) -> Self {
        match err {
            scndb::Error::InvalidConfig(_) => CliError::Usage(err.to_string()),
            scndb::Error::NonFinite(_) => CliError::Numerical(err.to_string()),
            _ => CliError::Data(err.to_string()),
        }
    }
}
