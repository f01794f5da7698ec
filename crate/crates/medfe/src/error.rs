//! Error type whose variants map one-to-one onto process exit codes:
//! 1 contract violation, 2 IO error, 3 numerical failure.

use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Contract(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Contract(_) => 1,
            CliError::Io(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }

    pub fn io(path: &Path, err: std::io::Error) -> CliError {
        CliError::Io(format!("{}: {err}", path.display()))
    }
}

impl From<medfe_core::Error> for CliError {
    fn from(e: medfe_core::Error) -> Self {
        match e {
            medfe_core::Error::Contract(m) => CliError::Contract(m),
            medfe_core::Error::Format(m) => CliError::Io(m),
            medfe_core::Error::NonFinite(m) => CliError::Numerical(m),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
