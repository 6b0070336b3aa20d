use std::path::Path;

use avsplat::SplatError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad configuration, arguments or inputs; exit status 1.
    #[error("{0}")]
    Validation(String),
    /// Failure while running a command; exit status 2.
    #[error("{0}")]
    Runtime(String),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Runtime(format!("{}: {e}", path.display()))
    }

    /// Error from reading `path` at 1-based `line`.
    pub fn parse(path: &Path, line: usize, msg: impl std::fmt::Display) -> Self {
        CliError::Validation(format!("{}:{line}: {msg}", path.display()))
    }

    /// Prefixes the message with `path`.
    pub fn at(self, path: &Path) -> Self {
        match self {
            CliError::Validation(m) => CliError::Validation(format!("{}: {m}", path.display())),
            CliError::Runtime(m) => CliError::Runtime(format!("{}: {m}", path.display())),
        }
    }
}

impl From<SplatError> for CliError {
    fn from(e: SplatError) -> Self {
        match e {
            SplatError::Dataset(_)
            | SplatError::Invalid(_)
            | SplatError::Dimension(_)
            | SplatError::Resolution(_)
            | SplatError::Correspondence(_)
            | SplatError::Empty(_)
            | SplatError::UnsupportedDegree(_)
            | SplatError::ArchitectureMismatch { .. }
            | SplatError::CoefficientLength { .. } => CliError::Validation(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}
