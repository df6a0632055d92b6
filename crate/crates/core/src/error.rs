use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = MhcrError> = std::result::Result<T, E>;

/// Coarse classification used by the command line to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numeric,
}

#[derive(Debug, Error)]
pub enum MhcrError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("cannot build graph: {0}")]
    Build(String),

    #[error("bad file format: {0}")]
    Format(String),

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl MhcrError {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        MhcrError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            MhcrError::Config(_) => ErrorClass::Config,
            MhcrError::Numeric(_) => ErrorClass::Numeric,
            MhcrError::Parse { .. }
            | MhcrError::Validation(_)
            | MhcrError::Shape(_)
            | MhcrError::Build(_)
            | MhcrError::Format(_)
            | MhcrError::Io { .. } => ErrorClass::Data,
        }
    }
}

pub(crate) fn shape_err(what: &str, expected: (usize, usize), got: (usize, usize)) -> MhcrError {
    MhcrError::Shape(format!(
        "{what}: expected {}x{}, got {}x{}",
        expected.0, expected.1, got.0, got.1
    ))
}
