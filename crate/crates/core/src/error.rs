use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A precondition of an operation was not met (wrong dimension, negative input, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: usize,
        message: String,
    },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("no records")]
    NoRecords,

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("PE certification failed: {0}")]
    PeFailed(String),

    #[error("cannot construct bound: {0}")]
    Construction(String),

    #[error("missing inputs in {dir}: expected {expected:?}")]
    MissingInputs { dir: PathBuf, expected: Vec<String> },

    #[error("trial {trial}: {source}")]
    Trial {
        trial: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    /// Process exit code for the command-line front end: 2 for configuration
    /// and PE failures, 3 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Trial { source, .. } => source.exit_code(),
            Error::Io { .. } | Error::MissingInputs { .. } => 3,
            _ => 2,
        }
    }
}
