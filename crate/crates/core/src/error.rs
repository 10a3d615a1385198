use std::path::PathBuf;

use thiserror::Error;

use crate::records::CellKey;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },

    #[error("line {line}: duplicate record {key}")]
    Duplicate { line: usize, key: String },

    #[error("line {line}: {what} `{id}` is not declared in the manifest")]
    Unknown {
        line: usize,
        what: &'static str,
        id: String,
    },

    #[error("line {line}: feature dimension {found} does not match {expected} for extractor `{extractor}`")]
    DimensionMismatch {
        line: usize,
        extractor: String,
        expected: usize,
        found: usize,
    },

    #[error("invalid {what}: {message}")]
    Invalid { what: &'static str, message: String },

    #[error("{} missing cell(s), first: {}", .0.len(), .0.first().map(ToString::to_string).unwrap_or_default())]
    MissingCells(Vec<CellKey>),

    #[error("missing {what}: {key}")]
    Missing { what: &'static str, key: String },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("{0}")]
    Format(String),
}

impl Error {
    pub(crate) fn invalid(what: &'static str, message: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            message: message.into(),
        }
    }

    pub(crate) fn missing(what: &'static str, key: impl ToString) -> Self {
        Error::Missing {
            what,
            key: key.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
