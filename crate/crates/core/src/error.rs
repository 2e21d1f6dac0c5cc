use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("{op}: value out of domain at index {index}: {value}")]
    Domain {
        op: &'static str,
        index: usize,
        value: f64,
    },

    #[error("row {row} has norm below 1e-12 and cannot be normalised")]
    DegenerateRow { row: usize },

    #[error("{op}: expected a scalar, got shape {shape:?}")]
    Rank { op: &'static str, shape: Vec<usize> },

    #[error("tape state: {0}")]
    State(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{}:{line}: {msg}", file.display())]
    Parse {
        file: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("undefined metric: {0}")]
    UndefinedMetric(&'static str),

    #[error("capacity: requested {requested} new pairs but only {available} exist")]
    Capacity { requested: usize, available: usize },

    #[error("non-finite value encountered: {0}")]
    Numeric(String),

    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
