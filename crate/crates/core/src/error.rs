use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("label {label} of example {example} is outside the head mask")]
    MaskedLabel { example: usize, label: usize },

    #[error("activation cache does not match this call: {0}")]
    StaleCache(String),

    #[error("non-finite value in {what} at coordinate {coordinate}")]
    NonFinite {
        what: &'static str,
        coordinate: usize,
    },

    #[error("sigma underflow at coordinate {coordinate}: {value:e}")]
    Underflow { coordinate: usize, value: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: parse error at byte {offset}: {message}")]
    Parse {
        path: PathBuf,
        offset: u64,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("stream exhausted at iteration {iteration} (total {total})")]
    EndOfStream { iteration: u64, total: u64 },

    #[error("empty batch")]
    EmptyBatch,

    #[error("at iteration {iteration}")]
    AtIteration {
        iteration: u64,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn at_iteration(self, iteration: u64) -> Self {
        Error::AtIteration {
            iteration,
            source: Box::new(self),
        }
    }
}
