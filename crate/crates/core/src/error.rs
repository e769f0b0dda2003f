use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the optimizer stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("value out of range: {0}")]
    Range(String),

    #[error("config syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("unknown task family `{0}`")]
    UnknownFamily(String),

    #[error("unknown key `{key}` in {context}")]
    UnknownKey { key: String, context: String },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("task rejection sampling exhausted after {attempts} attempts (budget {budget_s:e} s)")]
    RejectionExhausted { attempts: usize, budget_s: f64 },

    #[error("non-finite loss at step {step}: {context}")]
    NonFiniteLoss { step: u64, context: String },

    #[error("non-finite feature in tensor {tensor}")]
    NonFiniteFeature { tensor: usize },

    #[error("IDX parse error at byte offset {offset}: {message}")]
    Idx { offset: usize, message: String },

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("insufficient meta-gradients: need {needed}, have {available}")]
    InsufficientBatch { needed: usize, available: usize },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("curve file {path}: line {line}: {message}")]
    CurveFormat {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
