use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid shape {shape:?}: {reason}")]
    InvalidShape { shape: Vec<usize>, reason: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },

    #[error("unknown activation kind `{0}` (expected relu, sigmoid or softmax)")]
    UnknownActivation(String),

    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("layer {layer}: {reason}")]
    Layer { layer: usize, reason: String },

    #[error("metadata line {line}: {message}")]
    Metadata { line: usize, message: String },

    #[error("missing required column `{0}`")]
    MissingColumn(String),

    #[error("cannot weight a class with zero samples: {name} (index {index})")]
    ZeroClassCount { index: usize, name: String },

    #[error("ROC undefined without both classes")]
    RocUndefined,

    #[error("npy error at byte offset {offset}: {message}")]
    Npy { offset: usize, message: String },

    #[error("pgm error: {0}")]
    Pgm(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("missing image file {}", .0.display())]
    MissingImage(PathBuf),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
