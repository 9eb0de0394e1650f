use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Shape { op: &'static str, left: Vec<usize>, right: Vec<usize> },

    #[error("softmax over an empty neighborhood (every position masked)")]
    EmptySoftmax,

    #[error("backward root must be a scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("record {id}: {message}")]
    Record { id: String, message: String },

    #[error("relation id {id} out of range for {count} relations")]
    RelationId { id: usize, count: usize },

    #[error("vocabulary mismatch: {0}")]
    Vocab(String),

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("AUROC undefined: {0}")]
    UndefinedMetric(String),

    #[error("non-finite gradient in parameter {0}")]
    NonFiniteGradient(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    // the cause is part of the message, so it is not exposed as a source
    #[error("{path}: {cause}")]
    Io { path: PathBuf, cause: std::io::Error },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, cause: std::io::Error) -> Self {
        Error::Io { path: path.into(), cause }
    }
}
