use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("empty manifest")]
    EmptyManifest,

    #[error("line {line}: {message}")]
    MalformedLine { line: usize, message: String },

    #[error("line {line}: unknown label {label:?}")]
    UnknownLabel { line: usize, label: String },

    #[error("duplicate id {0:?}")]
    DuplicateId(String),

    #[error("invalid language list: {0}")]
    LanguageList(String),

    #[error("not an embedding file")]
    NotEmbeddingFile,

    #[error("unsupported embedding file version {0}")]
    UnsupportedEmbeddingVersion(u32),

    #[error("truncated embedding payload: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },

    #[error("non-finite value in row {row}")]
    NonFinite { row: usize },

    #[error("unsupported model version {found} (expected {expected})")]
    UnsupportedModelVersion { found: u64, expected: u64 },

    #[error("model file: {0}")]
    Model(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("id {0:?} has no matching entry")]
    UnmatchedId(String),

    #[error("language {0:?} has no trials")]
    EmptyLanguage(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite objective at iteration {iteration}")]
    NonFiniteObjective { iteration: usize, point: Vec<f64> },

    #[error("audio: {0}")]
    Audio(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Tags an error with the pipeline stage it came from.
    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            Error::Stage { .. } => self,
            other => Error::Stage { stage, source: Box::new(other) },
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
