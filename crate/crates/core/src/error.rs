use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: malformed record: {message}")]
    MalformedRecord { line: usize, message: String },

    #[error("duplicate sample id {0:?}")]
    DuplicateId(String),

    #[error("sample {id:?} is missing required field {field:?}")]
    MissingField { id: String, field: &'static str },

    #[error("non-contiguous time_index: {0}")]
    NonContiguousTime(String),

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("no embedding for sample {0:?}")]
    MissingEmbedding(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("zero-norm embedding for sample {0:?}")]
    ZeroNorm(String),

    #[error("tag {0:?} is not in the vocabulary")]
    TagOutsideVocab(String),

    #[error("predicate {0:?} has no structured rule; the oracle backend cannot ground it")]
    RuleRequired(String),

    #[error("predicate text must be non-empty")]
    EmptyPredicate,

    #[error("backend unavailable after {retries} retries: {message}")]
    BackendUnavailable { retries: usize, message: String },

    #[error("authentication failed: {0}")]
    Authentication(String),

    #[error("backend error: {0}")]
    Backend(String),

    #[error("template {template:?}: placeholder {{{name}}} is unbound")]
    UnboundPlaceholder { template: String, name: String },

    #[error("template {template:?}: {message}")]
    Template { template: String, message: String },

    #[error("no candidates")]
    NoCandidates,

    #[error("non-finite input: {0}")]
    NonFinite(&'static str),

    #[error("optimizer diverged: {0}")]
    Divergence(String),

    #[error("label {label} out of range for {classes} classes (sample {index})")]
    LabelOutOfRange {
        index: usize,
        label: usize,
        classes: usize,
    },

    #[error("cache conflict for predicate {pred} on sample {sid:?}: stored {stored}, new {new}")]
    CacheConflict {
        pred: String,
        sid: String,
        stored: u8,
        new: u8,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

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
}
