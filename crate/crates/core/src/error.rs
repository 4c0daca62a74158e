use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the resolution pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: empty input")]
    EmptyInput { path: PathBuf },

    #[error("{path}: malformed row {row}: {reason}")]
    MalformedRow {
        path: PathBuf,
        row: usize,
        reason: String,
    },

    #[error("duplicate record id {0:?}")]
    DuplicateId(String),

    #[error("record {record:?} has duplicate attribute {attribute:?}")]
    DuplicateAttribute { record: String, attribute: String },

    #[error("record id must be non-empty")]
    EmptyId,

    #[error("ground truth lists record {0:?} more than once")]
    DuplicateTruth(String),

    #[error("ground truth references unknown record {0:?}")]
    UnknownRecord(String),

    #[error("ground truth does not cover record {0:?}")]
    IncompleteTruth(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("embedding dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("embedding provider error: {0}")]
    EmbeddingProvider(String),

    #[error("no candidate representatives for record {0:?}")]
    NoCandidates(String),

    #[error("empty label distribution")]
    EmptyDistribution,

    #[error("unparseable oracle reply {0:?}")]
    ParseFailure(String),

    #[error("oracle choice {choice} outside 1..={count}")]
    ChoiceOutOfRange { choice: usize, count: usize },

    /// An oracle call failed after consuming tokens; the tokens are still billable.
    #[error("oracle call failed: {message}")]
    Oracle {
        message: String,
        tokens_in: u64,
        tokens_out: u64,
    },

    #[error("knapsack instance {instance}: {reason}")]
    Instance { instance: usize, reason: String },

    #[error("universe mismatch between clusterings: {0}")]
    UniverseMismatch(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}
