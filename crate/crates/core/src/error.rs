use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing input file {0}")]
    MissingFile(PathBuf),

    #[error("{file}:{line}: malformed row: {reason}")]
    MalformedRow {
        file: String,
        line: usize,
        reason: String,
    },

    #[error("{file}:{line}: ragged feature row: expected {expected} features, found {found}")]
    RaggedFeatures {
        file: String,
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("{file}:{line}: label {label} outside [0, {num_classes})")]
    LabelOutOfRange {
        file: String,
        line: usize,
        label: i64,
        num_classes: usize,
    },

    #[error("{file}:{line}: edge endpoint `{node}` is not a known node id")]
    DanglingEndpoint {
        file: String,
        line: usize,
        node: String,
    },

    #[error("{file}:{line}: duplicate node id `{node}`")]
    DuplicateNode {
        file: String,
        line: usize,
        node: String,
    },

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value produced in {0}")]
    NumericOverflow(String),

    #[error("empty training mask")]
    EmptyMask,

    #[error("aggregation weights sum to {0}, expected 1")]
    WeightSum(f64),

    #[error("no client updates to aggregate")]
    NoUpdates,

    #[error("round {round}: hook failed: {source}")]
    Hook {
        round: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("degenerate embedding: mean dummy input {0:e} is too close to zero")]
    DegenerateEmbedding(f64),

    #[error("every inferred count was clamped to zero")]
    AllClamped,

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
