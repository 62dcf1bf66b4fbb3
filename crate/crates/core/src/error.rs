use thiserror::Error;

/// Errors produced by the optimizer, the comparison sort and the session layer.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("parameter `{name}` is flagged positive but got {value}")]
    NonPositive { name: String, value: f64 },

    #[error("non-finite value {value} at component {index}")]
    NonFinite { index: usize, value: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("covariance factorization failed: {0}")]
    Factorization(String),

    #[error("ranking is not a permutation of the current generation: {0}")]
    NotAPermutation(String),

    #[error("duplicate candidate id {0}")]
    DuplicateCandidate(String),

    #[error("answer refers to query `{got}` but the pending query is {expected:?}")]
    StaleQuery { got: String, expected: Option<String> },

    #[error("a query is pending and no answer was supplied")]
    AnswerMissing,

    #[error("deferral requested but no heuristic is configured")]
    NoHeuristic,

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("degenerate training data: {0}")]
    DegenerateData(String),

    #[error("unknown session `{0}`")]
    UnknownSession(String),

    #[error("session `{0}` already exists")]
    DuplicateSession(String),

    #[error("invalid phase: {0}")]
    InvalidPhase(String),

    #[error("hook failed: {0}")]
    Hook(String),

    #[error("state snapshot: {0}")]
    Snapshot(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
