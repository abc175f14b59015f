use thiserror::Error;

/// Crate-wide error type. Variants map onto the failure surfaces of the
/// pipeline layers so callers can branch without string matching.
#[derive(Debug, Error)]
pub enum Error {
    #[error("embedding dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("text must be non-empty")]
    EmptyText,

    #[error("vector has zero norm")]
    ZeroNorm,

    #[error("turn index {got} is not greater than last appended index {last}")]
    NonMonotonicTurn { last: u64, got: u64 },

    #[error("turn belongs to user '{got}' but the buffer session is '{expected}'")]
    SessionMismatch { expected: String, got: String },

    #[error("invalid time window: start {start} is after end {end}")]
    InvalidTimeWindow { start: i64, end: i64 },

    #[error("invalid retrieval plan: {0}")]
    InvalidPlan(String),

    #[error("turn has no response text yet; summarize after the assistant reply")]
    MissingResponse,

    #[error("duplicate item id '{0}'")]
    DuplicateItem(String),

    #[error("edge endpoints must differ, got '{0}' twice")]
    SelfEdge(String),

    #[error("unknown item id '{0}'")]
    UnknownItem(String),

    #[error("structured output invalid at {path}: {reason}")]
    StructuredOutput { path: String, reason: String },

    #[error("no scripted fixture left for role '{role}' and payload hash {payload_hash}")]
    FixtureExhausted { role: String, payload_hash: String },

    #[error("model endpoint failure after {attempts} attempt(s): {detail}")]
    Endpoint { attempts: u32, detail: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("{file} line {line}: {reason}")]
    Snapshot {
        file: String,
        line: usize,
        reason: String,
    },

    #[error("snapshot format version {found} is not supported (expected {expected})")]
    SnapshotVersion { expected: u32, found: u32 },

    #[error("empty sample set")]
    EmptySamples,

    #[error("paired samples have different lengths: {a} vs {b}")]
    UnpairedSamples { a: usize, b: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
