use thiserror::Error;

/// Failures raised while talking to an external scorer.
#[derive(Debug, Error)]
pub enum BridgeError {
    #[error("bridge request {id} timed out after {millis} ms")]
    Timeout { id: u64, millis: u64 },
    #[error("malformed bridge response: {0}")]
    Malformed(String),
    #[error("remote scorer error [{code}]: {message}")]
    RemoteError { code: String, message: String },
    #[error("bridge value out of range: {0}")]
    RangeViolation(String),
    #[error("bridge transport: {0}")]
    Transport(String),
    #[error("bad bridge endpoint `{0}`")]
    Endpoint(String),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("text is empty after tokenization")]
    EmptyText,
    #[error("sequence lengths differ ({left} vs {right})")]
    LengthMismatch { left: usize, right: usize },
    #[error("index {index} out of range for sequence of length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("invalid index set: {0}")]
    InvalidIndexSet(String),
    #[error("enumeration too large: {count:.0} items exceeds cap {cap}")]
    TooLarge { count: f64, cap: u64 },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("training dataset is empty")]
    EmptyDataset,
    #[error("ranking has {len} documents, need at least {need} for top-{k} certification")]
    ShortRanking { len: usize, need: usize, k: usize },
    #[error("certificates disagree on K ({0} vs {1})")]
    MixedK(usize, usize),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("attack budget too large: {0}")]
    BudgetTooLarge(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unknown {kind} `{id}`")]
    UnknownId { kind: &'static str, id: String },
    #[error("line {line}: text contains the reserved token [MASK]")]
    SentinelCollision { line: usize },
    #[error(transparent)]
    Bridge(#[from] BridgeError),
    #[error("scoring failed after {completed} of {total} copies: {source}")]
    ScoringFailed {
        completed: usize,
        total: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True if the root cause is a failure of the external scorer.
    pub fn is_bridge_failure(&self) -> bool {
        match self {
            Error::Bridge(_) => true,
            Error::ScoringFailed { source, .. } => source.is_bridge_failure(),
            _ => false,
        }
    }

    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
