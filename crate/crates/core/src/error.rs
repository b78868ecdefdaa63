use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("loss has no unmasked positions")]
    EmptyLoss,

    #[error("computation graph already consumed by a backward pass")]
    GraphConsumed,

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("missing gradient for parameter `{0}`")]
    IncompleteGradient(String),

    #[error("non-finite gradient for parameter `{0}`")]
    NumericGradient(String),

    #[error("gradient layout mismatch: {expected} vs {found}")]
    LayoutMismatch { expected: String, found: String },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("no sequence of length >= {seed_len} in seed pool")]
    PoolTooShort { seed_len: usize },

    #[error("sequence length {len} exceeds maximum {max}")]
    Length { len: usize, max: usize },

    #[error("token id {id} outside vocabulary of size {size}")]
    Vocab { id: usize, size: usize },

    #[error("length mismatch: gold has {gold} labels, prediction has {pred}")]
    Alignment { gold: usize, pred: usize },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension { op, detail: detail.into() }
    }

    /// True for failures of the numeric kind (non-finite values, empty losses).
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonFinite { .. } | Error::NumericGradient(_) | Error::EmptyLoss)
    }
}
