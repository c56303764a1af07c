use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("allocation weight {index} is {value}, expected a value in [0, 1]")]
    WeightOutOfRange { index: usize, value: f64 },

    #[error("allocation weights sum to {sum}, expected 1")]
    NotOnSimplex { sum: f64 },

    #[error("empty allocation")]
    EmptyAllocation,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("invalid context: {0}")]
    InvalidContext(String),

    #[error("exploration pair ({i}, {j}) invalid for K = {k}")]
    InvalidPair { i: usize, j: usize, k: usize },

    #[error("empty allocation grid")]
    EmptyGrid,

    #[error("empty exploration record")]
    EmptyRecord,

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("matrix is singular")]
    Singular,

    #[error("round {got} recorded out of order (expected {expected})")]
    OutOfOrder { expected: usize, got: usize },

    #[error("negative instantaneous regret {regret} at round {t}: oracle violated")]
    OracleViolated { t: usize, regret: f64 },

    #[error("ledgers have mismatched horizons ({first} vs {other})")]
    HorizonMismatch { first: usize, other: usize },

    #[error("unknown {kind} `{name}`")]
    Unknown { kind: &'static str, name: String },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
