use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("assortment must contain at least one item")]
    EmptyAssortment,
    #[error("duplicate item index {0} in assortment")]
    DuplicateIndex(usize),
    #[error("item index {index} out of range for {n_items} items")]
    IndexOutOfRange { index: usize, n_items: usize },
    #[error("assortment of size {size} exceeds capacity {capacity}")]
    CapacityExceeded { size: usize, capacity: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("non-finite utility at position {0}")]
    NonFiniteUtility(usize),
    #[error("invalid value: {0}")]
    InvalidValue(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("missing linearization anchor for record {0}")]
    MissingAnchor(usize),
    #[error("round {round} is not past the exploration phase (t0 = {t0})")]
    ScheduleOutOfRange { round: usize, t0: usize },
    #[error("invalid capacity K = {capacity} for N = {n_items}")]
    InvalidK { capacity: usize, n_items: usize },
    #[error("solver method requires uniform revenues")]
    MethodRevenueMismatch,
    #[error("brute force limited to N <= {limit}, got N = {n_items}")]
    BruteForceLimitExceeded { n_items: usize, limit: usize },
    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),
    #[error("malformed CSV at row {row}, column {column}: {message}")]
    MalformedCsv {
        row: usize,
        column: usize,
        message: String,
    },
    #[error("config error: {0}")]
    Config(String),
    #[error("missing diagnostics: {0}")]
    MissingDiagnostics(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
