use thiserror::Error;

/// Errors produced by validation, fitting and inference routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-binary label {value} at row {row}")]
    NonBinaryLabel { row: usize, value: i64 },
    #[error("non-finite covariate at row {row}, column {col}")]
    NonFiniteCovariate { row: usize, col: usize },
    #[error("need at least {needed} rows, got {got}")]
    TooFewRows { needed: usize, got: usize },
    #[error("index {index} out of range for {len} columns")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("degenerate labels: all responses are identical")]
    DegenerateLabels,
    #[error("degenerate pilot: pilot coefficients have zero L1 norm")]
    DegeneratePilot,
    #[error("incompatible target: linear constraint system is inconsistent")]
    IncompatibleTarget,
    #[error("invalid probability {0}: entries must lie strictly inside (0, 1)")]
    InvalidProbability(f64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("every repro draw failed ({failed} of {total}); last error: {last}")]
    AllDrawsFailed {
        failed: usize,
        total: usize,
        last: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
