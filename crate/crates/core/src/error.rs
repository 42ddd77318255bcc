use thiserror::Error;

/// Errors raised by the simulator.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid truncation dimension {dim} (need at least {min})")]
    InvalidDimension { dim: usize, min: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("{what} = {value} is out of range (supported maximum {max})")]
    OutOfRange {
        what: &'static str,
        value: usize,
        max: usize,
    },

    #[error("non-finite value for {0}")]
    NonFinite(&'static str),

    #[error("operator is not Hermitian (max deviation {deviation:e})")]
    NotHermitian { deviation: f64 },

    #[error("outcome density {density:e} is too small to condition on")]
    DegenerateConditioning { density: f64 },

    #[error("grid span {span} is narrower than the required {required}")]
    GridTooNarrow { span: f64, required: f64 },

    #[error(
        "truncation overflow: {mode} mode has occupation {occupation:e} in its top quarter at dim {dim}"
    )]
    TruncationOverflow {
        mode: &'static str,
        occupation: f64,
        dim: usize,
    },

    #[error("setup calibration residual {residual:e} exceeds {limit:e}")]
    SetupMismatch { residual: f64, limit: f64 },

    #[error("no outcome records to summarize")]
    EmptyRecords,
}

pub type Result<T> = std::result::Result<T, Error>;
