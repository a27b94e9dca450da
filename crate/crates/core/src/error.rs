use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Validation(String),

    /// The input admits no unique answer (reducible chain, absorbing state, ...).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("calibration failed: stationarity residual {residual:e} exceeds tolerance")]
    Calibration { residual: f64 },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("arithmetic overflow: {0}")]
    Overflow(String),

    #[error("size {size} exceeds configured cap {cap}")]
    CapExceeded { size: u64, cap: u64 },

    #[error("malformed policy file, line {line}: {msg}")]
    PolicyFormat { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::Validation(msg.into())
}
