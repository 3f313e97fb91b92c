use thiserror::Error;

/// Errors reported by the solvers, loaders and simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("feature length {len} out of range 1..={max}")]
    LengthOutOfRange { len: usize, max: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("transmission model: {0}")]
    Transmission(String),

    #[error("table line {line}, column {column}: {msg}")]
    Table { line: usize, column: usize, msg: String },

    #[error("covariance factorization failed at delta={delta}, l={len}")]
    Factorization { delta: usize, len: usize },

    #[error("no sign change on [{lo}, {hi}]: f(lo)={f_lo:e}, f(hi)={f_hi:e}")]
    NoSignChange { lo: f64, hi: f64, f_lo: f64, f_hi: f64 },

    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { what: &'static str, iterations: usize, residual: f64 },

    #[error("policy induces {classes} closed recurrent classes")]
    Multichain { classes: usize },

    #[error("instance too large: {0}")]
    TooLarge(String),

    #[error("channel constraint violated at slot {slot}: {used} > {capacity}")]
    ConstraintViolation { slot: u64, used: usize, capacity: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
