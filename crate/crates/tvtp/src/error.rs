//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TvtpError {
    /// Invalid parameter or argument values (non-finite inputs, σ ≤ 0, |ρ| ≥ 1, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// Numerical failure during a computation (underflow, singular matrix, zero SE, ...).
    #[error("numeric error: {0}")]
    Numeric(String),

    /// An enumeration guard was exceeded.
    #[error("size guard exceeded: {0}")]
    Size(String),

    /// Optimization failed on every start.
    #[error("estimation error: {0}")]
    Estimation(String),

    /// Malformed input data (CSV parse failures, bad headers, ...).
    #[error("data format error: {0}")]
    DataFormat(String),

    /// Invalid or incomplete run configuration.
    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TvtpError>;
