use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("no root: {0}")]
    NoRoot(String),

    #[error("singular system (condition estimate {condition:.3e})")]
    SingularSystem { condition: f64 },

    #[error("no convergence after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("eigen solver failure: {0}")]
    EigenFailure(String),

    #[error("no sign change of the growth rate for a = {wavenumber} on Ra in [{ra_lo}, {ra_hi}]")]
    NoBracket {
        wavenumber: f64,
        ra_lo: f64,
        ra_hi: f64,
    },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("leading mode is stationary; no oscillation cycle to sample")]
    Stationary,

    #[error("config error: {0}")]
    Config(String),
}
