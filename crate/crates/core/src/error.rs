use thiserror::Error;

/// Errors produced by the simulation and estimation routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("input too short: {0}")]
    Length(String),

    #[error("circulant embedding has eigenvalue {eigenvalue:e} below tolerance (max eigenvalue {max:e})")]
    Embedding { eigenvalue: f64, max: f64 },

    #[error("Euler scheme overflow at step {step}: |Y| = {value:e}")]
    Overflow { step: usize, value: f64 },

    #[error("time step {step} exceeds stability bound gamma_0 = {gamma0}")]
    StepTooLarge { step: f64, gamma0: f64 },

    #[error("quadrature failed: {0}")]
    Quadrature(String),

    #[error("covariance is not positive semi-definite: eigenvalue {eigenvalue:e}, trace {trace:e}")]
    NotPsd { eigenvalue: f64, trace: f64 },

    #[error("factorization failed: {0}")]
    Factorization(String),

    #[error("optimizer diverged: coordinate {coordinate} pinned to the box edge in {pinned} of {iterations} iterations")]
    Divergence {
        coordinate: usize,
        pinned: usize,
        iterations: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
