use thiserror::Error;

/// Errors produced by the transport solver library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch { expected: Vec<usize>, actual: Vec<usize> },

    #[error("layout mismatch: expected {expected}, got {actual}")]
    LayoutMismatch {
        expected: &'static str,
        actual: &'static str,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("incompatible right-hand side: mean {mean:e} exceeds tolerance {tolerance:e}")]
    IncompatibleRhs { mean: f64, tolerance: f64 },

    #[error("conjugate gradient did not converge in {iterations} iterations (relative residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("solver diverged at iteration {iter}: objective {objective:e}")]
    Diverged { iter: usize, objective: f64 },

    #[error("invalid problem: {0}")]
    InvalidProblem(String),
}

pub type Result<T> = std::result::Result<T, Error>;
