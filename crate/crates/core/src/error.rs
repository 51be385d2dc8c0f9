use thiserror::Error;

/// Errors surfaced by the numerical routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("argument outside the function's domain: {0}")]
    Domain(String),

    #[error("normalization underflow: every supported outcome has effectively infinite cost")]
    NormalizationUnderflow,

    #[error("degenerate conditioning: conditional denominator below 1e-300")]
    DegenerateConditioning,

    #[error("diverged-path fraction {rate:.6} exceeds the 0.1% budget ({count}/{total} paths)")]
    ExcessiveDivergence {
        rate: f64,
        count: usize,
        total: usize,
    },

    #[error("solution lost positivity at t = {t}, x = {x} (y = {y})")]
    PositivityViolation { t: f64, x: f64, y: f64 },

    #[error("tridiagonal solve failed: {0}")]
    LinearSolve(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
