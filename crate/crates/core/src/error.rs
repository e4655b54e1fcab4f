use thiserror::Error;

/// Errors raised while evaluating densities or fitting a mixture.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum CnError {
    #[error("{what} is not positive definite")]
    NotPositiveDefinite { what: String },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("component {component} is empty (effective size {size:.3e})")]
    EmptyComponent { component: usize, size: f64 },

    #[error("degenerate fit: {0}")]
    Degenerate(String),

    #[error("non-finite value at iteration {iteration}: {detail}")]
    NumericFailure { iteration: usize, detail: String },

    #[error("no successful fits: {0}")]
    AllFailed(String),

    #[error("input error: {0}")]
    Input(String),
}

pub type Result<T> = std::result::Result<T, CnError>;
