use nalgebra::DVector;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("matrix is not symmetric positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("gaussian process fit failed: {0}")]
    FitFailure(String),

    #[error("numerical error: {0}")]
    Numeric(String),

    #[error("optimizer did not converge after {iterations} iterations (gradient norm {grad_norm:.3e})")]
    Optimization {
        iterations: usize,
        grad_norm: f64,
        best: DVector<f64>,
    },

    #[error("sampler aborted: {0}")]
    SamplerAbort(String),

    #[error("sinkhorn did not converge (marginal residual {residual:.3e})")]
    SinkhornNotConverged { residual: f64 },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
