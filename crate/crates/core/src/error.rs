use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix is not positive definite (offending pivot or eigenvalue {0:e})")]
    NotPositiveDefinite(f64),

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("tangent vector is attached to a different base point")]
    BaseMismatch,

    #[error("sample is empty")]
    EmptySample,

    #[error("bandwidth {0} is outside (0, 0.5]")]
    BandwidthOutOfRange(f64),

    #[error("estimated density {value:e} at grid node {node} of axis {axis} is degenerate")]
    DegenerateDensity { axis: usize, node: usize, value: f64 },

    #[error("backfitting did not converge after {sweeps} sweeps (last sup change {change:e})")]
    NoConvergence { sweeps: usize, change: f64 },

    #[error("predictor value {value} on axis {axis} is outside [0, 1]")]
    OutOfDomain { axis: usize, value: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),
}
