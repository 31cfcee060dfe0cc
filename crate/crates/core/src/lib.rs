//! Intrinsic additive regression for symmetric positive-definite matrix
//! responses with scalar predictors.
//!
//! The pipeline: compute the sample Fréchet mean, lift every response to the
//! tangent space there with the Riemannian log, estimate additive component
//! functions by smooth backfitting in orthonormal tangent coordinates, and map
//! the components back to the SPD group with the Lie exponential.

pub mod error;
pub mod geometry;
pub mod sbf;
pub mod sim;
pub mod smoothing;
pub mod spd;

pub use error::{Error, Result};
pub use geometry::{Geometry, LieGroup, LogCholesky, LogEuclidean, Metric, TangentBasis, TangentVector};
pub use sbf::{AdditiveFit, FitOptions, SampleTable};
pub use smoothing::{GridSpec, KernelFamily, KernelSpec};
pub use spd::{CholeskyFactor, LowerTriangular, SpdMatrix, SymmetricMatrix};
