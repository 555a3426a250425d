//! Biclustering of binary bipartite networks with a mixture of latent trait
//! analyzers.
//!
//! Sending nodes (rows of the incidence matrix) are clustered into `G`
//! components whose probabilities depend on nodal covariates through a
//! multinomial logit. Within each component, receiving nodes (columns) are
//! partitioned into `D` segments. A `D`-dimensional Gaussian latent trait per
//! sending node captures residual heterogeneity. Estimation is by EM with
//! Gauss-Hermite quadrature and multiple random starts; [`inference`] adds
//! sandwich standard errors and BIC/ICL model selection, and [`simulation`]
//! regenerates simulation studies.
//!
//! The numerical core is generic over [`Scalar`] (`f32` or `f64`). The type
//! aliases below fix the scalar to `f64`, which is what the simulation
//! harness and the command-line tool use.

// NaN-rejecting guards are written as `!(x > 0)` on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod em;
pub mod error;
pub mod inference;
pub mod linalg;
pub mod model;
pub mod quadrature;
pub mod scalar;
pub mod simulation;

pub use em::{classify, fit, FitResult, Posterior};
pub use error::{Error, Result};
pub use model::{count_free_parameters, mixing_weights, CovariateMatrix, IncidenceMatrix, ModelConfig, ModelParams};
pub use quadrature::{build_grid, hermite_rule, QuadratureGrid};
pub use scalar::Scalar;

pub type Params = model::ModelParams<f64>;
pub type Covariates = model::CovariateMatrix<f64>;
pub type Grid = quadrature::QuadratureGrid<f64>;
pub type Fit = em::FitResult<f64>;
pub type PosteriorF64 = em::Posterior<f64>;
pub type Report = inference::InferenceReport<f64>;

pub type Params32 = model::ModelParams<f32>;
pub type Covariates32 = model::CovariateMatrix<f32>;
pub type Grid32 = quadrature::QuadratureGrid<f32>;
pub type Fit32 = em::FitResult<f32>;
