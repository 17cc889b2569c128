//! Identification and prediction under latent label shift.
//!
//! Domains are mixtures of a fixed set of class-conditional distributions with
//! unknown, domain-specific class proportions. The pipeline recovers those
//! proportions and a per-domain label posterior from unlabelled data:
//!
//! 1. fit a domain discriminator `q(d|x)` ([`discriminator`]);
//! 2. cluster its outputs ([`discretize`]);
//! 3. factorize the cluster-given-domain table ([`factorize`]);
//! 4. turn the recovered class-given-domain matrix into posteriors ([`adjust`]).
//!
//! Numeric kernels are generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix `f64`.

pub mod adjust;
pub mod dataset;
pub mod discretize;
pub mod discriminator;
pub mod error;
pub mod eval;
pub mod factorize;
pub mod linalg;
pub mod params;
pub mod scalar;
pub mod selftest;
pub mod simplex;
pub mod synthgen;

pub use error::{Error, Result};
pub use params::ProblemParams;
pub use scalar::Scalar;

pub type Matrix = linalg::Matrix<f64>;
pub type SimplexVec = simplex::SimplexVec<f64>;
pub type StochasticMatrix = simplex::StochasticMatrix<f64>;
pub type ClusterModel = discretize::ClusterModel<f64>;
pub type FactorizationResult = factorize::FactorizationResult<f64>;
pub type Prediction = adjust::Prediction<f64>;
