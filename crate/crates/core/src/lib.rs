//! Random-interlacement percolation on supercritical Galton-Watson trees.
//!
//! The crate computes the critical level `u*` above which the vacant set left
//! by random interlacements on a Galton-Watson tree (conditioned on survival)
//! has only finite clusters. The pipeline is
//!
//! * [`offspring`]: offspring law, generating function, extinction probability
//!   and the backbone (Harris) decomposition;
//! * [`treegen`] and [`sampling`]: truncated tree samplers;
//! * [`harmonic`]: escape probabilities, capacities and the site-percolation
//!   profile of the vacant cluster on a fixed tree;
//! * [`transforms`]: Monte Carlo Laplace transforms of the root capacity;
//! * [`solver`]: the critical level and the annealed survival probability;
//! * [`cluster`]: direct simulation of the vacant cluster;
//! * [`validate`]: the invariant suite used by the `validate` command.
//!
//! Numeric kernels are generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the scalar to `f64`, which is what the command-line tool uses.

// `!(x > 0)` style guards are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cluster;
pub mod error;
pub mod fmt;
pub mod harmonic;
pub mod offspring;
pub mod rng;
pub mod roots;
pub mod sampling;
pub mod scalar;
pub mod solver;
pub mod sum;
pub mod transforms;
pub mod tree;
pub mod treegen;
pub mod validate;

pub use error::{Error, Result};
pub use offspring::DistSpec;
pub use scalar::Scalar;
pub use tree::{NodeId, Tree, TreeKind};

pub type Offspring = offspring::OffspringDistribution<f64>;
pub type Offspring32 = offspring::OffspringDistribution<f32>;
pub type Backbone = offspring::BackboneView<f64>;
pub type EscapeTable = harmonic::EscapeTable<f64>;
pub type CapacityResult = harmonic::CapacityResult<f64>;
pub type ChiSampleSet = transforms::ChiSampleSet<f64>;
pub type ChiSampleSet32 = transforms::ChiSampleSet<f32>;
pub type McEstimate = transforms::McEstimate<f64>;
pub type SolverResult = solver::SolverResult<f64>;
pub type FixedPointResult = solver::FixedPointResult<f64>;
