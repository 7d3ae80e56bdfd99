//! Bayesian mean and maximum-likelihood estimation of one- and two-qubit
//! density matrices from photon-counting data.
//!
//! States are represented through a hyperspherical parametrization of a
//! Cholesky factor, so every in-range parameter vector is a physical state.
//! The two-photon likelihood models qubit loss at each detector pathway and
//! marginalizes over the unknown number of emitted pairs, so no calibration
//! constants are needed.
//!
//! Module map:
//!
//! - [`density`]: parametrization, Haar measure, state metrics.
//! - [`single_qubit`]: closed-form estimators for the lossless single qubit.
//! - [`likelihood`]: loss-aware and traditional likelihoods, datasets.
//! - [`sampler`]: slice sampling, Gibbs sweeps, multi-chain burn-in.
//! - [`mle`]: adaptive-step gradient ascent.
//! - [`simulate`]: lossy two-photon experiment simulation and the
//!   estimator comparison study.
//! - [`cli`]: command-line driver and JSON reports.

// `!(x > 0.0)` is used on purpose so NaN inputs are rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// matrix kernels index several arrays with the same loop variable
#![allow(clippy::needless_range_loop)]

pub mod cli;
pub mod density;
pub mod error;
pub mod likelihood;
pub mod mle;
pub mod sampler;
pub mod simulate;
pub mod single_qubit;
pub mod stats;

mod exact;

pub use density::{BlochVector, DensityMatrix, HypersphericalParams};
pub use error::{Error, Result};
pub use likelihood::{
    Basis, BasisPair, EfficiencyMode, JointProbabilities, PathwayEfficiencies, SingleBasisCounts, TomographyDataset,
};
pub use sampler::{BurnInConfig, ParamSpec, PosteriorSamples};
pub use single_qubit::IdealCounts;
