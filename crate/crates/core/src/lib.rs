//! Myopic sequential Bayesian design for predator-prey functional response
//! experiments.
//!
//! The engine keeps a weighted particle approximation of the parameter
//! posterior for each candidate model (Holling type II/III × binomial /
//! beta-binomial), scores candidate initial prey densities by expected
//! parameter-estimation, model-discrimination or total-entropy utility, and
//! updates the particles as trial outcomes arrive. A Laplace/coordinate
//! exchange static designer and a batch study harness sit on top.
//!
//! Numerical code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the double-precision instantiation used by the CLI and service.

pub mod config_file;
pub mod error;
pub mod model;
pub mod rng;
pub mod scalar;
pub mod sequential;
pub mod serde_float;
pub mod smc;
pub mod static_design;
pub mod study;
pub mod utility;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type DesignStateF64 = smc::DesignState<f64>;
pub type DesignStateF32 = smc::DesignState<f32>;
pub type ParticleSetF64 = smc::ParticleSet<f64>;
pub type ParticleSetF32 = smc::ParticleSet<f32>;
pub type ModelSpecF64 = model::ModelSpec<f64>;
pub type ModelSpecF32 = model::ModelSpec<f32>;
pub type ParamsF64 = model::Params<f64>;
pub type ParamsF32 = model::Params<f32>;
pub type SessionF64 = sequential::Session<f64>;
pub type SessionF32 = sequential::Session<f32>;
