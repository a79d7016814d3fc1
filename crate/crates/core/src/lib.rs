//! Bayesian penalized B-spline estimation of under-five mortality (U5MR)
//! from sparse, multi-source country time series.
//!
//! The pipeline is `ingest` → `model` assembly → `sampler` (adaptive
//! Metropolis-within-Gibbs) → `project` (logarithmically pooled
//! extrapolation) → `validate` (out-of-sample harness). All heavy loops
//! (chains, projection draws, validation sets) go through [`par`], which
//! uses rayon when the `parallel` feature is enabled and falls back to
//! plain iteration otherwise.

pub mod basis;
pub mod error;
pub mod hyper;
pub mod ingest;
pub mod model;
pub mod output;
pub mod par;
pub mod project;
pub mod sampler;
pub mod stats;
pub mod synth;
pub mod types;
pub mod validate;
pub use error::{Error, Result};
pub use types::{Observation, SeriesMeta, SourceSubtype, SourceType, VrStatus};
