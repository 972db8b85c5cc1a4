//! Residual-diffusion document enhancement.
//!
//! A coarse regression U-Net recovers the low-frequency content of a degraded
//! page; a small conditional diffusion model then samples the high-frequency
//! residual between that coarse estimate and the clean page. Both networks are
//! trained jointly with a Laplacian frequency-separated loss and sampled with a
//! deterministic, zero-variance reverse process that works with any number of
//! steps.

#[cfg(feature = "cli")]
pub mod cli;
pub mod data;
pub mod error;
pub mod freqsep;
pub mod inference;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod rng;
pub mod schedule;
pub mod trainer;

pub use error::{Error, Result};
