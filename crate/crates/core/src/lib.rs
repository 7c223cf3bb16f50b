//! Recurring oscillatory state discovery for long quasi-stationary time series.
//!
//! The crate splits a recording into non-overlapping windows, extracts
//! multitaper spectral observations per window, fits a nonparametric
//! (HDP) hidden Markov model over the windows with a beam sampler,
//! clusters the discovered states across subjects with a symmetric
//! KL divergence, and scores trajectories against reference stage
//! annotations.
//!
//! The `spindle` binary wires these stages into a file-based pipeline;
//! see the module docs and the README for formats and usage.


pub mod clustering;
pub mod error;
pub mod evaluation;

pub mod inference;
pub mod model;
pub mod pipeline;

pub mod rng;
pub mod signal;
pub mod simulator;

pub use error::{Error, Result};
