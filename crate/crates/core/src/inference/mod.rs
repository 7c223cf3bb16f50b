//! Beam-sampling MCMC for the nonparametric spectral HMM.

mod chain;
mod run;

pub use chain::{ChainConfig, ChainState, EmissionState, EmissionStats, SweepStats, crf_table_count};
pub use run::{ChainRunner, PosteriorSample, StateRecord, run_chain};
