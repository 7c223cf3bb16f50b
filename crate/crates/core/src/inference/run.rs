//! Driving a chain: sweep scheduling, retained-sample extraction, and the
//! one-call convenience entry point.

use serde::{Deserialize, Serialize};

use super::chain::{ChainConfig, ChainState, SweepStats};
use crate::error::Result;
use crate::signal::ObservationSet;

/// Snapshot of one state inside a retained sample. The posterior IG
/// parameters fold the state's current rate and the power sums of its
/// assigned valid windows.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StateRecord {
    pub id: usize,
    /// Windows assigned to this state, including rejected ones.
    pub occupancy: usize,
    /// Assigned windows that carry observations.
    pub valid_occupancy: usize,
    /// Current IG rate per band.
    pub ig_rate: Vec<f64>,
    /// Sum of squared coefficients per band over assigned valid windows.
    pub power_sum: Vec<f64>,
    pub post_shape: Vec<f64>,
    pub post_rate: Vec<f64>,
    /// Current sampled power per band.
    pub psd: Vec<f64>,
}

/// One retained posterior sample.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PosteriorSample {
    pub iteration: u64,
    pub occupied: usize,
    pub trajectory: Vec<usize>,
    pub states: Vec<StateRecord>,
    pub init_counts: Vec<u64>,
    pub transition_counts: Vec<Vec<u64>>,
    pub log_joint: f64,
}

/// Owns a chain plus its observations and schedules sweeps.
pub struct ChainRunner {
    cfg: ChainConfig,
    obs: ObservationSet,
    state: ChainState,
}

impl ChainRunner {
    pub fn new(obs: ObservationSet, cfg: ChainConfig) -> Result<Self> {
        let state = ChainState::init(&obs, &cfg)?;
        Ok(ChainRunner { cfg, obs, state })
    }

    /// Resume from a checkpointed state.
    pub fn from_state(obs: ObservationSet, cfg: ChainConfig, state: ChainState) -> Result<Self> {
        cfg.validate()?;
        if state.trajectory.len() != obs.len() {
            return Err(crate::Error::validation(format!(
                "checkpoint trajectory covers {} windows, observations have {}",
                state.trajectory.len(),
                obs.len()
            )));
        }
        Ok(ChainRunner { cfg, obs, state })
    }

    pub fn config(&self) -> &ChainConfig {
        &self.cfg
    }

    pub fn state(&self) -> &ChainState {
        &self.state
    }

    pub fn observations(&self) -> &ObservationSet {
        &self.obs
    }

    pub fn into_state(self) -> ChainState {
        self.state
    }

    pub fn sweep(&mut self) -> Result<SweepStats> {
        self.state.sweep(&self.obs, &self.cfg)
    }

    /// Whether the sample at the current iteration should be retained.
    pub fn is_retained(&self) -> bool {
        let it = self.state.iteration;
        it > self.cfg.burn_in && (it - self.cfg.burn_in) % self.cfg.thin == 0
    }

    pub fn finished(&self) -> bool {
        self.state.iteration >= self.cfg.total_sweeps()
    }

    /// Snapshot the current chain state as a posterior sample.
    pub fn extract_sample(&self) -> PosteriorSample {
        let stats = self.state.emission_stats(&self.obs);
        let taper_count = self.obs.taper_count;
        let states = self
            .state
            .states
            .iter()
            .zip(&stats)
            .enumerate()
            .map(|(id, (emission, stat))| {
                let added = (stat.valid_windows * taper_count) as f64;
                StateRecord {
                    id,
                    occupancy: stat.windows,
                    valid_occupancy: stat.valid_windows,
                    ig_rate: emission.ig_rate.clone(),
                    power_sum: stat.power_sum.clone(),
                    post_shape: emission.ig_rate.iter().map(|_| self.cfg.ig_shape + added).collect(),
                    post_rate: emission
                        .ig_rate
                        .iter()
                        .zip(&stat.power_sum)
                        .map(|(&b, &ss)| b + ss)
                        .collect(),
                    psd: emission.psd.clone(),
                }
            })
            .collect();
        let (init_counts, transition_counts) = self.state.transition_counts();
        PosteriorSample {
            iteration: self.state.iteration,
            occupied: self.state.n_states(),
            trajectory: self.state.trajectory.clone(),
            states,
            init_counts,
            transition_counts,
            log_joint: self.state.log_joint(&self.obs, &self.cfg),
        }
    }

    /// Sweep to completion, invoking `on_sweep` after every sweep and
    /// `on_sample` for every retained sample. Returns the retained samples.
    pub fn run(
        &mut self,
        mut on_sweep: impl FnMut(u64, &SweepStats),
        mut on_sample: impl FnMut(&PosteriorSample),
    ) -> Result<Vec<PosteriorSample>> {
        let mut samples = Vec::new();
        while !self.finished() {
            let stats = self.sweep()?;
            on_sweep(self.state.iteration, &stats);
            if self.is_retained() {
                let sample = self.extract_sample();
                on_sample(&sample);
                samples.push(sample);
            }
        }
        Ok(samples)
    }
}

/// Full Gibbs run with the given configuration; deterministic in the seed.
pub fn run_chain(obs: ObservationSet, cfg: ChainConfig) -> Result<Vec<PosteriorSample>> {
    ChainRunner::new(obs, cfg)?.run(|_, _| {}, |_| {})
}
