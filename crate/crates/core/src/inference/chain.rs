//! Beam-sampler chain state and the full Gibbs sweep.
//!
//! One sweep runs: slice variables -> instantiate states until the slice
//! bound is covered -> trajectory by forward filtering / backward sampling
//! under the slice mask -> drop unoccupied states -> table counts ->
//! global stick weights -> concentrations -> transition rows -> emission
//! parameters. The stick weights and both concentrations are updated in
//! the collapsed (rows-integrated-out) representation before the rows are
//! re-instantiated; updating the rows first would break the blocked move.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{self, HyperPriors, InverseGamma};
use crate::rng;
use crate::signal::ObservationSet;

/// Sampler configuration. `thin` is the sweep interval between retained
/// samples after `burn_in` sweeps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub k_max: usize,
    pub burn_in: u64,
    pub n_samples: usize,
    pub thin: u64,
    pub seed: u64,
    pub hyper: HyperPriors,
    /// Fixed shape of the inverse-gamma prior on per-band power.
    pub ig_shape: f64,
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_max < 1 {
            return Err(Error::validation("k_max must be at least 1"));
        }
        if self.thin < 1 {
            return Err(Error::validation("thinning interval must be at least 1"));
        }
        if self.n_samples < 1 {
            return Err(Error::validation("need at least one retained sample"));
        }
        if !(self.ig_shape > 0.0) {
            return Err(Error::validation("IG shape must be positive"));
        }
        Ok(())
    }

    pub fn total_sweeps(&self) -> u64 {
        self.burn_in + self.n_samples as u64 * self.thin
    }
}

/// Per-state emission parameters: one power value and one IG rate per band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmissionState {
    pub psd: Vec<f64>,
    pub ig_rate: Vec<f64>,
}

/// Everything the sampler mutates, serializable for checkpointing.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainState {
    pub iteration: u64,
    pub gamma: f64,
    pub alpha: f64,
    /// Stick weights over instantiated states plus the remainder slot.
    pub base_weights: Vec<f64>,
    /// Initial-state distribution, one extra Dirichlet-process row.
    pub init_row: Vec<f64>,
    /// One row per instantiated state, each with a trailing remainder column.
    pub trans_rows: Vec<Vec<f64>>,
    pub states: Vec<EmissionState>,
    pub trajectory: Vec<usize>,
    pub slices: Vec<f64>,
    pub rng: ChaCha8Rng,
    /// Sweeps in which the truncation cap prevented full slice coverage.
    pub cap_hits: u64,
}

/// Diagnostics from one sweep.
#[derive(Debug, Clone, Copy)]
pub struct SweepStats {
    pub occupied: usize,
    pub log_joint: f64,
    pub capped: bool,
}

impl ChainState {
    /// All windows start in a single state; concentrations start at their
    /// hyperprior means so the state count can grow organically.
    pub fn init(obs: &ObservationSet, cfg: &ChainConfig) -> Result<Self> {
        cfg.validate()?;
        if obs.is_empty() {
            return Err(Error::validation("observation sequence is empty"));
        }
        if obs.valid_count() == 0 {
            return Err(Error::validation("no valid windows to fit"));
        }
        let mut rng = rng::seeded(cfg.seed);
        let gamma = cfg.hyper.gamma_shape / cfg.hyper.gamma_rate;
        let alpha = cfg.hyper.alpha_shape / cfg.hyper.alpha_rate;
        let base_weights = model::stick_breaking(gamma, 1, &mut rng);
        let init_row = model::sample_transition_row(alpha, &base_weights, &[0.0, 0.0], &mut rng);
        let trans_rows =
            vec![model::sample_transition_row(alpha, &base_weights, &[0.0, 0.0], &mut rng)];
        let states = vec![prior_emission_draw(cfg, &cfg.hyper, obs.band_count, &mut rng)];
        Ok(ChainState {
            iteration: 0,
            gamma,
            alpha,
            base_weights,
            init_row,
            trans_rows,
            states,
            trajectory: vec![0; obs.len()],
            slices: Vec::new(),
            rng,
            cap_hits: 0,
        })
    }

    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    /// One full Gibbs sweep.
    pub fn sweep(&mut self, obs: &ObservationSet, cfg: &ChainConfig) -> Result<SweepStats> {
        self.sample_slices()?;
        let u_min = self.slices.iter().cloned().fold(f64::INFINITY, f64::min);
        let capped = self.extend_states(u_min, cfg, obs.band_count);
        if capped {
            self.cap_hits += 1;
        }
        let log_lik = self.emission_table(obs);
        self.forward_filter_backward_sample(&log_lik, obs)?;
        self.compact();
        let (init_counts, counts) = self.transition_counts();
        let tables = self.sample_tables(&init_counts, &counts);
        self.resample_base_weights(&tables);
        self.resample_gamma(&tables, &cfg.hyper);
        self.resample_alpha(&init_counts, &counts, &tables, &cfg.hyper);
        self.resample_rows(&init_counts, &counts);
        self.resample_emissions(obs, cfg);
        self.iteration += 1;
        Ok(SweepStats {
            occupied: self.n_states(),
            log_joint: self.log_joint(obs, cfg),
            capped,
        })
    }

    /// Slice variables: one uniform draw under each realized transition
    /// probability along the current trajectory.
    pub fn sample_slices(&mut self) -> Result<()> {
        let t_len = self.trajectory.len();
        let mut slices = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let p = if t == 0 {
                self.init_row[self.trajectory[0]]
            } else {
                self.trans_rows[self.trajectory[t - 1]][self.trajectory[t]]
            };
            if !(p > 0.0) {
                return Err(Error::invariant(format!(
                    "zero transition probability on current trajectory at window {t}"
                )));
            }
            slices.push(rng::open_unit(&mut self.rng) * p);
        }
        self.slices = slices;
        Ok(())
    }

    /// Largest remainder-column mass over all rows, i.e. the most
    /// probability any state can still route to uninstantiated states.
    pub fn max_remainder(&self) -> f64 {
        let mut max = *self.init_row.last().expect("rows never empty");
        for row in &self.trans_rows {
            max = max.max(*row.last().expect("rows never empty"));
        }
        max
    }

    /// Break sticks until every remainder column is below `u_min`, so the
    /// slice-constrained trajectory sum is exact over instantiated states.
    /// Returns true when the truncation cap bit instead.
    pub fn extend_states(&mut self, u_min: f64, cfg: &ChainConfig, band_count: usize) -> bool {
        debug_assert!(u_min > 0.0);
        while self.max_remainder() >= u_min {
            if self.n_states() >= cfg.k_max {
                return true;
            }
            // split the global remainder
            let frac = rng::beta(1.0, self.gamma, &mut self.rng);
            let old_rem = self.base_weights.pop().expect("remainder present");
            let new_weight = frac * old_rem;
            let new_rem = (1.0 - frac) * old_rem;
            self.base_weights.push(new_weight);
            self.base_weights.push(new_rem);
            // split every row's remainder column in proportion
            let k_new = self.n_states();
            let alpha = self.alpha;
            let a_new = (alpha * new_weight).max(1e-300);
            let a_rem = (alpha * new_rem).max(1e-300);
            let rng = &mut self.rng;
            let mut split = |row: &mut Vec<f64>| {
                let row_rem = row.pop().expect("remainder present");
                let nu = rng::beta(a_new, a_rem, rng);
                row.push(nu * row_rem);
                row.push((1.0 - nu) * row_rem);
            };
            split(&mut self.init_row);
            for row in self.trans_rows.iter_mut() {
                split(row);
            }
            // fresh row and emission parameters for the new state
            let zeros = vec![0.0; self.base_weights.len()];
            let new_row =
                model::sample_transition_row(self.alpha, &self.base_weights, &zeros, &mut self.rng);
            self.trans_rows.push(new_row);
            self.states.push(prior_emission_draw_inner(
                cfg.ig_shape,
                &cfg.hyper,
                band_count,
                &mut self.rng,
            ));
            debug_assert_eq!(self.trans_rows.len(), k_new + 1);
        }
        false
    }

    /// Per-window, per-state emission log likelihood; zero rows for
    /// missing (rejected) windows.
    fn emission_table(&self, obs: &ObservationSet) -> Vec<Vec<f64>> {
        let k = self.n_states();
        obs.window_power
            .iter()
            .map(|w| match w {
                None => vec![0.0; k],
                Some(power) => self
                    .states
                    .iter()
                    .map(|s| {
                        model::emission_log_likelihood_from_power(power, obs.taper_count, &s.psd)
                    })
                    .collect(),
            })
            .collect()
    }

    /// Trajectory resample under the slice mask: transitions with
    /// probability above the slice contribute weight one, everything else
    /// is excluded. Messages live in log space so the surviving path can
    /// never round to zero, however mismatched two states' likelihoods are.
    fn forward_filter_backward_sample(
        &mut self,
        log_lik: &[Vec<f64>],
        obs: &ObservationSet,
    ) -> Result<()> {
        let t_len = obs.len();
        let k = self.n_states();
        let mut messages = vec![vec![f64::NEG_INFINITY; k]; t_len];
        for t in 0..t_len {
            let u = self.slices[t];
            let (head, tail) = messages.split_at_mut(t);
            let msg = &mut tail[0];
            for s in 0..k {
                let log_reach = if t == 0 {
                    if self.init_row[s] > u {
                        0.0
                    } else {
                        f64::NEG_INFINITY
                    }
                } else {
                    let prev_msg = &head[t - 1];
                    let mut max = f64::NEG_INFINITY;
                    for (s_prev, &m) in prev_msg.iter().enumerate() {
                        if m > max && self.trans_rows[s_prev][s] > u {
                            max = m;
                        }
                    }
                    if max == f64::NEG_INFINITY {
                        max
                    } else {
                        let mut acc = 0.0;
                        for (s_prev, &m) in prev_msg.iter().enumerate() {
                            // terms 40 nats under the max are irrelevant
                            if m - max > -40.0 && self.trans_rows[s_prev][s] > u {
                                acc += (m - max).exp();
                            }
                        }
                        max + acc.ln()
                    }
                };
                msg[s] = log_reach + log_lik[t][s];
            }
            let max = msg.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY || max.is_nan() {
                return Err(Error::numerical(format!(
                    "forward message vanished at window {t} (states={k}, slice={})",
                    self.slices[t]
                )));
            }
            msg.iter_mut().for_each(|m| *m -= max);
        }

        // backward sampling on shifted exponentials of the log messages
        let mut trajectory = vec![0usize; t_len];
        let to_weights = |log_w: Vec<f64>| -> Vec<f64> {
            let max = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            log_w.into_iter().map(|l| (l - max).exp()).collect()
        };
        trajectory[t_len - 1] =
            sample_categorical(&to_weights(messages[t_len - 1].clone()), &mut self.rng)?;
        for t in (0..t_len - 1).rev() {
            let next = trajectory[t + 1];
            let u = self.slices[t + 1];
            let log_w: Vec<f64> = (0..k)
                .map(|s| {
                    if self.trans_rows[s][next] > u {
                        messages[t][s]
                    } else {
                        f64::NEG_INFINITY
                    }
                })
                .collect();
            trajectory[t] = sample_categorical(&to_weights(log_w), &mut self.rng)?;
        }

        // the sampled path always respects the slice bounds that shaped it
        debug_assert!(self.init_row[trajectory[0]] > self.slices[0]);
        debug_assert!((1..t_len)
            .all(|t| self.trans_rows[trajectory[t - 1]][trajectory[t]] > self.slices[t]));

        self.trajectory = trajectory;
        Ok(())
    }

    /// Drop instantiated-but-unoccupied states, folding their stick mass
    /// and row columns back into the remainder. Relabels occupied states
    /// contiguously, preserving order.
    fn compact(&mut self) {
        let k = self.n_states();
        let mut used = vec![false; k];
        for &s in &self.trajectory {
            used[s] = true;
        }
        if used.iter().all(|&u| u) {
            return;
        }
        let mut relabel = vec![usize::MAX; k];
        let mut next = 0;
        for s in 0..k {
            if used[s] {
                relabel[s] = next;
                next += 1;
            }
        }
        for s in self.trajectory.iter_mut() {
            *s = relabel[*s];
        }
        let fold = |row: &Vec<f64>| -> Vec<f64> {
            let mut out: Vec<f64> = Vec::with_capacity(next + 1);
            let mut rem = *row.last().expect("remainder present");
            for (s, &w) in row[..k].iter().enumerate() {
                if used[s] {
                    out.push(w);
                } else {
                    rem += w;
                }
            }
            out.push(rem);
            out
        };
        self.base_weights = fold(&self.base_weights);
        self.init_row = fold(&self.init_row);
        let rows = std::mem::take(&mut self.trans_rows);
        self.trans_rows = rows
            .into_iter()
            .enumerate()
            .filter(|(s, _)| used[*s])
            .map(|(_, row)| fold(&row))
            .collect();
        let states = std::mem::take(&mut self.states);
        self.states =
            states.into_iter().enumerate().filter(|(s, _)| used[*s]).map(|(_, st)| st).collect();
    }

    /// Transition counts along the trajectory: the initial row's single
    /// count plus the full lag-one count matrix.
    pub fn transition_counts(&self) -> (Vec<u64>, Vec<Vec<u64>>) {
        let k = self.n_states();
        let mut init = vec![0u64; k];
        let mut counts = vec![vec![0u64; k]; k];
        init[self.trajectory[0]] += 1;
        for w in self.trajectory.windows(2) {
            counts[w[0]][w[1]] += 1;
        }
        (init, counts)
    }

    /// Chinese-restaurant-franchise table counts for every (row, column)
    /// pair with transitions: the i-th customer opens a new table with
    /// probability a/(a+i-1) where a is the scaled base weight.
    fn sample_tables(&mut self, init_counts: &[u64], counts: &[Vec<u64>]) -> Vec<Vec<u64>> {
        let k = self.n_states();
        let mut tables = vec![vec![0u64; k]; k + 1];
        for (row_idx, row_counts) in
            std::iter::once(init_counts).chain(counts.iter().map(|r| &r[..])).enumerate()
        {
            for (col, &c) in row_counts.iter().enumerate() {
                if c == 0 {
                    continue;
                }
                let a = (self.alpha * self.base_weights[col]).max(1e-300);
                tables[row_idx][col] = crf_table_count(a, c, &mut self.rng);
            }
        }
        tables
    }

    /// Stick weights given table counts: Dirichlet over per-state table
    /// totals with the top-level concentration on the remainder.
    fn resample_base_weights(&mut self, tables: &[Vec<u64>]) {
        let k = self.n_states();
        let mut alphas: Vec<f64> = (0..k)
            .map(|col| tables.iter().map(|row| row[col]).sum::<u64>() as f64)
            .collect();
        alphas.push(self.gamma);
        debug_assert!(alphas[..k].iter().all(|&a| a >= 1.0), "occupied state without tables");
        self.base_weights = rng::dirichlet(&alphas, &mut self.rng);
    }

    /// Top-level concentration: auxiliary-beta plus gamma-mixture update
    /// given the number of occupied states and total tables.
    fn resample_gamma(&mut self, tables: &[Vec<u64>], hyper: &HyperPriors) {
        let k = self.n_states() as f64;
        let total: u64 = tables.iter().map(|r| r.iter().sum::<u64>()).sum();
        if total == 0 {
            self.gamma = rng::gamma(hyper.gamma_shape, hyper.gamma_rate, &mut self.rng);
            return;
        }
        let eta = rng::beta(self.gamma + 1.0, total as f64, &mut self.rng);
        let shape = hyper.gamma_shape + k;
        let rate = hyper.gamma_rate - eta.ln();
        let odds = (shape - 1.0) / (total as f64 * rate);
        let take_larger = self.rng.gen::<f64>() < odds / (1.0 + odds);
        let final_shape = if take_larger { shape } else { shape - 1.0 };
        self.gamma = rng::gamma(final_shape, rate, &mut self.rng);
    }

    /// Row concentration: one beta/Bernoulli auxiliary pair per row with
    /// customers, then a gamma draw.
    fn resample_alpha(
        &mut self,
        init_counts: &[u64],
        counts: &[Vec<u64>],
        tables: &[Vec<u64>],
        hyper: &HyperPriors,
    ) {
        let total_tables: u64 = tables.iter().map(|r| r.iter().sum::<u64>()).sum();
        let mut s_sum = 0.0;
        let mut log_w_sum = 0.0;
        let row_customers = std::iter::once(init_counts.iter().sum::<u64>())
            .chain(counts.iter().map(|r| r.iter().sum::<u64>()));
        for n_j in row_customers {
            if n_j == 0 {
                continue;
            }
            let w = rng::beta(self.alpha + 1.0, n_j as f64, &mut self.rng);
            log_w_sum += w.ln();
            if self.rng.gen::<f64>() < n_j as f64 / (n_j as f64 + self.alpha) {
                s_sum += 1.0;
            }
        }
        // every row with customers contributes at least one table, so the
        // shape stays positive
        let shape = hyper.alpha_shape + total_tables as f64 - s_sum;
        let rate = hyper.alpha_rate - log_w_sum;
        self.alpha = rng::gamma(shape, rate, &mut self.rng);
    }

    /// Re-instantiate the initial row and all transition rows from their
    /// Dirichlet conditionals.
    fn resample_rows(&mut self, init_counts: &[u64], counts: &[Vec<u64>]) {
        let k = self.n_states();
        let as_f64 = |cs: &[u64]| -> Vec<f64> {
            let mut v: Vec<f64> = cs.iter().map(|&c| c as f64).collect();
            v.push(0.0);
            debug_assert_eq!(v.len(), k + 1);
            v
        };
        self.init_row = model::sample_transition_row(
            self.alpha,
            &self.base_weights,
            &as_f64(init_counts),
            &mut self.rng,
        );
        self.trans_rows = counts
            .iter()
            .map(|row| {
                model::sample_transition_row(
                    self.alpha,
                    &self.base_weights,
                    &as_f64(row),
                    &mut self.rng,
                )
            })
            .collect();
    }

    /// Per-state per-band conjugate updates: power from its inverse-gamma
    /// posterior, then the IG rate from its gamma posterior.
    fn resample_emissions(&mut self, obs: &ObservationSet, cfg: &ChainConfig) {
        let stats = self.emission_stats(obs);
        for (state, stat) in self.states.iter_mut().zip(&stats) {
            for band in 0..obs.band_count {
                let prior = InverseGamma::new(cfg.ig_shape, state.ig_rate[band]);
                let post =
                    model::psd_posterior(prior, stat.valid_windows, obs.taper_count, stat.power_sum[band]);
                state.psd[band] = post.sample(&mut self.rng);
                state.ig_rate[band] = model::sample_b_posterior(
                    cfg.hyper.b_shape,
                    cfg.hyper.b_rate,
                    cfg.ig_shape,
                    &state.psd[band..band + 1],
                    &mut self.rng,
                );
            }
        }
    }

    /// Occupancy and per-band power sums per state under the current
    /// trajectory.
    pub fn emission_stats(&self, obs: &ObservationSet) -> Vec<EmissionStats> {
        let k = self.n_states();
        let mut stats = vec![
            EmissionStats {
                windows: 0,
                valid_windows: 0,
                power_sum: vec![0.0; obs.band_count],
            };
            k
        ];
        for (t, &s) in self.trajectory.iter().enumerate() {
            stats[s].windows += 1;
            if let Some(power) = &obs.window_power[t] {
                stats[s].valid_windows += 1;
                for (acc, &p) in stats[s].power_sum.iter_mut().zip(power) {
                    *acc += p;
                }
            }
        }
        stats
    }

    /// Log density of the instantiated variables: trajectory, emissions,
    /// priors on the emission parameters, and the concentration
    /// hyperpriors. A diagnostic trace quantity, not a marginal likelihood.
    pub fn log_joint(&self, obs: &ObservationSet, cfg: &ChainConfig) -> f64 {
        let mut total = 0.0;
        total += self.init_row[self.trajectory[0]].ln();
        for w in self.trajectory.windows(2) {
            total += self.trans_rows[w[0]][w[1]].ln();
        }
        for (t, &s) in self.trajectory.iter().enumerate() {
            if let Some(power) = &obs.window_power[t] {
                total += model::emission_log_likelihood_from_power(
                    power,
                    obs.taper_count,
                    &self.states[s].psd,
                );
            }
        }
        for state in &self.states {
            for (&f, &b) in state.psd.iter().zip(&state.ig_rate) {
                total += InverseGamma::new(cfg.ig_shape, b).log_density(f);
                total += model::gamma_log_density(b, cfg.hyper.b_shape, cfg.hyper.b_rate);
            }
        }
        total += model::gamma_log_density(self.gamma, cfg.hyper.gamma_shape, cfg.hyper.gamma_rate);
        total += model::gamma_log_density(self.alpha, cfg.hyper.alpha_shape, cfg.hyper.alpha_rate);
        total
    }
}

/// Occupancy and sufficient statistics for one state.
#[derive(Debug, Clone)]
pub struct EmissionStats {
    pub windows: usize,
    pub valid_windows: usize,
    pub power_sum: Vec<f64>,
}

fn prior_emission_draw(
    cfg: &ChainConfig,
    hyper: &HyperPriors,
    band_count: usize,
    rng: &mut ChaCha8Rng,
) -> EmissionState {
    prior_emission_draw_inner(cfg.ig_shape, hyper, band_count, rng)
}

fn prior_emission_draw_inner(
    ig_shape: f64,
    hyper: &HyperPriors,
    band_count: usize,
    rng: &mut ChaCha8Rng,
) -> EmissionState {
    let mut psd = Vec::with_capacity(band_count);
    let mut ig_rate = Vec::with_capacity(band_count);
    for _ in 0..band_count {
        let b = rng::gamma(hyper.b_shape, hyper.b_rate, rng);
        let f = InverseGamma::new(ig_shape, b).sample(rng);
        ig_rate.push(b);
        psd.push(f);
    }
    EmissionState { psd, ig_rate }
}

/// Number of tables `c` customers open in a restaurant with scaled base
/// weight `a`: customer `i` opens a new table with probability
/// `a / (a + i - 1)`.
pub fn crf_table_count<R: Rng + ?Sized>(a: f64, customers: u64, rng: &mut R) -> u64 {
    if customers == 0 {
        return 0;
    }
    let mut m = 1u64;
    for i in 2..=customers {
        if rng.gen::<f64>() < a / (a + (i - 1) as f64) {
            m += 1;
        }
    }
    m
}

fn sample_categorical<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> Result<usize> {
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::numerical("all categorical weights vanished"));
    }
    let u = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return Ok(i);
        }
    }
    Ok(weights.iter().rposition(|&w| w > 0.0).expect("positive weight exists"))
}
