//! Ground-truth generator: a Markov chain over latent stages, each stage
//! emitting the sum of damped stochastic oscillators through a linear
//! state-space recursion, plus a closed-form stationary PSD per stage.
//!
//! The latent state evolves as `x[l+1] = R x[l] + v[l]` with `R` block
//! diagonal over 2x2 damped rotations and isotropic per-block process
//! noise; the observation sums the first component of every block plus
//! white noise.

use rand::Rng;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// One damped oscillator: peak frequency, damping in (0, 1), and the
/// process-noise variance driving its two state components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OscillatorSpec {
    pub freq_hz: f64,
    pub damping: f64,
    pub noise_var: f64,
}

/// A latent stage: a set of oscillators plus observation-noise variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimStage {
    pub oscillators: Vec<OscillatorSpec>,
    pub obs_noise_var: f64,
}

impl SimStage {
    fn validate(&self, fs: f64) -> Result<()> {
        if self.oscillators.is_empty() {
            return Err(Error::validation("stage needs at least one oscillator"));
        }
        for osc in &self.oscillators {
            if !(osc.damping > 0.0 && osc.damping < 1.0) {
                return Err(Error::validation(format!(
                    "oscillator damping {} outside (0, 1)",
                    osc.damping
                )));
            }
            if !(osc.freq_hz >= 0.0 && osc.freq_hz < fs / 2.0) {
                return Err(Error::validation(format!(
                    "oscillator frequency {} Hz outside [0, {})",
                    osc.freq_hz,
                    fs / 2.0
                )));
            }
            if !(osc.noise_var > 0.0) {
                return Err(Error::validation("oscillator noise variance must be positive"));
            }
        }
        if !(self.obs_noise_var >= 0.0) {
            return Err(Error::validation("observation noise variance must be nonnegative"));
        }
        Ok(())
    }

    /// Slowest decay time constant, in samples.
    fn max_time_constant(&self) -> f64 {
        self.oscillators.iter().map(|o| -1.0 / o.damping.ln()).fold(0.0, f64::max)
    }
}

/// Block-diagonal transition matrix: one damped proper rotation per
/// oscillator, blocks stored row-major as `[r00, r01, r10, r11]`.
#[derive(Debug, Clone)]
pub struct BlockRotation {
    blocks: Vec<[f64; 4]>,
}

impl BlockRotation {
    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    pub fn blocks(&self) -> &[[f64; 4]] {
        &self.blocks
    }

    /// Dense 2D x 2D matrix form.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = 2 * self.blocks.len();
        let mut dense = vec![vec![0.0; n]; n];
        for (i, b) in self.blocks.iter().enumerate() {
            dense[2 * i][2 * i] = b[0];
            dense[2 * i][2 * i + 1] = b[1];
            dense[2 * i + 1][2 * i] = b[2];
            dense[2 * i + 1][2 * i + 1] = b[3];
        }
        dense
    }

    /// Advance the latent state in place, adding per-block isotropic noise.
    fn step<R: Rng + ?Sized>(&self, specs: &[OscillatorSpec], x: &mut [f64], rng: &mut R) {
        for (i, (b, osc)) in self.blocks.iter().zip(specs).enumerate() {
            let (x0, x1) = (x[2 * i], x[2 * i + 1]);
            let sd = osc.noise_var.sqrt();
            x[2 * i] = b[0] * x0 + b[1] * x1 + rng::normal(0.0, sd, rng);
            x[2 * i + 1] = b[2] * x0 + b[3] * x1 + rng::normal(0.0, sd, rng);
        }
    }

    /// Observation row: sum of the first component of each block.
    fn observe<R: Rng + ?Sized>(&self, x: &[f64], obs_sd: f64, rng: &mut R) -> f64 {
        let sum: f64 = (0..self.blocks.len()).map(|i| x[2 * i]).sum();
        sum + rng::normal(0.0, obs_sd, rng)
    }
}

/// Build the block-diagonal rotation for a stage's oscillators: each block
/// is `damping * [[cos t, -sin t], [sin t, cos t]]` with
/// `t = 2 pi freq / fs`, a proper rotation so the eigenvalue moduli equal
/// the damping.
pub fn build_block_rotation(specs: &[OscillatorSpec], fs: f64) -> Result<BlockRotation> {
    let mut blocks = Vec::with_capacity(specs.len());
    for osc in specs {
        if !(osc.damping > 0.0 && osc.damping < 1.0) {
            return Err(Error::validation(format!(
                "oscillator damping {} outside (0, 1)",
                osc.damping
            )));
        }
        let theta = 2.0 * std::f64::consts::PI * osc.freq_hz / fs;
        let (sin, cos) = theta.sin_cos();
        let a = osc.damping;
        blocks.push([a * cos, -a * sin, a * sin, a * cos]);
    }
    Ok(BlockRotation { blocks })
}

/// Simulated recording with its generating truth.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimGroundTruth {
    pub fs: f64,
    pub window_len: usize,
    pub stage_seq: Vec<usize>,
    pub samples: Vec<f64>,
    pub transition: Vec<Vec<f64>>,
}

/// Warm-up length used when the latent state is re-equilibrated on a stage
/// switch: 100 times the slowest decay constant.
fn warmup_len(stage: &SimStage) -> usize {
    (100.0 * stage.max_time_constant()).ceil().max(1.0) as usize
}

/// Simulate `n_windows` windows of `window_len` samples. The stage chain
/// moves once per window; the oscillator state carries across window
/// boundaries within a stage and is re-equilibrated on switches.
pub fn simulate(
    stages: &[SimStage],
    transition: &[Vec<f64>],
    n_windows: usize,
    window_len: usize,
    fs: f64,
    seed: u64,
) -> Result<SimGroundTruth> {
    if stages.is_empty() || n_windows == 0 || window_len == 0 {
        return Err(Error::validation("need at least one stage and a positive grid"));
    }
    for stage in stages {
        stage.validate(fs)?;
    }
    if transition.len() != stages.len() {
        return Err(Error::validation("transition matrix size does not match stage count"));
    }
    for row in transition {
        if row.len() != stages.len() {
            return Err(Error::validation("transition matrix must be square"));
        }
        let sum: f64 = row.iter().sum();
        if row.iter().any(|&p| p < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::validation(format!("transition row sums to {sum}, not 1")));
        }
    }

    let rotations: Vec<BlockRotation> =
        stages.iter().map(|s| build_block_rotation(&s.oscillators, fs)).collect::<Result<_>>()?;

    let mut rng = rng::seeded(seed);
    let mut stage_seq = Vec::with_capacity(n_windows);
    let mut current = rng.gen_range(0..stages.len());
    stage_seq.push(current);
    for _ in 1..n_windows {
        let row = &transition[current];
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut next = stages.len() - 1;
        for (k, &p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                next = k;
                break;
            }
        }
        current = next;
        stage_seq.push(current);
    }

    let mut samples = Vec::with_capacity(n_windows * window_len);
    let mut x: Vec<f64> = Vec::new();
    let mut prev_stage = usize::MAX;
    for &stage_idx in &stage_seq {
        let stage = &stages[stage_idx];
        let rot = &rotations[stage_idx];
        if stage_idx != prev_stage {
            x = vec![0.0; 2 * stage.oscillators.len()];
            for _ in 0..warmup_len(stage) {
                rot.step(&stage.oscillators, &mut x, &mut rng);
            }
            prev_stage = stage_idx;
        }
        let obs_sd = stage.obs_noise_var.sqrt();
        for _ in 0..window_len {
            rot.step(&stage.oscillators, &mut x, &mut rng);
            samples.push(rot.observe(&x, obs_sd, &mut rng));
        }
    }

    Ok(SimGroundTruth {
        fs,
        window_len,
        stage_seq,
        samples,
        transition: transition.to_vec(),
    })
}

/// Exact stationary PSD of a stage at the given frequencies, expressed on
/// the same scale as the one-sided multitaper estimate for windows of
/// `window_len` samples (unit-energy tapers with the 1/J DFT convention).
pub fn theoretical_psd(stage: &SimStage, fs: f64, window_len: usize, freqs_hz: &[f64]) -> Result<Vec<f64>> {
    stage.validate(fs)?;
    let rot = build_block_rotation(&stage.oscillators, fs)?;
    let scale = 1.0 / (window_len as f64 * window_len as f64);
    Ok(freqs_hz
        .iter()
        .map(|&f| {
            let omega = 2.0 * std::f64::consts::PI * f / fs;
            let z = Complex64::new(0.0, -omega).exp();
            let mut density = stage.obs_noise_var;
            for (block, osc) in rot.blocks().iter().zip(&stage.oscillators) {
                // first row of (I - R_i z)^-1
                let b00 = Complex64::new(1.0, 0.0) - z * block[0];
                let b01 = -z * block[1];
                let b10 = -z * block[2];
                let b11 = Complex64::new(1.0, 0.0) - z * block[3];
                let det = b00 * b11 - b01 * b10;
                let h0 = b11 / det;
                let h1 = -b01 / det;
                density += osc.noise_var * (h0.norm_sqr() + h1.norm_sqr());
            }
            density * scale
        })
        .collect())
}

/// One-sided DFT bin frequencies in Hz for a window of `window_len`
/// samples at `fs` Hz.
pub fn bin_frequencies(fs: f64, window_len: usize) -> Vec<f64> {
    (0..window_len / 2).map(|j| fs * j as f64 / window_len as f64).collect()
}

/// Five-stage test fixture for a 40 Hz grid, ordered by increasing
/// alpha-band (10.5-12.5 Hz) share so stage index doubles as an arousal
/// proxy. Returns the stages and a persistent transition matrix.
pub fn five_stage_fixture() -> (Vec<SimStage>, Vec<Vec<f64>>) {
    let osc = |freq_hz: f64, damping: f64, noise_var: f64| OscillatorSpec {
        freq_hz,
        damping,
        noise_var,
    };
    let stages = vec![
        // deep slow
        SimStage { oscillators: vec![osc(1.2, 0.96, 3.0)], obs_noise_var: 0.5 },
        // slow plus spindle-like burst band
        SimStage {
            oscillators: vec![osc(1.2, 0.93, 1.2), osc(14.0, 0.9, 0.5), osc(11.5, 0.85, 0.12)],
            obs_noise_var: 0.5,
        },
        // theta with a little alpha
        SimStage {
            oscillators: vec![osc(6.0, 0.94, 1.4), osc(11.5, 0.88, 0.3)],
            obs_noise_var: 0.5,
        },
        // mixed mid-band with stronger alpha
        SimStage {
            oscillators: vec![osc(6.0, 0.85, 0.5), osc(11.5, 0.9, 0.7)],
            obs_noise_var: 0.7,
        },
        // wake-like alpha dominance
        SimStage {
            oscillators: vec![osc(11.5, 0.96, 1.6)],
            obs_noise_var: 0.6,
        },
    ];
    let transition = persistent_transition(5, 0.88);
    (stages, transition)
}

/// Three-stage miniature of the five-stage fixture, used by the demo run.
pub fn three_stage_fixture() -> (Vec<SimStage>, Vec<Vec<f64>>) {
    let osc = |freq_hz: f64, damping: f64, noise_var: f64| OscillatorSpec {
        freq_hz,
        damping,
        noise_var,
    };
    let stages = vec![
        SimStage { oscillators: vec![osc(1.2, 0.95, 2.5)], obs_noise_var: 0.5 },
        SimStage {
            oscillators: vec![osc(6.0, 0.93, 1.2), osc(11.5, 0.86, 0.25)],
            obs_noise_var: 0.5,
        },
        SimStage { oscillators: vec![osc(11.5, 0.95, 1.4)], obs_noise_var: 0.6 },
    ];
    let transition = persistent_transition(3, 0.86);
    (stages, transition)
}

/// Row-stochastic matrix with the given self-transition probability and
/// the rest spread evenly.
pub fn persistent_transition(n: usize, stay: f64) -> Vec<Vec<f64>> {
    let off = (1.0 - stay) / (n - 1) as f64;
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { stay } else { off }).collect())
        .collect()
}
