//! Deterministic signal-processing front end.
//!
//! Windows a recording, builds Slepian taper banks, computes tapered DFTs
//! and the multitaper spectrum, rejects high-power artifact windows, and
//! extracts per-band complex observations for the state model.

mod bands;
mod dpss;
mod spectra;

pub use bands::{BandObservation, BandSpec, ObservationSet, WindowObservation, extract_band_observations};
pub use dpss::{TaperBank, compute_dpss};
pub use spectra::{
    SpectralAnalyzer, dft_coefficients, dft_coefficients_full, multitaper_psd, tapered_dft,
};

use crate::error::{Error, Result};

/// A time series split into `n_windows` contiguous non-overlapping windows
/// of `window_len` samples each. Samples past the last full window are
/// discarded. `valid` marks windows that survived artifact rejection.
#[derive(Debug, Clone)]
pub struct WindowedSeries {
    samples: Vec<f64>,
    fs: f64,
    window_len: usize,
    n_windows: usize,
    valid: Vec<bool>,
}

impl WindowedSeries {
    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn window_len(&self) -> usize {
        self.window_len
    }

    pub fn n_windows(&self) -> usize {
        self.n_windows
    }

    pub fn window(&self, t: usize) -> &[f64] {
        let start = t * self.window_len;
        &self.samples[start..start + self.window_len]
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn set_valid(&mut self, valid: Vec<bool>) {
        assert_eq!(valid.len(), self.n_windows);
        self.valid = valid;
    }

    /// Total power of window `t`: the sum of squared samples.
    pub fn window_power(&self, t: usize) -> f64 {
        self.window(t).iter().map(|y| y * y).sum()
    }
}

/// Split a series into non-overlapping windows of `window_seconds` each.
///
/// `window_seconds * fs` must come out to a whole number of samples. The
/// trailing partial window, if any, is dropped.
pub fn segment_windows(series: Vec<f64>, fs: f64, window_seconds: f64) -> Result<WindowedSeries> {
    if !(fs > 0.0) || !(window_seconds > 0.0) {
        return Err(Error::validation("sampling rate and window length must be positive"));
    }
    let j_real = window_seconds * fs;
    let window_len = j_real.round() as usize;
    if window_len == 0 || (j_real - window_len as f64).abs() > 1e-9 * j_real.max(1.0) {
        return Err(Error::validation(format!(
            "window of {window_seconds} s at {fs} Hz is not a whole number of samples"
        )));
    }
    let n_windows = series.len() / window_len;
    if n_windows == 0 {
        return Err(Error::validation(format!(
            "insufficient data: {} samples, need at least {window_len} for one window",
            series.len()
        )));
    }
    Ok(WindowedSeries {
        samples: series,
        fs,
        window_len,
        n_windows,
        valid: vec![true; n_windows],
    })
}

/// Mark windows whose total power strictly exceeds the given percentile of
/// per-window total power. Returns the validity mask (`false` = rejected).
///
/// The percentile is the nearest-rank statistic, so ties with the threshold
/// are kept. Rejected windows keep their time slot; downstream inference
/// treats them as missing observations.
pub fn reject_artifacts(ws: &WindowedSeries, percentile: f64) -> Result<Vec<bool>> {
    if !(percentile > 0.0 && percentile <= 100.0) {
        return Err(Error::validation(format!("percentile {percentile} out of (0, 100]")));
    }
    let powers: Vec<f64> = (0..ws.n_windows()).map(|t| ws.window_power(t)).collect();
    let mut sorted = powers.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite powers"));
    let rank = ((percentile / 100.0) * sorted.len() as f64).ceil() as usize;
    let threshold = sorted[rank.clamp(1, sorted.len()) - 1];
    Ok(powers.iter().map(|&p| p <= threshold).collect())
}

/// Subtract the window mean. Applied before tapering so that DC leakage
/// does not contaminate the lowest band.
pub fn remove_mean(window: &[f64]) -> Vec<f64> {
    let mean = window.iter().sum::<f64>() / window.len() as f64;
    window.iter().map(|y| y - mean).collect()
}
