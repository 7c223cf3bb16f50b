//! Tapered DFT and the multitaper spectrum estimate.
//!
//! Coefficients follow the convention
//! `y(w_j) = (1/J) * sum_l h_l y_l exp(-i 2 pi (j-1)(l-1) / J)` with
//! normalized frequency `w_j = (j-1)/J` for `j = 1..J/2`, i.e. a one-sided
//! spectrum that keeps the DC bin and drops Nyquist.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::dpss::TaperBank;
use crate::error::{Error, Result};

/// Full-length DFT of one window under the 1/J normalization.
pub fn dft_coefficients_full(window: &[f64]) -> Vec<Complex64> {
    let j = window.len();
    let mut buf: Vec<Complex64> = window.iter().map(|&y| Complex64::new(y, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(j).process(&mut buf);
    let scale = 1.0 / j as f64;
    buf.iter_mut().for_each(|c| *c *= scale);
    buf
}

/// One-sided DFT coefficients (bins 1..J/2 in 1-based terms).
pub fn dft_coefficients(window: &[f64]) -> Vec<Complex64> {
    let j = window.len();
    let mut full = dft_coefficients_full(window);
    full.truncate(j / 2);
    full
}

/// One-sided tapered DFT: one coefficient sequence per taper.
pub fn tapered_dft(window: &[f64], bank: &TaperBank) -> Result<Vec<Vec<Complex64>>> {
    let analyzer = SpectralAnalyzer::new(bank.clone());
    analyzer.tapered_dft(window)
}

/// Multitaper spectrum: the mean of the per-taper squared magnitudes.
pub fn multitaper_psd(coeffs: &[Vec<Complex64>]) -> Vec<f64> {
    assert!(!coeffs.is_empty(), "need at least one taper");
    let bins = coeffs[0].len();
    let mut psd = vec![0.0; bins];
    for taper_coeffs in coeffs {
        debug_assert_eq!(taper_coeffs.len(), bins);
        for (p, c) in psd.iter_mut().zip(taper_coeffs) {
            *p += c.norm_sqr();
        }
    }
    let m = coeffs.len() as f64;
    psd.iter_mut().for_each(|p| *p /= m);
    psd
}

/// Reusable tapered-DFT engine: one FFT plan shared across windows.
pub struct SpectralAnalyzer {
    bank: TaperBank,
    fft: Arc<dyn Fft<f64>>,
}

impl SpectralAnalyzer {
    pub fn new(bank: TaperBank) -> Self {
        let fft = FftPlanner::new().plan_fft_forward(bank.window_len());
        SpectralAnalyzer { bank, fft }
    }

    pub fn bank(&self) -> &TaperBank {
        &self.bank
    }

    /// Per-taper one-sided coefficients for one window.
    pub fn tapered_dft(&self, window: &[f64]) -> Result<Vec<Vec<Complex64>>> {
        let j = self.bank.window_len();
        if window.len() != j {
            return Err(Error::validation(format!(
                "window length {} does not match taper length {j}",
                window.len()
            )));
        }
        let scale = 1.0 / j as f64;
        let half = j / 2;
        let mut out = Vec::with_capacity(self.bank.taper_count());
        let mut buf = vec![Complex64::default(); j];
        for taper in self.bank.tapers() {
            for ((b, &h), &y) in buf.iter_mut().zip(taper).zip(window) {
                *b = Complex64::new(h * y * scale, 0.0);
            }
            self.fft.process(&mut buf);
            out.push(buf[..half].to_vec());
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::compute_dpss;
    use rand::Rng;

    /// Direct quadratic-time evaluation of the tapered coefficient sum.
    fn direct_dft(window: &[f64], taper: &[f64]) -> Vec<Complex64> {
        let j = window.len();
        (0..j / 2)
            .map(|jj| {
                let mut acc = Complex64::default();
                for (l, (&y, &h)) in window.iter().zip(taper).enumerate() {
                    let phase = -2.0 * std::f64::consts::PI * (jj as f64) * (l as f64) / j as f64;
                    acc += Complex64::new(h * y * phase.cos(), h * y * phase.sin());
                }
                acc / j as f64
            })
            .collect()
    }

    #[test]
    fn dc_input_concentrates_at_first_bin() {
        let coeffs = dft_coefficients(&[1.0; 8]);
        assert!((coeffs[0].re - 1.0).abs() < 1e-12);
        assert!(coeffs[0].im.abs() < 1e-12);
        for c in &coeffs[1..] {
            assert!(c.norm() < 1e-12);
        }
    }

    #[test]
    fn single_tone_has_half_magnitude_at_its_bin() {
        let j = 64;
        let k = 5;
        let window: Vec<f64> = (0..j)
            .map(|l| (2.0 * std::f64::consts::PI * k as f64 * l as f64 / j as f64).cos())
            .collect();
        let coeffs = dft_coefficients(&window);
        assert!((coeffs[k].norm() - 0.5).abs() < 1e-12);
        for (jj, c) in coeffs.iter().enumerate() {
            if jj != k {
                assert!(c.norm() < 1e-12, "bin {jj} has magnitude {}", c.norm());
            }
        }
    }

    #[test]
    fn fft_path_matches_direct_sum() {
        let mut rng = crate::rng::seeded(3);
        let j = 96;
        let bank = compute_dpss(j, 3.0, 3).unwrap();
        let window: Vec<f64> = (0..j).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
        let fast = tapered_dft(&window, &bank).unwrap();
        for (m, taper) in bank.tapers().iter().enumerate() {
            let slow = direct_dft(&window, taper);
            for (a, b) in fast[m].iter().zip(&slow) {
                let denom = b.norm().max(1e-6);
                assert!((a - b).norm() / denom < 1e-9, "taper {m}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn length_mismatch_rejected() {
        let bank = compute_dpss(64, 3.0, 3).unwrap();
        assert!(tapered_dft(&[0.0; 32], &bank).is_err());
    }

    #[test]
    fn single_taper_psd_is_periodogram() {
        let mut rng = crate::rng::seeded(5);
        let j = 64;
        let bank = compute_dpss(j, 3.0, 1).unwrap();
        let window: Vec<f64> = (0..j).map(|_| rng.gen::<f64>() - 0.5).collect();
        let coeffs = tapered_dft(&window, &bank).unwrap();
        let psd = multitaper_psd(&coeffs);
        for (p, c) in psd.iter().zip(&coeffs[0]) {
            assert!((p - c.norm_sqr()).abs() < 1e-15);
        }
    }

    #[test]
    fn parseval_under_this_normalization() {
        let mut rng = crate::rng::seeded(9);
        for _ in 0..10 {
            let j = 128;
            let window: Vec<f64> = (0..j).map(|_| rng.gen::<f64>() * 4.0 - 2.0).collect();
            let full = dft_coefficients_full(&window);
            let spectral: f64 = full.iter().map(|c| c.norm_sqr()).sum();
            let temporal: f64 = window.iter().map(|y| y * y).sum::<f64>() / j as f64;
            assert!((spectral - temporal).abs() / temporal < 1e-9);
        }
    }

    /// Averaging across tapers cuts estimator variance roughly by 1/M.
    #[test]
    fn multitaper_variance_reduction_on_white_noise() {
        let mut rng = crate::rng::seeded(13);
        let j = 128;
        let m = 5;
        let n_windows = 2000;
        let bank = compute_dpss(j, 4.0, m).unwrap();
        let analyzer = SpectralAnalyzer::new(bank);
        let bin = 32;
        let mut plain = Vec::with_capacity(n_windows);
        let mut multi = Vec::with_capacity(n_windows);
        for _ in 0..n_windows {
            let window: Vec<f64> = (0..j).map(|_| crate::rng::normal(0.0, 1.0, &mut rng)).collect();
            plain.push(dft_coefficients(&window)[bin].norm_sqr());
            let coeffs = analyzer.tapered_dft(&window).unwrap();
            multi.push(multitaper_psd(&coeffs)[bin] * j as f64);
        }
        let var = |xs: &[f64]| {
            let mu = xs.iter().sum::<f64>() / xs.len() as f64;
            xs.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / xs.len() as f64
        };
        let ratio = var(&multi) / var(&plain);
        assert!(
            ratio > 0.8 / m as f64 && ratio < 1.2 / m as f64,
            "variance ratio {ratio} vs 1/{m}"
        );
    }
}
