//! Frequency-band selection and per-window observation extraction.
//!
//! For every window and band we locate the in-band bin whose multitaper
//! power is the median across the band, then keep the per-taper complex
//! coefficients at that bin as the band's observation.

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordered, non-overlapping frequency intervals in Hz. A bin with
/// normalized frequency `w` belongs to band `(lo, hi)` when
/// `lo <= fs * w < hi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandSpec {
    bands: Vec<(f64, f64)>,
}

impl BandSpec {
    pub fn new(bands: Vec<(f64, f64)>) -> Result<Self> {
        if bands.is_empty() {
            return Err(Error::validation("band list is empty"));
        }
        for &(lo, hi) in &bands {
            if !(lo < hi) || lo < 0.0 {
                return Err(Error::validation(format!("invalid band ({lo}, {hi}) Hz")));
            }
        }
        for pair in bands.windows(2) {
            if pair[1].0 < pair[0].1 {
                return Err(Error::validation(format!(
                    "bands ({}, {}) and ({}, {}) overlap or are out of order",
                    pair[0].0, pair[0].1, pair[1].0, pair[1].1
                )));
            }
        }
        Ok(BandSpec { bands })
    }

    pub fn count(&self) -> usize {
        self.bands.len()
    }

    pub fn intervals(&self) -> &[(f64, f64)] {
        &self.bands
    }

    /// Indices of one-sided DFT bins inside each band, for a window of
    /// `window_len` samples at `fs` Hz. Errors if any band is empty.
    pub fn bin_indices(&self, fs: f64, window_len: usize) -> Result<Vec<Vec<usize>>> {
        let half = window_len / 2;
        let mut out = Vec::with_capacity(self.bands.len());
        for &(lo, hi) in &self.bands {
            let bins: Vec<usize> = (0..half)
                .filter(|&j| {
                    let f = fs * j as f64 / window_len as f64;
                    f >= lo && f < hi
                })
                .collect();
            if bins.is_empty() {
                return Err(Error::validation(format!(
                    "band ({lo}, {hi}) Hz holds no DFT bins at fs={fs}, window={window_len}"
                )));
            }
            out.push(bins);
        }
        Ok(out)
    }
}

/// One band's observation in one window: the selected bin plus the
/// per-taper coefficient pair at that bin.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BandObservation {
    pub bin: usize,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl BandObservation {
    /// Sum over tapers of `re^2 + im^2`.
    pub fn power_sum(&self) -> f64 {
        self.re.iter().map(|x| x * x).sum::<f64>() + self.im.iter().map(|x| x * x).sum::<f64>()
    }
}

/// All bands' observations for one window; `None` when the window was
/// rejected as artifact.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WindowObservation {
    pub window: usize,
    pub bands: Option<Vec<BandObservation>>,
}

/// Pick the median-power bin per band and collect the per-taper
/// coefficients there. `coeffs` holds one coefficient sequence per taper;
/// `psd` is the multitaper spectrum of the same window.
pub fn extract_band_observations(
    coeffs: &[Vec<Complex64>],
    psd: &[f64],
    band_bins: &[Vec<usize>],
) -> Vec<BandObservation> {
    band_bins
        .iter()
        .map(|bins| {
            let mut order: Vec<usize> = bins.clone();
            order.sort_by(|&a, &b| {
                psd[a].partial_cmp(&psd[b]).expect("finite psd").then(a.cmp(&b))
            });
            // lower-middle element for even counts
            let bin = order[(order.len() - 1) / 2];
            BandObservation {
                bin,
                re: coeffs.iter().map(|c| c[bin].re).collect(),
                im: coeffs.iter().map(|c| c[bin].im).collect(),
            }
        })
        .collect()
}

/// Compact observation set the sampler consumes: per valid window, per
/// band, the sum over tapers of squared coefficients.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObservationSet {
    pub taper_count: usize,
    pub band_count: usize,
    /// One entry per window; `None` marks a rejected window.
    pub window_power: Vec<Option<Vec<f64>>>,
}

impl ObservationSet {
    pub fn from_windows(windows: &[WindowObservation], taper_count: usize, band_count: usize) -> Result<Self> {
        let mut window_power = Vec::with_capacity(windows.len());
        for w in windows {
            match &w.bands {
                None => window_power.push(None),
                Some(bands) => {
                    if bands.len() != band_count {
                        return Err(Error::validation(format!(
                            "window {} has {} bands, expected {band_count}",
                            w.window,
                            bands.len()
                        )));
                    }
                    window_power.push(Some(bands.iter().map(|b| b.power_sum()).collect()));
                }
            }
        }
        Ok(ObservationSet { taper_count, band_count, window_power })
    }

    pub fn len(&self) -> usize {
        self.window_power.len()
    }

    pub fn is_empty(&self) -> bool {
        self.window_power.is_empty()
    }

    pub fn valid_count(&self) -> usize {
        self.window_power.iter().filter(|w| w.is_some()).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn complex_grid(values: &[(f64, f64)]) -> Vec<Complex64> {
        values.iter().map(|&(re, im)| Complex64::new(re, im)).collect()
    }

    #[test]
    fn study_band_list_selects_within_bands() {
        let spec = BandSpec::new(vec![
            (0.5, 2.5),
            (2.5, 4.5),
            (4.5, 6.5),
            (6.5, 8.5),
            (10.5, 12.5),
            (12.5, 35.0),
        ])
        .unwrap();
        let bins = spec.bin_indices(200.0, 3000).unwrap();
        assert_eq!(bins.len(), 6);
        for (b, &(lo, hi)) in bins.iter().zip(spec.intervals()) {
            assert!(!b.is_empty());
            for &j in b {
                let f = 200.0 * j as f64 / 3000.0;
                assert!(f >= lo && f < hi);
            }
        }
        // resolution is fs/J = 1/15 Hz, so the 2 Hz bands hold 30 bins
        assert_eq!(bins[0].len(), 30);
    }

    #[test]
    fn empty_band_is_configuration_error() {
        // bin spacing is 1/15 Hz; nothing falls in (0.07, 0.08)
        let spec = BandSpec::new(vec![(0.07, 0.08)]).unwrap();
        assert!(spec.bin_indices(200.0, 3000).is_err());
    }

    #[test]
    fn overlapping_bands_rejected() {
        assert!(BandSpec::new(vec![(1.0, 3.0), (2.0, 4.0)]).is_err());
        assert!(BandSpec::new(vec![(3.0, 4.0), (1.0, 2.0)]).is_err());
    }

    #[test]
    fn median_power_bin_selected() {
        // three in-band bins with powers 1, 5, 9 -> middle one picked
        let psd = vec![0.0, 1.0, 5.0, 9.0, 0.0];
        let coeffs = vec![complex_grid(&[(0.0, 0.0), (1.0, 2.0), (3.0, 4.0), (5.0, 6.0), (0.0, 0.0)])];
        let obs = extract_band_observations(&coeffs, &psd, &[vec![1, 2, 3]]);
        assert_eq!(obs[0].bin, 2);
        assert_eq!(obs[0].re, vec![3.0]);
        assert_eq!(obs[0].im, vec![4.0]);
    }

    #[test]
    fn even_count_takes_lower_middle() {
        let psd = vec![4.0, 1.0, 3.0, 2.0];
        let obs = extract_band_observations(
            &vec![complex_grid(&[(1.0, 0.0), (2.0, 0.0), (3.0, 0.0), (4.0, 0.0)])],
            &psd,
            &[vec![0, 1, 2, 3]],
        );
        // sorted powers: 1 (bin 1), 2 (bin 3), 3 (bin 2), 4 (bin 0); lower middle = bin 3
        assert_eq!(obs[0].bin, 3);
    }

    #[test]
    fn single_bin_band_always_selected() {
        let psd = vec![1.0, 2.0];
        let obs = extract_band_observations(&vec![complex_grid(&[(0.5, 0.5), (0.25, 0.75)])], &psd, &[vec![1]]);
        assert_eq!(obs[0].bin, 1);
    }

    #[test]
    fn power_sum_collapses_tapers() {
        let b = BandObservation { bin: 0, re: vec![1.0, 2.0], im: vec![3.0, 4.0] };
        assert_eq!(b.power_sum(), 1.0 + 4.0 + 9.0 + 16.0);
    }
}
