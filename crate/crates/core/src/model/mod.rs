//! Probabilistic core: the spectral emission likelihood, inverse-gamma
//! conjugate updates for per-band power, and the stick-breaking pieces of
//! the hierarchical Dirichlet process transition prior.
//!
//! Coefficients in band `j` of a window in state `k` are modelled as
//! independent `N(0, f_j^(k) / 2)` draws (real and imaginary parts alike,
//! for every taper), so the sum of squared coefficients is the sufficient
//! statistic everywhere below.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::rng;
use crate::signal::BandObservation;

const LOG_FLOOR: f64 = -1e300;

/// Inverse-gamma distribution in shape/rate form: density proportional to
/// `x^-(shape+1) exp(-rate/x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InverseGamma {
    pub shape: f64,
    pub rate: f64,
}

impl InverseGamma {
    pub fn new(shape: f64, rate: f64) -> Self {
        assert!(shape > 0.0 && rate > 0.0, "inverse-gamma parameters must be positive");
        InverseGamma { shape, rate }
    }

    pub fn log_density(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return LOG_FLOOR;
        }
        self.shape * self.rate.ln() - ln_gamma(self.shape) - (self.shape + 1.0) * x.ln()
            - self.rate / x
    }

    /// Posterior mode, `rate / (shape + 1)`.
    pub fn mode(&self) -> f64 {
        self.rate / (self.shape + 1.0)
    }

    /// Mean `rate / (shape - 1)`, defined for shape > 1.
    pub fn mean(&self) -> Option<f64> {
        (self.shape > 1.0).then(|| self.rate / (self.shape - 1.0))
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        rng::inverse_gamma(self.shape, self.rate, rng)
    }
}

/// Gamma log density in shape/rate form.
pub fn gamma_log_density(x: f64, shape: f64, rate: f64) -> f64 {
    if x <= 0.0 {
        return LOG_FLOOR;
    }
    shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
}

/// Gamma hyperpriors on the two concentration parameters, plus the prior on
/// each per-state per-band inverse-gamma rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperPriors {
    /// Gamma(shape, rate) prior on the top-level concentration.
    pub gamma_shape: f64,
    pub gamma_rate: f64,
    /// Gamma(shape, rate) prior on the per-row concentration.
    pub alpha_shape: f64,
    pub alpha_rate: f64,
    /// Gamma(shape, rate) prior on each per-state per-band IG rate.
    pub b_shape: f64,
    pub b_rate: f64,
}

impl Default for HyperPriors {
    fn default() -> Self {
        HyperPriors {
            gamma_shape: 1.0,
            gamma_rate: 1.0,
            alpha_shape: 1.0,
            alpha_rate: 1.0,
            b_shape: 1.0,
            b_rate: 1.0,
        }
    }
}

/// Log likelihood of one window's band observations under per-band PSD
/// values `psd`: every coefficient (real and imaginary, each taper) is a
/// zero-mean Gaussian with variance `psd[j] / 2`.
pub fn emission_log_likelihood(obs: &[BandObservation], psd: &[f64]) -> Result<f64> {
    if obs.len() != psd.len() {
        return Err(Error::validation(format!(
            "observation has {} bands, state spectrum has {}",
            obs.len(),
            psd.len()
        )));
    }
    let mut total = 0.0;
    for (band, &f) in obs.iter().zip(psd) {
        if f <= 0.0 {
            return Err(Error::validation(format!("nonpositive spectral power {f}")));
        }
        let m = band.re.len() as f64;
        total += -m * (std::f64::consts::PI * f).ln() - band.power_sum() / f;
    }
    Ok(total.max(LOG_FLOOR))
}

/// Same likelihood from sufficient statistics: per-band sums of squared
/// coefficients and the taper count.
pub fn emission_log_likelihood_from_power(power_sum: &[f64], taper_count: usize, psd: &[f64]) -> f64 {
    let m = taper_count as f64;
    let mut total = 0.0;
    for (&ss, &f) in power_sum.iter().zip(psd) {
        total += -m * (std::f64::consts::PI * f).ln() - ss / f;
    }
    total.max(LOG_FLOOR)
}

/// Conjugate update of the inverse-gamma prior on one band's power, given
/// `n_windows` assigned windows with `taper_count` tapers each and the sum
/// of squared coefficients over all of them.
pub fn psd_posterior(prior: InverseGamma, n_windows: usize, taper_count: usize, power_sum: f64) -> InverseGamma {
    InverseGamma {
        shape: prior.shape + (n_windows * taper_count) as f64,
        rate: prior.rate + power_sum,
    }
}

/// Parameters of the Gamma posterior for an IG rate `b` given the power
/// values it governs: conjugacy adds `ig_shape` to the shape per value and
/// the reciprocal power to the rate.
pub fn b_posterior(prior_shape: f64, prior_rate: f64, ig_shape: f64, powers: &[f64]) -> (f64, f64) {
    let shape = prior_shape + ig_shape * powers.len() as f64;
    let rate = prior_rate + powers.iter().map(|f| 1.0 / f).sum::<f64>();
    (shape, rate)
}

/// Draw the IG rate from its Gamma posterior.
pub fn sample_b_posterior<R: Rng + ?Sized>(
    prior_shape: f64,
    prior_rate: f64,
    ig_shape: f64,
    powers: &[f64],
    rng: &mut R,
) -> f64 {
    let (shape, rate) = b_posterior(prior_shape, prior_rate, ig_shape, powers);
    rng::gamma(shape, rate, rng)
}

/// Truncated stick-breaking weights: `k_max` sticks broken with
/// `Beta(1, concentration)` proportions plus the unbroken remainder in the
/// final slot. Sums to one by construction.
pub fn stick_breaking<R: Rng + ?Sized>(concentration: f64, k_max: usize, rng: &mut R) -> Vec<f64> {
    assert!(concentration > 0.0 && k_max >= 1);
    let mut weights = Vec::with_capacity(k_max + 1);
    let mut remaining = 1.0;
    for _ in 0..k_max {
        let frac = rng::beta(1.0, concentration, rng);
        weights.push(frac * remaining);
        remaining *= 1.0 - frac;
    }
    weights.push(remaining);
    weights
}

/// Draw one transition row from its Dirichlet conditional: base weights
/// scaled by the row concentration plus observed transition counts. The
/// final slot is the remainder column and must carry no counts.
pub fn sample_transition_row<R: Rng + ?Sized>(
    alpha: f64,
    base_weights: &[f64],
    counts: &[f64],
    rng: &mut R,
) -> Vec<f64> {
    assert_eq!(base_weights.len(), counts.len());
    assert!(counts.last().is_none_or(|&c| c == 0.0), "remainder slot cannot have counts");
    let alphas: Vec<f64> =
        base_weights.iter().zip(counts).map(|(&b, &c)| (alpha * b).max(1e-300) + c).collect();
    rng::dirichlet(&alphas, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn band(re: Vec<f64>, im: Vec<f64>) -> BandObservation {
        BandObservation { bin: 0, re, im }
    }

    #[test]
    fn zero_observation_likelihood_closed_form() {
        let obs = vec![
            band(vec![0.0; 5], vec![0.0; 5]),
            band(vec![0.0; 5], vec![0.0; 5]),
            band(vec![0.0; 5], vec![0.0; 5]),
        ];
        let psd = vec![2.0, 0.5, 1.0];
        let ll = emission_log_likelihood(&obs, &psd).unwrap();
        let expect: f64 = psd.iter().map(|&f| -5.0 * (std::f64::consts::PI * f).ln()).sum();
        assert!((ll - expect).abs() < 1e-12);
    }

    #[test]
    fn doubling_power_costs_log_two_per_pair() {
        let obs = vec![band(vec![0.0; 4], vec![0.0; 4]); 3];
        let psd = vec![1.0, 2.0, 0.3];
        let doubled: Vec<f64> = psd.iter().map(|f| 2.0 * f).collect();
        let base = emission_log_likelihood(&obs, &psd).unwrap();
        let worse = emission_log_likelihood(&obs, &doubled).unwrap();
        assert!((base - worse - 12.0 * 2.0f64.ln()).abs() < 1e-12);
    }

    /// Dense-oracle check: the banded form equals the full diagonal
    /// Gaussian density over all 2*B*M coefficients.
    #[test]
    fn matches_dense_diagonal_gaussian() {
        let mut rng = seeded(21);
        for _ in 0..20 {
            let m = 3;
            let psd: Vec<f64> = (0..4).map(|_| 0.1 + rng.gen::<f64>() * 3.0).collect();
            let obs: Vec<BandObservation> = (0..4)
                .map(|_| {
                    band(
                        (0..m).map(|_| rng.gen::<f64>() - 0.5).collect(),
                        (0..m).map(|_| rng.gen::<f64>() - 0.5).collect(),
                    )
                })
                .collect();
            let ll = emission_log_likelihood(&obs, &psd).unwrap();
            let mut dense = 0.0;
            for (b, &f) in obs.iter().zip(&psd) {
                let var = f / 2.0;
                for x in b.re.iter().chain(&b.im) {
                    dense += -0.5 * (2.0 * std::f64::consts::PI * var).ln() - x * x / (2.0 * var);
                }
            }
            assert!((ll - dense).abs() < 1e-10);
            // the sufficient-statistic path agrees too
            let power: Vec<f64> = obs.iter().map(|b| b.power_sum()).collect();
            assert!((emission_log_likelihood_from_power(&power, m, &psd) - dense).abs() < 1e-10);
        }
    }

    #[test]
    fn taper_permutation_leaves_likelihood_unchanged() {
        let obs = vec![band(vec![0.3, -0.7, 1.1], vec![0.2, 0.9, -0.4])];
        let permuted = vec![band(vec![1.1, 0.3, -0.7], vec![-0.4, 0.2, 0.9])];
        let psd = vec![0.8];
        assert_eq!(
            emission_log_likelihood(&obs, &psd).unwrap(),
            emission_log_likelihood(&permuted, &psd).unwrap()
        );
    }

    #[test]
    fn nonpositive_power_rejected() {
        let obs = vec![band(vec![0.0], vec![0.0])];
        assert!(emission_log_likelihood(&obs, &[0.0]).is_err());
        assert!(emission_log_likelihood(&obs, &[-1.0]).is_err());
    }

    #[test]
    fn posterior_with_no_data_is_prior() {
        let prior = InverseGamma::new(1.5, 2.5);
        let post = psd_posterior(prior, 0, 5, 0.0);
        assert_eq!(post, prior);
    }

    #[test]
    fn posterior_update_worked_example() {
        let post = psd_posterior(InverseGamma::new(1.0, 1.0), 1, 5, 10.0);
        assert_eq!(post.shape, 6.0);
        assert_eq!(post.rate, 11.0);
    }

    /// Grid oracle: closed-form posterior equals the normalized product of
    /// prior and likelihood on a 1000-point log-spaced grid, in total
    /// variation.
    #[test]
    fn conjugacy_matches_grid_integration() {
        let mut rng = seeded(33);
        for _ in 0..5 {
            let prior = InverseGamma::new(0.5 + rng.gen::<f64>() * 3.0, 0.2 + rng.gen::<f64>() * 4.0);
            let truth = 0.3 + rng.gen::<f64>() * 2.0;
            let m = 4;
            let n = 1 + rng.gen_range(0..6);
            let mut power_sum = 0.0;
            let mut pairs = Vec::new();
            for _ in 0..(n * m) {
                let re = crate::rng::normal(0.0, (truth / 2.0).sqrt(), &mut rng);
                let im = crate::rng::normal(0.0, (truth / 2.0).sqrt(), &mut rng);
                power_sum += re * re + im * im;
                pairs.push((re, im));
            }
            let post = psd_posterior(prior, n, m, power_sum);
            let tv = grid_total_variation(prior, &pairs, post);
            assert!(tv < 1e-6, "total variation {tv}");
        }
    }

    fn grid_total_variation(prior: InverseGamma, pairs: &[(f64, f64)], post: InverseGamma) -> f64 {
        let center = post.mode();
        let grid: Vec<f64> = (0..1000)
            .map(|i| center * 10f64.powf(-3.0 + 6.0 * i as f64 / 999.0))
            .collect();
        let log_product: Vec<f64> = grid
            .iter()
            .map(|&f| {
                let mut ll = prior.log_density(f);
                for &(re, im) in pairs {
                    ll += -(std::f64::consts::PI * f).ln() - (re * re + im * im) / f;
                }
                ll
            })
            .collect();
        let log_closed: Vec<f64> = grid.iter().map(|&f| post.log_density(f)).collect();
        // trapezoid masses, normalized within each route
        let masses = |logs: &[f64]| -> Vec<f64> {
            let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let dens: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
            let mut w = vec![0.0; grid.len()];
            for i in 0..grid.len() - 1 {
                let seg = (grid[i + 1] - grid[i]) * 0.5 * (dens[i] + dens[i + 1]);
                w[i] += 0.5 * seg;
                w[i + 1] += 0.5 * seg;
            }
            let total: f64 = w.iter().sum();
            w.iter().map(|x| x / total).collect()
        };
        let a = masses(&log_product);
        let b = masses(&log_closed);
        0.5 * a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>()
    }

    #[test]
    fn posterior_mean_concentrates_on_truth() {
        let mut rng = seeded(55);
        let truth: f64 = 1.7;
        let m = 5;
        let n = 500;
        let mut power_sum = 0.0;
        for _ in 0..(n * m) {
            let re = crate::rng::normal(0.0, (truth / 2.0).sqrt(), &mut rng);
            let im = crate::rng::normal(0.0, (truth / 2.0).sqrt(), &mut rng);
            power_sum += re * re + im * im;
        }
        let post = psd_posterior(InverseGamma::new(1.0, 1.0), n, m, power_sum);
        let mean = post.mean().unwrap();
        assert!((mean - truth).abs() / truth < 0.05, "mean {mean} vs {truth}");
    }

    #[test]
    fn inverse_gamma_sampling_moments() {
        let mut rng = seeded(77);
        let ig = InverseGamma::new(3.0, 4.0);
        let n = 100_000;
        let mean = (0..n).map(|_| ig.sample(&mut rng)).sum::<f64>() / n as f64;
        assert!((mean - 2.0).abs() / 2.0 < 0.02, "mean {mean}");
    }

    #[test]
    fn inverse_gamma_draws_positive_and_reproducible() {
        let ig = InverseGamma::new(2.0, 2.0);
        let mut a = seeded(5);
        let mut b = seeded(5);
        for _ in 0..100 {
            let x = ig.sample(&mut a);
            assert!(x > 0.0);
            assert_eq!(x, ig.sample(&mut b));
        }
    }

    #[test]
    fn b_update_with_nothing_governed_is_prior() {
        let (shape, rate) = b_posterior(1.3, 0.7, 1.0, &[]);
        assert_eq!((shape, rate), (1.3, 0.7));
    }

    #[test]
    fn b_update_worked_example() {
        let (shape, rate) = b_posterior(1.0, 1.0, 1.0, &[1.0]);
        assert_eq!((shape, rate), (2.0, 2.0));
        let mut rng = seeded(88);
        let n = 50_000;
        let mean = (0..n).map(|_| sample_b_posterior(1.0, 1.0, 1.0, &[1.0], &mut rng)).sum::<f64>()
            / n as f64;
        assert!((mean - 1.0).abs() < 0.02, "mean {mean}");
    }

    /// Grid oracle for the rate update: Gamma posterior density equals the
    /// normalized prior-times-IG-likelihood product.
    #[test]
    fn b_posterior_matches_grid() {
        let (a0, b0, ig_shape) = (1.4, 0.9, 1.0);
        let powers = [0.6, 2.2, 1.1];
        let (shape, rate) = b_posterior(a0, b0, ig_shape, &powers);
        let grid: Vec<f64> = (0..2000).map(|i| 1e-3 + i as f64 * 0.01).collect();
        let unnorm: Vec<f64> = grid
            .iter()
            .map(|&b| {
                let mut l = gamma_log_density(b, a0, b0);
                for &f in &powers {
                    l += InverseGamma::new(ig_shape, b).log_density(f);
                }
                l.exp()
            })
            .collect();
        let closed: Vec<f64> = grid.iter().map(|&b| gamma_log_density(b, shape, rate).exp()).collect();
        let s1: f64 = unnorm.iter().sum();
        let s2: f64 = closed.iter().sum();
        for (u, c) in unnorm.iter().zip(&closed) {
            assert!((u / s1 - c / s2).abs() < 1e-9);
        }
    }

    /// Small governed powers are evidence for a small rate: the reciprocal
    /// terms push the posterior mean of `b` down.
    #[test]
    fn b_posterior_mean_shrinks_with_powers() {
        let (s1, r1) = b_posterior(1.0, 1.0, 1.0, &[2.0, 2.0]);
        let (s2, r2) = b_posterior(1.0, 1.0, 1.0, &[0.2, 0.2]);
        assert!(s2 / r2 < s1 / r1);
    }

    #[test]
    fn sticks_sum_to_one() {
        let mut rng = seeded(101);
        for _ in 0..100 {
            let w = stick_breaking(0.7, 25, &mut rng);
            assert_eq!(w.len(), 26);
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(w.iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn tiny_concentration_front_loads_mass() {
        let mut rng = seeded(103);
        let w = stick_breaking(1e-6, 10, &mut rng);
        assert!(w[0] > 0.99, "first stick {}", w[0]);
    }

    #[test]
    fn first_stick_mean_matches_beta_moment() {
        let mut rng = seeded(105);
        let gamma = 2.5;
        let n = 100_000;
        let mean =
            (0..n).map(|_| stick_breaking(gamma, 3, &mut rng)[0]).sum::<f64>() / n as f64;
        let expect = 1.0 / (1.0 + gamma);
        assert!((mean - expect).abs() / expect < 0.02, "mean {mean} vs {expect}");
    }

    #[test]
    fn transition_row_prior_mean_is_base_weights() {
        let mut rng = seeded(107);
        let base = [0.5, 0.3, 0.2];
        let counts = [0.0, 0.0, 0.0];
        let n = 40_000;
        let mut mean = [0.0; 3];
        for _ in 0..n {
            let row = sample_transition_row(4.0, &base, &counts, &mut rng);
            for (m, r) in mean.iter_mut().zip(&row) {
                *m += r / n as f64;
            }
        }
        for (m, b) in mean.iter().zip(&base) {
            assert!((m - b).abs() < 0.01, "{m} vs {b}");
        }
    }

    #[test]
    fn overwhelming_counts_concentrate() {
        let mut rng = seeded(109);
        let row = sample_transition_row(1.0, &[0.4, 0.3, 0.3], &[0.0, 1e6, 0.0], &mut rng);
        assert!(row[1] > 0.99);
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    /// Equivalence with a plain Dirichlet sampler on matched parameters.
    #[test]
    fn matches_direct_dirichlet_moments() {
        let mut rng = seeded(111);
        let alpha = 2.0;
        let base = [0.6, 0.3, 0.1];
        let counts = [3.0, 1.0, 0.0];
        let alphas: Vec<f64> = base.iter().zip(&counts).map(|(&b, &c)| alpha * b + c).collect();
        let total: f64 = alphas.iter().sum();
        let n = 60_000;
        let mut mean = [0.0; 3];
        let mut second = [0.0; 3];
        for _ in 0..n {
            let row = sample_transition_row(alpha, &base, &counts, &mut rng);
            for i in 0..3 {
                mean[i] += row[i] / n as f64;
                second[i] += row[i] * row[i] / n as f64;
            }
        }
        for i in 0..3 {
            let expect_mean = alphas[i] / total;
            let expect_var = alphas[i] * (total - alphas[i]) / (total * total * (total + 1.0));
            assert!((mean[i] - expect_mean).abs() < 0.005);
            let var = second[i] - mean[i] * mean[i];
            assert!((var - expect_var).abs() < 0.005, "var {var} vs {expect_var}");
        }
    }
}
