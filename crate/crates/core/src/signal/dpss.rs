//! Discrete prolate spheroidal (Slepian) sequences.
//!
//! The tapers are eigenvectors of the symmetric tridiagonal matrix that
//! commutes with the spectral concentration operator: diagonal
//! `((J-1-2l)/2)^2 cos(2 pi W)`, off-diagonal `l(J-l)/2`. We take the top
//! `M` eigenvectors by Sturm-sequence bisection plus inverse iteration,
//! which stays O(J*M) and avoids a dense eigenproblem. Concentrations are
//! evaluated through the sinc-kernel quadratic form.

use crate::error::{Error, Result};

/// A bank of `taper_count` orthonormal Slepian tapers of length `window_len`
/// for half-bandwidth `time_bandwidth / window_len`.
#[derive(Debug, Clone)]
pub struct TaperBank {
    window_len: usize,
    time_bandwidth: f64,
    tapers: Vec<Vec<f64>>,
    concentrations: Vec<f64>,
}

impl TaperBank {
    pub fn window_len(&self) -> usize {
        self.window_len
    }

    pub fn taper_count(&self) -> usize {
        self.tapers.len()
    }

    pub fn time_bandwidth(&self) -> f64 {
        self.time_bandwidth
    }

    /// Half-bandwidth in cycles per sample.
    pub fn half_bandwidth(&self) -> f64 {
        self.time_bandwidth / self.window_len as f64
    }

    pub fn taper(&self, m: usize) -> &[f64] {
        &self.tapers[m]
    }

    pub fn tapers(&self) -> &[Vec<f64>] {
        &self.tapers
    }

    /// In-band energy fraction of each taper, strictly decreasing in m.
    pub fn concentrations(&self) -> &[f64] {
        &self.concentrations
    }
}

/// Compute the first `taper_count` Slepian tapers of length `window_len`
/// for the given time-bandwidth product.
pub fn compute_dpss(window_len: usize, time_bandwidth: f64, taper_count: usize) -> Result<TaperBank> {
    let j = window_len;
    let m = taper_count;
    if m == 0 {
        return Err(Error::validation("taper count must be at least 1"));
    }
    if (m as f64) > (2.0 * time_bandwidth).floor() - 1.0 {
        return Err(Error::validation(format!(
            "taper count exceeds concentration budget: {m} tapers need time-bandwidth > {}",
            (m + 1) as f64 / 2.0
        )));
    }
    if j < 2 * m {
        return Err(Error::validation(format!("window of {j} samples too short for {m} tapers")));
    }
    if time_bandwidth >= j as f64 / 2.0 {
        return Err(Error::validation("time-bandwidth product must be below window_len/2"));
    }

    let half_bw = time_bandwidth / j as f64;
    let cos_term = (2.0 * std::f64::consts::PI * half_bw).cos();
    let diag: Vec<f64> = (0..j)
        .map(|l| {
            let c = (j as f64 - 1.0 - 2.0 * l as f64) / 2.0;
            c * c * cos_term
        })
        .collect();
    // off[l] couples rows l-1 and l
    let off: Vec<f64> = (0..j)
        .map(|l| if l == 0 { 0.0 } else { (l as f64) * ((j - l) as f64) / 2.0 })
        .collect();

    let tri = Tridiagonal { diag, off };
    let eigenvalues = tri.top_eigenvalues(m);

    let mut tapers = Vec::with_capacity(m);
    for (idx, &lambda) in eigenvalues.iter().enumerate() {
        let mut v = tri.eigenvector(lambda, idx, &tapers);
        fix_sign(&mut v);
        tapers.push(v);
    }

    let concentrations: Vec<f64> = tapers.iter().map(|h| in_band_fraction(h, half_bw)).collect();
    for w in concentrations.windows(2) {
        if w[1] >= w[0] {
            return Err(Error::invariant(format!(
                "taper concentrations not strictly decreasing: {:?}",
                concentrations
            )));
        }
    }

    Ok(TaperBank { window_len: j, time_bandwidth, tapers, concentrations })
}

/// In-band energy fraction via the sinc-kernel quadratic form; the taper has
/// unit energy so the full-band denominator is 1.
fn in_band_fraction(taper: &[f64], half_bw: f64) -> f64 {
    let j = taper.len();
    // autocorrelation at each lag, then weight by the band-limited kernel
    let mut acc = 2.0 * half_bw; // lag 0 times unit energy
    for lag in 1..j {
        let mut corr = 0.0;
        for l in 0..j - lag {
            corr += taper[l] * taper[l + lag];
        }
        let d = lag as f64;
        let kernel = (2.0 * std::f64::consts::PI * half_bw * d).sin() / (std::f64::consts::PI * d);
        acc += 2.0 * kernel * corr;
    }
    acc
}

/// Sign convention: nonnegative mean for the symmetric tapers, nonnegative
/// first lobe for the antisymmetric ones.
fn fix_sign(v: &mut [f64]) {
    let sum: f64 = v.iter().sum();
    let max_abs = v.iter().fold(0.0f64, |a, &x| a.max(x.abs()));
    let flip = if sum.abs() > 1e-9 * max_abs * v.len() as f64 {
        sum < 0.0
    } else {
        let first = v.iter().find(|x| x.abs() > 1e-7 * max_abs).copied().unwrap_or(0.0);
        first < 0.0
    };
    if flip {
        for x in v.iter_mut() {
            *x = -*x;
        }
    }
}

struct Tridiagonal {
    diag: Vec<f64>,
    off: Vec<f64>, // off[0] unused
}

impl Tridiagonal {
    fn n(&self) -> usize {
        self.diag.len()
    }

    /// Number of eigenvalues strictly below `x` (Sturm sequence count).
    fn count_below(&self, x: f64) -> usize {
        let n = self.n();
        let scale = self.diag.iter().fold(0.0f64, |a, &d| a.max(d.abs())).max(1.0);
        let tiny = 1e-300 * scale;
        let mut count = 0;
        let mut q = 1.0;
        for l in 0..n {
            let sub = if l == 0 { 0.0 } else { self.off[l] * self.off[l] / q };
            q = self.diag[l] - x - sub;
            if q == 0.0 {
                q = -tiny;
            }
            if q < 0.0 {
                count += 1;
            }
        }
        count
    }

    /// The `m` largest eigenvalues, descending, by bisection.
    fn top_eigenvalues(&self, m: usize) -> Vec<f64> {
        let n = self.n();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for l in 0..n {
            let r = self.off[l].abs() + if l + 1 < n { self.off[l + 1].abs() } else { 0.0 };
            lo = lo.min(self.diag[l] - r);
            hi = hi.max(self.diag[l] + r);
        }
        let span = (hi - lo).max(1.0);
        let tol = 1e-14 * span;
        (0..m)
            .map(|k| {
                // eigenvalue with index n-1-k counted from the bottom
                let target = n - 1 - k;
                let (mut a, mut b) = (lo, hi);
                while b - a > tol {
                    let mid = 0.5 * (a + b);
                    if self.count_below(mid) > target {
                        b = mid;
                    } else {
                        a = mid;
                    }
                }
                0.5 * (a + b)
            })
            .collect()
    }

    /// Inverse iteration for the eigenvector at `lambda`, orthogonalized
    /// against previously extracted vectors.
    fn eigenvector(&self, lambda: f64, index: usize, previous: &[Vec<f64>]) -> Vec<f64> {
        let n = self.n();
        let mut v = pseudo_start(n, index);
        normalize(&mut v);
        for _ in 0..4 {
            let mut w = self.solve_shifted(lambda, &v);
            for p in previous {
                let dot: f64 = w.iter().zip(p).map(|(a, b)| a * b).sum();
                for (wi, pi) in w.iter_mut().zip(p) {
                    *wi -= dot * pi;
                }
            }
            normalize(&mut w);
            v = w;
        }
        v
    }

    /// Solve (T - lambda I) x = b by tridiagonal LU with partial pivoting.
    fn solve_shifted(&self, lambda: f64, b: &[f64]) -> Vec<f64> {
        let n = self.n();
        let scale = self.diag.iter().fold(0.0f64, |a, &d| a.max(d.abs())).max(1.0);
        let tiny = f64::EPSILON * scale;
        let mut d: Vec<f64> = self.diag.iter().map(|&x| x - lambda).collect();
        let mut u1: Vec<f64> = (0..n).map(|i| if i + 1 < n { self.off[i + 1] } else { 0.0 }).collect();
        let mut u2 = vec![0.0; n];
        let mut rhs = b.to_vec();
        for i in 0..n - 1 {
            let mut sub = self.off[i + 1];
            if sub.abs() > d[i].abs() {
                std::mem::swap(&mut d[i], &mut sub);
                // row i+1 currently holds (sub, d[i+1], u1[i+1]); after the
                // swap its leading entry is the old d[i]
                let old_d = d[i + 1];
                d[i + 1] = u1[i];
                u1[i] = old_d;
                std::mem::swap(&mut u2[i], &mut u1[i + 1]);
                rhs.swap(i, i + 1);
            }
            if d[i].abs() < tiny {
                d[i] = tiny.copysign(if d[i] == 0.0 { 1.0 } else { d[i] });
            }
            let factor = sub / d[i];
            d[i + 1] -= factor * u1[i];
            u1[i + 1] -= factor * u2[i];
            rhs[i + 1] -= factor * rhs[i];
        }
        if d[n - 1].abs() < tiny {
            d[n - 1] = tiny;
        }
        let mut x = vec![0.0; n];
        x[n - 1] = rhs[n - 1] / d[n - 1];
        if n >= 2 {
            x[n - 2] = (rhs[n - 2] - u1[n - 2] * x[n - 1]) / d[n - 2];
        }
        for i in (0..n.saturating_sub(2)).rev() {
            x[i] = (rhs[i] - u1[i] * x[i + 1] - u2[i] * x[i + 2]) / d[i];
        }
        x
    }
}

fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in v.iter_mut() {
            *x /= norm;
        }
    }
}

/// Deterministic quasi-random start vector for inverse iteration.
fn pseudo_start(n: usize, index: usize) -> Vec<f64> {
    let mut state = 0x9e3779b97f4a7c15u64 ^ (index as u64 + 1).wrapping_mul(0x2545f4914f6cdd1d);
    (0..n)
        .map(|_| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gram(bank: &TaperBank) -> Vec<Vec<f64>> {
        let m = bank.taper_count();
        (0..m)
            .map(|a| {
                (0..m)
                    .map(|b| {
                        bank.taper(a).iter().zip(bank.taper(b)).map(|(x, y)| x * y).sum::<f64>()
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn orthonormal_within_tolerance() {
        for &(j, tw, m) in &[(64usize, 4.0, 5usize), (3000, 4.0, 5), (256, 3.0, 4)] {
            let bank = compute_dpss(j, tw, m).unwrap();
            let g = gram(&bank);
            for a in 0..m {
                for b in 0..m {
                    let expect = if a == b { 1.0 } else { 0.0 };
                    assert!(
                        (g[a][b] - expect).abs() < 1e-8,
                        "gram[{a}][{b}] = {} at J={j}",
                        g[a][b]
                    );
                }
            }
            for row in &g {
                assert!((row.iter().sum::<f64>()).is_finite());
            }
            // unit energy within 1e-10
            for t in bank.tapers() {
                let e: f64 = t.iter().map(|x| x * x).sum();
                assert!((e - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn concentrations_decrease_and_exceed_study_floor() {
        let bank = compute_dpss(64, 4.0, 5).unwrap();
        let c = bank.concentrations();
        for m in 0..c.len() {
            assert!(c[m] > 0.99, "concentration[{m}] = {}", c[m]);
            if m > 0 {
                assert!(c[m] < c[m - 1]);
            }
        }
    }

    /// Quadrature oracle: integrate each taper's spectrum over the target
    /// band with Simpson's rule and compare with the kernel-form value.
    #[test]
    fn concentration_matches_spectral_quadrature() {
        for &(j, tw, m) in &[(64usize, 4.0, 5usize), (256, 3.5, 4)] {
            let bank = compute_dpss(j, tw, m).unwrap();
            let w = bank.half_bandwidth();
            for (mi, taper) in bank.tapers().iter().enumerate() {
                let steps = 8192; // even
                let h = w / steps as f64;
                let spectrum_sq = |f: f64| {
                    let (mut re, mut im) = (0.0, 0.0);
                    for (l, &x) in taper.iter().enumerate() {
                        let phi = -2.0 * std::f64::consts::PI * f * l as f64;
                        re += x * phi.cos();
                        im += x * phi.sin();
                    }
                    re * re + im * im
                };
                let mut integral = spectrum_sq(0.0) + spectrum_sq(w);
                for s in 1..steps {
                    let weight = if s % 2 == 1 { 4.0 } else { 2.0 };
                    integral += weight * spectrum_sq(s as f64 * h);
                }
                integral *= h / 3.0;
                let oracle = 2.0 * integral; // symmetric in f
                assert!(
                    (oracle - bank.concentrations()[mi]).abs() < 1e-6,
                    "J={j} taper {mi}: kernel {} vs quadrature {oracle}",
                    bank.concentrations()[mi]
                );
            }
        }
    }

    #[test]
    fn taper_budget_enforced() {
        let err = compute_dpss(64, 2.0, 5).unwrap_err();
        assert!(err.to_string().contains("concentration budget"));
        assert!(compute_dpss(64, 4.0, 7).is_ok());
        assert!(compute_dpss(64, 4.0, 8).is_err());
    }

    #[test]
    fn first_taper_is_positive_bell() {
        let bank = compute_dpss(128, 4.0, 3).unwrap();
        let t0 = bank.taper(0);
        assert!(t0.iter().all(|&x| x > -1e-12));
        // symmetric about the center
        for l in 0..64 {
            assert!((t0[l] - t0[127 - l]).abs() < 1e-8);
        }
        // second taper antisymmetric with positive first lobe
        let t1 = bank.taper(1);
        let max_abs = t1.iter().fold(0.0f64, |a, &x| a.max(x.abs()));
        let first = t1.iter().find(|x| x.abs() > 1e-7 * max_abs).unwrap();
        assert!(*first > 0.0);
        for l in 0..64 {
            assert!((t1[l] + t1[127 - l]).abs() < 1e-8);
        }
    }
}
