//! Seeded sampling helpers.
//!
//! Every stochastic routine in the crate threads an explicit `Rng`; the
//! pipeline uses `ChaCha8Rng` seeded from the run configuration so that
//! outputs are reproducible byte for byte. The wrappers here guard the
//! degenerate corners of `rand_distr` (underflow to zero for tiny shape
//! parameters) without changing the distributions in any measurable way.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Gamma};

/// Smallest positive value we allow for quantities that must stay > 0.
const FLOOR: f64 = 1e-300;

pub fn seeded(seed: u64) -> ChaCha8Rng {
    use rand::SeedableRng;
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform draw strictly inside (0, 1).
pub fn open_unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.gen();
        if u > 0.0 {
            return u;
        }
    }
}

/// Gamma(shape, rate) draw, floored away from zero.
pub fn gamma<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> f64 {
    debug_assert!(shape > 0.0 && rate > 0.0);
    let g = Gamma::new(shape, 1.0 / rate).expect("gamma parameters");
    g.sample(rng).max(FLOOR)
}

/// Beta(a, b) draw, clamped strictly inside (0, 1).
pub fn beta<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    debug_assert!(a > 0.0 && b > 0.0);
    let d = Beta::new(a, b).expect("beta parameters");
    d.sample(rng).clamp(FLOOR, 1.0 - 1e-16)
}

/// Dirichlet draw via normalized gamma variates.
pub fn dirichlet<R: Rng + ?Sized>(alphas: &[f64], rng: &mut R) -> Vec<f64> {
    debug_assert!(alphas.iter().all(|&a| a > 0.0));
    let mut draws: Vec<f64> = alphas.iter().map(|&a| gamma(a, 1.0, rng)).collect();
    let sum: f64 = draws.iter().sum();
    for d in &mut draws {
        *d /= sum;
    }
    draws
}

/// Inverse-gamma(shape, rate) draw: reciprocal of a Gamma(shape, rate) draw.
///
/// Mean is rate/(shape-1) for shape > 1.
pub fn inverse_gamma<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> f64 {
    1.0 / gamma(shape, rate, rng).max(FLOOR)
}

/// Standard normal draw.
pub fn normal<R: Rng + ?Sized>(mean: f64, sd: f64, rng: &mut R) -> f64 {
    let z: f64 = rand_distr::StandardNormal.sample(rng);
    mean + sd * z
}
