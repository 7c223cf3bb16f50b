//! Cross-subject grouping of discovered states: normalized MAP spectra
//! compared under a symmetric KL divergence, clustered by occurrence-
//! weighted k-means with a closed-form centroid.
//!
//! The per-band divergence `f1/f2 + f2/f1 - 2` is zero exactly at
//! equality; constant offsets cannot change nearest-centroid assignments,
//! so the choice of constant is free and this one makes the self-distance
//! vanish.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::PosteriorSample;
use crate::model::InverseGamma;
use crate::rng;
use rand::Rng;

/// One discovered state of one subject, ready for clustering: normalized
/// MAP spectrum plus its occurrence weight.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubjectState {
    pub subject: String,
    pub state: usize,
    /// Normalized spectrum, sums to one.
    pub spectrum: Vec<f64>,
    /// Median window count across posterior samples.
    pub occurrences: u64,
}

/// Fitted cluster model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterModel {
    /// Normalized centroid spectra.
    pub centroids: Vec<Vec<f64>>,
    /// Cluster index per input state, parallel to the fitting input.
    pub assignments: Vec<usize>,
    /// Final weighted distortion.
    pub distortion: f64,
    /// Distortion after every update of the winning restart.
    pub distortion_trace: Vec<f64>,
}

/// MAP of an inverse-gamma posterior: `rate / (shape + 1)`.
pub fn map_spectrum(posterior: InverseGamma) -> f64 {
    posterior.mode()
}

/// Scale a positive spectrum to unit sum.
pub fn normalize_spectrum(spectrum: &[f64]) -> Result<Vec<f64>> {
    if spectrum.is_empty() {
        return Err(Error::validation("empty spectrum"));
    }
    if spectrum.iter().any(|&f| !(f > 0.0)) {
        return Err(Error::validation("spectrum entries must be positive"));
    }
    let total: f64 = spectrum.iter().sum();
    Ok(spectrum.iter().map(|f| f / total).collect())
}

/// Symmetric KL divergence between two positive spectra:
/// `sum_j (f1/f2 + f2/f1 - 2)`.
pub fn symmetric_kl(f1: &[f64], f2: &[f64]) -> Result<f64> {
    if f1.len() != f2.len() {
        return Err(Error::validation("spectra have different lengths"));
    }
    if f1.iter().chain(f2).any(|&f| !(f > 0.0)) {
        return Err(Error::validation("spectra must be strictly positive"));
    }
    Ok(f1.iter().zip(f2).map(|(&a, &b)| a / b + b / a - 2.0).sum())
}

fn symmetric_kl_unchecked(f1: &[f64], f2: &[f64]) -> f64 {
    f1.iter().zip(f2).map(|(&a, &b)| a / b + b / a - 2.0).sum()
}

/// Coordinate-wise minimizer of the weighted divergence sum:
/// `sqrt(sum(n f) / sum(n / f))` per band.
pub fn weighted_centroid(members: &[(&[f64], f64)]) -> Result<Vec<f64>> {
    if members.is_empty() {
        return Err(Error::validation("centroid of an empty member set"));
    }
    let bands = members[0].0.len();
    let mut centroid = Vec::with_capacity(bands);
    for j in 0..bands {
        let mut num = 0.0;
        let mut den = 0.0;
        for (spectrum, weight) in members {
            num += weight * spectrum[j];
            den += weight / spectrum[j];
        }
        centroid.push((num / den).sqrt());
    }
    Ok(centroid)
}

/// The closed-form centroid rescaled to unit sum, the form reported in the
/// cluster manifest.
pub fn weighted_centroid_normalized(members: &[(&[f64], f64)]) -> Result<Vec<f64>> {
    normalize_spectrum(&weighted_centroid(members)?)
}

/// Median across posterior samples of the number of windows assigned to
/// `state` (lower median for even sample counts). States that never appear
/// in a sample contribute a zero count.
pub fn representative_occurrences(samples: &[PosteriorSample], state: usize) -> Result<u64> {
    if samples.is_empty() {
        return Err(Error::validation("need at least one posterior sample"));
    }
    let mut counts: Vec<u64> = samples
        .iter()
        .map(|s| s.trajectory.iter().filter(|&&w| w == state).count() as u64)
        .collect();
    counts.sort_unstable();
    Ok(counts[(counts.len() - 1) / 2])
}

/// Pool the per-sample sufficient statistics of one subject's states into
/// MAP spectra and occurrence weights. States never visited in any
/// retained sample are dropped.
pub fn pool_subject_states(
    subject: &str,
    samples: &[PosteriorSample],
    taper_count: usize,
    ig_shape: f64,
    b_prior_mean: f64,
) -> Result<Vec<SubjectState>> {
    if samples.is_empty() {
        return Err(Error::validation("need at least one posterior sample"));
    }
    let band_count = samples
        .iter()
        .flat_map(|s| s.states.first())
        .map(|st| st.psd.len())
        .next()
        .ok_or_else(|| Error::validation("samples carry no states"))?;
    let max_state = samples.iter().map(|s| s.occupied).max().unwrap_or(0);
    let mut out = Vec::new();
    for state in 0..max_state {
        let occurrences = representative_occurrences(samples, state)?;
        if occurrences == 0 {
            continue;
        }
        let mut valid_windows = 0usize;
        let mut power_sum = vec![0.0f64; band_count];
        for sample in samples {
            if let Some(record) = sample.states.get(state) {
                valid_windows += record.valid_occupancy;
                for (acc, &ss) in power_sum.iter_mut().zip(&record.power_sum) {
                    *acc += ss;
                }
            }
        }
        let spectrum: Vec<f64> = power_sum
            .iter()
            .map(|&ss| {
                let post = InverseGamma::new(
                    ig_shape + (valid_windows * taper_count) as f64,
                    b_prior_mean + ss,
                );
                map_spectrum(post)
            })
            .collect();
        out.push(SubjectState {
            subject: subject.to_string(),
            state,
            spectrum: normalize_spectrum(&spectrum)?,
            occurrences,
        });
    }
    Ok(out)
}

/// Occurrence-weighted k-means under the symmetric KL divergence.
///
/// Iterations alternate nearest-centroid assignment with the closed-form
/// centroid update until assignments stabilize (or 500 rounds), keeping
/// the best of `restarts` seeded starts. The raw (unnormalized) centroid
/// minimizer drives the iterations so the weighted distortion is
/// non-increasing by construction; reported centroids are normalized.
pub fn weighted_kmeans(
    states: &[SubjectState],
    n_clusters: usize,
    restarts: usize,
    seed: u64,
) -> Result<ClusterModel> {
    if n_clusters == 0 {
        return Err(Error::validation("cluster count must be positive"));
    }
    if n_clusters > states.len() {
        return Err(Error::validation(format!(
            "{n_clusters} clusters requested for {} states",
            states.len()
        )));
    }
    let bands = states[0].spectrum.len();
    for s in states {
        if s.spectrum.len() != bands {
            return Err(Error::validation("states have inconsistent band counts"));
        }
        if s.occurrences == 0 {
            return Err(Error::validation("zero-weight states must be excluded before clustering"));
        }
        if s.spectrum.iter().any(|&f| !(f > 0.0)) {
            return Err(Error::validation("state spectra must be strictly positive"));
        }
    }

    let mut rng = rng::seeded(seed);
    let mut best: Option<(f64, Vec<usize>, Vec<Vec<f64>>, Vec<f64>)> = None;
    for _ in 0..restarts.max(1) {
        let (distortion, assignments, centroids, trace) =
            fit_once(states, n_clusters, &mut rng)?;
        if best.as_ref().is_none_or(|(d, ..)| distortion < *d) {
            best = Some((distortion, assignments, centroids, trace));
        }
    }
    let (distortion, assignments, centroids, distortion_trace) = best.expect("restarts >= 1");
    let centroids = centroids
        .iter()
        .map(|c| normalize_spectrum(c))
        .collect::<Result<Vec<_>>>()?;
    Ok(ClusterModel { centroids, assignments, distortion, distortion_trace })
}

fn fit_once(
    states: &[SubjectState],
    n_clusters: usize,
    rng: &mut impl Rng,
) -> Result<(f64, Vec<usize>, Vec<Vec<f64>>, Vec<f64>)> {
    let mut centroids = seed_centroids(states, n_clusters, rng);
    let mut assignments = vec![usize::MAX; states.len()];
    let mut trace: Vec<f64> = Vec::new();
    for _round in 0..500 {
        // assignment step
        let mut changed = false;
        let mut distortion = 0.0;
        for (i, s) in states.iter().enumerate() {
            let (mut best_c, mut best_d) = (0usize, f64::INFINITY);
            for (c, centroid) in centroids.iter().enumerate() {
                let d = symmetric_kl_unchecked(&s.spectrum, centroid);
                if d < best_d {
                    best_d = d;
                    best_c = c;
                }
            }
            if assignments[i] != best_c {
                changed = true;
                assignments[i] = best_c;
            }
            distortion += s.occurrences as f64 * best_d;
        }
        if let Some(&prev) = trace.last() {
            debug_assert!(
                distortion <= prev + 1e-9 * prev.abs().max(1.0),
                "distortion rose from {prev} to {distortion}"
            );
        }
        trace.push(distortion);
        if !changed {
            break;
        }
        // update step, re-seeding any emptied cluster from the worst-fit state
        let mut members: Vec<Vec<(&[f64], f64)>> = vec![Vec::new(); n_clusters];
        for (s, &c) in states.iter().zip(&assignments) {
            members[c].push((&s.spectrum, s.occurrences as f64));
        }
        for (c, group) in members.iter().enumerate() {
            if group.is_empty() {
                let farthest = states
                    .iter()
                    .enumerate()
                    .max_by(|(i, a), (j, b)| {
                        let da = symmetric_kl_unchecked(&a.spectrum, &centroids[assignments[*i]]);
                        let db = symmetric_kl_unchecked(&b.spectrum, &centroids[assignments[*j]]);
                        da.partial_cmp(&db).expect("finite divergence")
                    })
                    .map(|(i, _)| i)
                    .expect("states nonempty");
                centroids[c] = states[farthest].spectrum.clone();
            } else {
                centroids[c] = weighted_centroid(group)?;
            }
        }
    }
    let distortion = *trace.last().expect("at least one round");
    Ok((distortion, assignments, centroids, trace))
}

/// Probabilistic seeding: the first centroid is occurrence-weighted, the
/// rest are weighted by occurrence times divergence from the nearest
/// already-chosen centroid.
fn seed_centroids(states: &[SubjectState], n_clusters: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(n_clusters);
    let weights: Vec<f64> = states.iter().map(|s| s.occurrences as f64).collect();
    let first = weighted_pick(&weights, rng);
    centroids.push(states[first].spectrum.clone());
    while centroids.len() < n_clusters {
        let scores: Vec<f64> = states
            .iter()
            .zip(&weights)
            .map(|(s, &w)| {
                let nearest = centroids
                    .iter()
                    .map(|c| symmetric_kl_unchecked(&s.spectrum, c))
                    .fold(f64::INFINITY, f64::min);
                w * nearest
            })
            .collect();
        let total: f64 = scores.iter().sum();
        let pick = if total > 0.0 { weighted_pick(&scores, rng) } else { weighted_pick(&weights, rng) };
        centroids.push(states[pick].spectrum.clone());
    }
    centroids
}

fn weighted_pick(weights: &[f64], rng: &mut impl Rng) -> usize {
    let total: f64 = weights.iter().sum();
    let u = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.len() - 1
}
