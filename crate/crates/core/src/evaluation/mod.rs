//! Scoring and reporting: alpha-power state reordering, rank correlation
//! against reference stage annotations, stage-by-cluster occupancy
//! heatmaps, and within-stage cluster transition rates.

use serde::{Deserialize, Serialize};

use crate::clustering::normalize_spectrum;
use crate::error::{Error, Result};
use crate::inference::PosteriorSample;
use crate::model::InverseGamma;

/// Canonical stage labels: 5 = wake down to 1 = deepest sleep.
pub const STAGE_LABELS: [u8; 5] = [1, 2, 3, 4, 5];

/// Reference stage annotations on a fixed epoch grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Hypnogram {
    pub labels: Vec<u8>,
    pub epoch_seconds: f64,
}

impl Hypnogram {
    pub fn new(labels: Vec<u8>, epoch_seconds: f64) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::validation("hypnogram is empty"));
        }
        if !(epoch_seconds > 0.0) {
            return Err(Error::validation("epoch length must be positive"));
        }
        if let Some(bad) = labels.iter().find(|l| !(1..=5).contains(*l)) {
            return Err(Error::validation(format!("stage label {bad} outside 1..=5")));
        }
        Ok(Hypnogram { labels, epoch_seconds })
    }

    /// Replicate each epoch label onto the model's window grid. The epoch
    /// must span a whole number of windows; output length is the shorter
    /// of the two grids.
    pub fn to_windows(&self, window_seconds: f64, n_windows: usize) -> Result<Vec<u8>> {
        let ratio = self.epoch_seconds / window_seconds;
        let factor = ratio.round() as usize;
        if factor == 0 || (ratio - factor as f64).abs() > 1e-9 {
            return Err(Error::validation(format!(
                "epoch of {} s is not a whole number of {} s windows",
                self.epoch_seconds, window_seconds
            )));
        }
        let mut out = Vec::with_capacity(n_windows);
        'outer: for &label in &self.labels {
            for _ in 0..factor {
                if out.len() == n_windows {
                    break 'outer;
                }
                out.push(label);
            }
        }
        Ok(out)
    }
}

/// Indices of retained bands whose interval overlaps the alpha interval.
pub fn alpha_band_indices(bands: &[(f64, f64)], alpha: (f64, f64)) -> Result<Vec<usize>> {
    let hits: Vec<usize> = bands
        .iter()
        .enumerate()
        .filter(|(_, &(lo, hi))| lo < alpha.1 && alpha.0 < hi)
        .map(|(i, _)| i)
        .collect();
    if hits.is_empty() {
        return Err(Error::validation(format!(
            "alpha band ({}, {}) Hz overlaps no retained band",
            alpha.0, alpha.1
        )));
    }
    Ok(hits)
}

/// Rank states by descending normalized alpha-band power: rank 1 is the
/// most alpha-dominant. Ties fall back to total power, then state id.
/// Returns the rank per state index.
pub fn reorder_by_alpha(spectra: &[Vec<f64>], alpha_indices: &[usize]) -> Result<Vec<usize>> {
    if spectra.is_empty() {
        return Err(Error::validation("no states to reorder"));
    }
    let mut keyed: Vec<(usize, f64, f64)> = spectra
        .iter()
        .enumerate()
        .map(|(id, raw)| {
            let normalized = normalize_spectrum(raw)?;
            let alpha_share: f64 = alpha_indices.iter().map(|&j| normalized[j]).sum();
            let total: f64 = raw.iter().sum();
            Ok((id, alpha_share, total))
        })
        .collect::<Result<_>>()?;
    keyed.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .expect("finite powers")
            .then(b.2.partial_cmp(&a.2).expect("finite powers"))
            .then(a.0.cmp(&b.0))
    });
    let mut ranks = vec![0usize; spectra.len()];
    for (rank, (id, _, _)) in keyed.iter().enumerate() {
        ranks[*id] = rank + 1;
    }
    Ok(ranks)
}

/// Arousal-ordered label per state: the most alpha-dominant state gets the
/// largest label, mirroring the wake-high convention of the reference
/// annotations.
pub fn arousal_labels(ranks: &[usize]) -> Vec<usize> {
    let k = ranks.len();
    ranks.iter().map(|r| k + 1 - r).collect()
}

/// Mid-rank transform: average ranks for ties.
fn midranks(xs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).expect("finite values"));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with mid-ranks for ties.
pub fn spearman_rho(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::validation("sequences have different lengths"));
    }
    if x.len() < 2 {
        return Err(Error::validation("need at least two observations"));
    }
    let constant = |v: &[f64]| v.iter().all(|&a| a == v[0]);
    if constant(x) || constant(y) {
        return Err(Error::validation("rho undefined for a constant sequence"));
    }
    let rx = midranks(x);
    let ry = midranks(y);
    let n = x.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let mut cov = 0.0;
    let mut var_x = 0.0;
    let mut var_y = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        cov += (a - mean) * (b - mean);
        var_x += (a - mean) * (a - mean);
        var_y += (b - mean) * (b - mean);
    }
    Ok(cov / (var_x * var_y).sqrt())
}

/// Distribution of per-sample rank correlations between alpha-reordered
/// trajectories and the window-aligned reference annotation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RhoDistribution {
    pub rhos: Vec<f64>,
    pub median: f64,
}

/// For each retained sample: reorder its states by alpha power of their
/// per-sample MAP spectra, map the trajectory to arousal-ordered labels,
/// and correlate with the reference labels.
pub fn rho_distribution(
    samples: &[PosteriorSample],
    hypnogram_windows: &[u8],
    bands: &[(f64, f64)],
    alpha: (f64, f64),
) -> Result<RhoDistribution> {
    if samples.is_empty() {
        return Err(Error::validation("need at least one posterior sample"));
    }
    let alpha_idx = alpha_band_indices(bands, alpha)?;
    let mut rhos = Vec::with_capacity(samples.len());
    for sample in samples {
        let spectra: Vec<Vec<f64>> = sample
            .states
            .iter()
            .map(|st| {
                st.post_shape
                    .iter()
                    .zip(&st.post_rate)
                    .map(|(&shape, &rate)| InverseGamma::new(shape, rate).mode())
                    .collect()
            })
            .collect();
        let ranks = reorder_by_alpha(&spectra, &alpha_idx)?;
        let labels = arousal_labels(&ranks);
        let len = sample.trajectory.len().min(hypnogram_windows.len());
        let x: Vec<f64> = sample.trajectory[..len].iter().map(|&s| labels[s] as f64).collect();
        let y: Vec<f64> = hypnogram_windows[..len].iter().map(|&h| h as f64).collect();
        rhos.push(spearman_rho(&x, &y)?);
    }
    let mut sorted = rhos.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite rho"));
    let median = sorted[(sorted.len() - 1) / 2];
    Ok(RhoDistribution { rhos, median })
}

/// Per-window modal state across retained samples; ties take the smallest
/// label.
pub fn modal_trajectory(samples: &[PosteriorSample]) -> Result<Vec<usize>> {
    if samples.is_empty() {
        return Err(Error::validation("need at least one posterior sample"));
    }
    let t_len = samples[0].trajectory.len();
    let max_state = samples.iter().map(|s| s.occupied).max().unwrap_or(1);
    let mut out = Vec::with_capacity(t_len);
    let mut counts = vec![0usize; max_state];
    for t in 0..t_len {
        counts.iter_mut().for_each(|c| *c = 0);
        for s in samples {
            counts[s.trajectory[t]] += 1;
        }
        let best = counts.iter().enumerate().max_by_key(|&(i, &c)| (c, usize::MAX - i)).unwrap().0;
        out.push(best);
    }
    Ok(out)
}

/// Stage-by-cluster occupancy: for every canonical stage, the proportion
/// of its windows spent in each cluster (rows follow `cluster_order`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageClusterHeatmap {
    /// Cluster ids, one per row.
    pub cluster_order: Vec<usize>,
    /// `proportions[row][stage-1]`; columns of present stages sum to one.
    pub proportions: Vec<Vec<f64>>,
    /// Stages with no windows (their columns are all zero).
    pub empty_stages: Vec<u8>,
}

pub fn stage_cluster_heatmap(
    hypnogram_windows: &[u8],
    clusters: &[usize],
    cluster_order: &[usize],
) -> Result<StageClusterHeatmap> {
    if hypnogram_windows.is_empty() || hypnogram_windows.len() != clusters.len() {
        return Err(Error::validation("stage and cluster tracks must align and be nonempty"));
    }
    let n_clusters = cluster_order.len();
    let mut row_of = vec![usize::MAX; n_clusters];
    for (row, &c) in cluster_order.iter().enumerate() {
        row_of[c] = row;
    }
    let mut counts = vec![vec![0.0f64; 5]; n_clusters];
    let mut stage_totals = [0.0f64; 5];
    for (&stage, &cluster) in hypnogram_windows.iter().zip(clusters) {
        let row = row_of[cluster];
        counts[row][(stage - 1) as usize] += 1.0;
        stage_totals[(stage - 1) as usize] += 1.0;
    }
    let mut empty_stages = Vec::new();
    for (s, &total) in stage_totals.iter().enumerate() {
        if total == 0.0 {
            empty_stages.push((s + 1) as u8);
        } else {
            for row in counts.iter_mut() {
                row[s] /= total;
            }
        }
    }
    Ok(StageClusterHeatmap { cluster_order: cluster_order.to_vec(), proportions: counts, empty_stages })
}

/// Cluster-label changes per minute among consecutive windows scored as
/// `stage`.
pub fn transition_rate_per_minute(
    hypnogram_windows: &[u8],
    clusters: &[usize],
    stage: u8,
    window_seconds: f64,
) -> Result<f64> {
    if hypnogram_windows.len() != clusters.len() {
        return Err(Error::validation("stage and cluster tracks must align"));
    }
    let windows = hypnogram_windows.iter().filter(|&&h| h == stage).count();
    if windows == 0 {
        return Err(Error::validation(format!("stage {stage} occupies no windows")));
    }
    let mut changes = 0usize;
    for t in 1..hypnogram_windows.len() {
        if hypnogram_windows[t] == stage
            && hypnogram_windows[t - 1] == stage
            && clusters[t] != clusters[t - 1]
        {
            changes += 1;
        }
    }
    let minutes = windows as f64 * window_seconds / 60.0;
    Ok(changes as f64 / minutes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hypnogram_replicates_epochs_onto_windows() {
        let hyp = Hypnogram::new(vec![5, 4, 1], 30.0).unwrap();
        let windows = hyp.to_windows(15.0, 6).unwrap();
        assert_eq!(windows, vec![5, 5, 4, 4, 1, 1]);
        // shorter model grid truncates
        assert_eq!(hyp.to_windows(15.0, 3).unwrap(), vec![5, 5, 4]);
        // non-integer ratio is rejected
        assert!(hyp.to_windows(9.0, 10).is_err());
        assert!(Hypnogram::new(vec![0], 30.0).is_err());
        assert!(Hypnogram::new(vec![6], 30.0).is_err());
    }

    #[test]
    fn alpha_ranking_examples() {
        let alpha_idx = vec![1usize];
        // state 0 dominant in alpha, state 1 not
        let spectra = vec![vec![0.1, 0.9], vec![0.9, 0.1]];
        assert_eq!(reorder_by_alpha(&spectra, &alpha_idx).unwrap(), vec![1, 2]);
        // permuting the input permutes the ranks identically
        let swapped = vec![spectra[1].clone(), spectra[0].clone()];
        assert_eq!(reorder_by_alpha(&swapped, &alpha_idx).unwrap(), vec![2, 1]);
        // arousal labels flip the order: most alpha -> largest label
        assert_eq!(arousal_labels(&[1, 2]), vec![2, 1]);
    }

    #[test]
    fn alpha_band_overlap_selection() {
        let bands = vec![(0.5, 2.5), (2.5, 4.5), (10.5, 12.5), (12.5, 35.0)];
        assert_eq!(alpha_band_indices(&bands, (10.5, 12.5)).unwrap(), vec![2]);
        assert_eq!(alpha_band_indices(&bands, (8.0, 12.0)).unwrap(), vec![2]);
        assert!(alpha_band_indices(&bands, (5.0, 6.0)).is_err());
    }

    #[test]
    fn rank_ties_break_by_total_power() {
        let alpha_idx = vec![0usize];
        // identical normalized spectra; state 1 has higher total power
        let spectra = vec![vec![1.0, 1.0], vec![2.0, 2.0]];
        assert_eq!(reorder_by_alpha(&spectra, &alpha_idx).unwrap(), vec![2, 1]);
    }

    #[test]
    fn spearman_examples() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert!((spearman_rho(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        let rev = [4.0, 3.0, 2.0, 1.0];
        assert!((spearman_rho(&x, &rev).unwrap() + 1.0).abs() < 1e-12);
        let y = [1.0, 3.0, 2.0, 4.0];
        assert!((spearman_rho(&x, &y).unwrap() - 0.8).abs() < 1e-12);
        assert!(spearman_rho(&[1.0, 1.0], &[1.0, 2.0]).is_err());
        assert!(spearman_rho(&[1.0], &[1.0]).is_err());
        // symmetry
        assert_eq!(spearman_rho(&x, &y).unwrap(), spearman_rho(&y, &x).unwrap());
    }

    #[test]
    fn spearman_midranks_for_ties() {
        let x = [1.0, 1.0, 2.0];
        let y = [1.0, 2.0, 3.0];
        // ranks x = (1.5, 1.5, 3), y = (1, 2, 3)
        let expect = 1.5 / (1.5f64 * 2.0).sqrt();
        assert!((spearman_rho(&x, &y).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn modal_trajectory_majority_vote() {
        let sample = |traj: Vec<usize>, occupied: usize| PosteriorSample {
            iteration: 0,
            occupied,
            trajectory: traj,
            states: vec![],
            init_counts: vec![],
            transition_counts: vec![],
            log_joint: 0.0,
        };
        let samples = vec![
            sample(vec![0, 1, 1], 2),
            sample(vec![0, 1, 0], 2),
            sample(vec![1, 1, 0], 2),
        ];
        assert_eq!(modal_trajectory(&samples).unwrap(), vec![0, 1, 0]);
    }

    #[test]
    fn heatmap_single_cluster_is_unit_mass() {
        let hyp = vec![5u8, 5, 4, 1, 1, 1];
        let clusters = vec![0usize; 6];
        let hm = stage_cluster_heatmap(&hyp, &clusters, &[0]).unwrap();
        for stage in [5u8, 4, 1] {
            assert_eq!(hm.proportions[0][(stage - 1) as usize], 1.0);
        }
        assert_eq!(hm.empty_stages, vec![2, 3]);
    }

    #[test]
    fn heatmap_ninety_ten_split() {
        // 10 REM windows: 9 in cluster 1, 1 in cluster 0
        let hyp = vec![4u8; 10];
        let clusters = vec![1, 1, 1, 0, 1, 1, 1, 1, 1, 1];
        let hm = stage_cluster_heatmap(&hyp, &clusters, &[0, 1]).unwrap();
        let rem = 3usize;
        assert!((hm.proportions[0][rem] - 0.1).abs() < 1e-12);
        assert!((hm.proportions[1][rem] - 0.9).abs() < 1e-12);
    }

    #[test]
    fn heatmap_invariant_to_window_shuffle_within_stage() {
        let hyp = vec![2u8, 2, 2, 2, 3, 3];
        let a = stage_cluster_heatmap(&hyp, &[0, 0, 1, 1, 0, 1], &[0, 1]).unwrap();
        let b = stage_cluster_heatmap(&hyp, &[1, 1, 0, 0, 1, 0], &[0, 1]).unwrap();
        // counting only: swapping which windows carry which cluster within a
        // stage keeps the column proportions (after relabeling 0<->1)
        assert_eq!(a.proportions[0], b.proportions[1]);
        assert_eq!(a.proportions[1], b.proportions[0]);
        // columns of present stages sum to one
        for stage in [2usize, 3] {
            let sum: f64 = (0..2).map(|c| a.proportions[c][stage - 1]).sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn transition_rate_examples() {
        let window_seconds = 15.0;
        // constant cluster within the stage
        let hyp = vec![2u8; 8];
        assert_eq!(
            transition_rate_per_minute(&hyp, &[3usize; 8], 2, window_seconds).unwrap(),
            0.0
        );
        // alternating clusters across 4 windows of one stage: 3 changes in 1 minute
        let hyp = vec![4u8; 4];
        let clusters = vec![0usize, 1, 0, 1];
        assert_eq!(transition_rate_per_minute(&hyp, &clusters, 4, window_seconds).unwrap(), 3.0);
        // bijective relabeling leaves the rate unchanged
        let relabeled = vec![7usize, 2, 7, 2];
        assert_eq!(transition_rate_per_minute(&hyp, &relabeled, 4, window_seconds).unwrap(), 3.0);
        // absent stage errors
        assert!(transition_rate_per_minute(&hyp, &clusters, 1, window_seconds).is_err());
    }

    #[test]
    fn rho_distribution_zero_width_for_identical_trajectories() {
        let state_record = |psd: Vec<f64>| crate::inference::StateRecord {
            id: 0,
            occupancy: 2,
            valid_occupancy: 2,
            ig_rate: vec![1.0; psd.len()],
            power_sum: vec![1.0; psd.len()],
            post_shape: vec![5.0; psd.len()],
            post_rate: psd,
            psd: vec![1.0, 1.0],
        };
        let sample = || PosteriorSample {
            iteration: 0,
            occupied: 2,
            trajectory: vec![0, 0, 1, 1],
            states: vec![state_record(vec![1.0, 8.0]), state_record(vec![8.0, 1.0])],
            init_counts: vec![],
            transition_counts: vec![],
            log_joint: 0.0,
        };
        let samples = vec![sample(), sample(), sample()];
        let bands = vec![(0.5, 2.5), (10.5, 12.5)];
        // state 0 is alpha-dominant -> label 2; trajectory maps to 2,2,1,1
        let hyp = vec![5u8, 5, 1, 1];
        let dist = rho_distribution(&samples, &hyp, &bands, (10.5, 12.5)).unwrap();
        assert_eq!(dist.rhos.len(), 3);
        assert!(dist.rhos.iter().all(|&r| (r - dist.rhos[0]).abs() < 1e-12));
        assert!((dist.median - 1.0).abs() < 1e-12);
    }
}
