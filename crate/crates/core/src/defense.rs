//! Aggregator-side countermeasure: subsampled re-estimation scored by an
//! isolation forest, plus a consistency check between the two estimates a
//! streaming protocol produces at each publication timestamp.
//!
//! The pipeline: split the received reports into `s` random subsets of
//! fraction `r`, estimate frequencies on each, score the estimates with an
//! isolation forest, and release the least anomalous one. Fake users
//! cluster into some subsets more than others, so attacked collections
//! spread the estimates and the forest pushes the most contaminated ones
//! away. Independently, a two-sample Kolmogorov-Smirnov check compares the
//! dissimilarity-phase estimate against the publication-phase estimate;
//! the two measure the same distribution, so inconsistency indicates
//! manipulation.

use rand::Rng;

use crate::error::{Error, Result};
use crate::freq_oracle::{fo_aggregate_counts, fo_variance, FoParams, ReportSet};
use crate::rng::SimRng;
use crate::util::sample_indices;

/// Defense knobs. `r` and `s` shape the subsampled re-estimation; `trees`
/// and `subsample_size` configure the isolation forest; `ks_alpha` is the
/// consistency-check significance level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DefenseConfig {
    /// Fraction of reports per subset, in (0, 1].
    pub r: f64,
    /// Number of subsets scored against each other.
    pub s: usize,
    pub trees: usize,
    /// Per-tree sample for the forest (capped at the number of subsets).
    pub subsample_size: usize,
    pub ks_alpha: f64,
}

impl Default for DefenseConfig {
    fn default() -> Self {
        DefenseConfig { r: 0.5, s: 20, trees: 100, subsample_size: 16, ks_alpha: 0.05 }
    }
}

impl DefenseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.r > 0.0 && self.r <= 1.0) {
            return Err(Error::config(format!("subset fraction must be in (0, 1], got {}", self.r)));
        }
        if self.s < 2 {
            return Err(Error::config("need at least two subsets to compare"));
        }
        if self.trees == 0 {
            return Err(Error::config("isolation forest needs at least one tree"));
        }
        if self.subsample_size < 2 {
            return Err(Error::config("per-tree sample must be at least 2"));
        }
        if !(self.ks_alpha > 0.0 && self.ks_alpha < 1.0) {
            return Err(Error::config(format!(
                "significance level must be in (0, 1), got {}",
                self.ks_alpha
            )));
        }
        Ok(())
    }
}

/// Estimate frequencies on `s` independent uniform subsets (each drawn
/// without replacement) of the received reports, every subset holding a
/// fraction `r` of them.
pub fn subsample_estimates(
    reports: &ReportSet,
    fo: &FoParams,
    r: f64,
    s: usize,
    rng: &mut SimRng,
) -> Result<Vec<Vec<f64>>> {
    if !(r > 0.0 && r <= 1.0) {
        return Err(Error::config(format!("subset fraction must be in (0, 1], got {r}")));
    }
    let total = reports.len();
    let k = (r * total as f64).round() as usize;
    if k < 1 {
        return Err(Error::config(format!(
            "subset fraction {r} of {total} reports leaves an empty subset"
        )));
    }
    let k = k.min(total);
    let mut estimates = Vec::with_capacity(s);
    for _ in 0..s {
        let picked = sample_indices(rng, total, k);
        let support: Vec<f64> =
            reports.support_of_rows(&picked).iter().map(|&c| c as f64).collect();
        estimates.push(fo_aggregate_counts(fo, &support, k as f64)?);
    }
    Ok(estimates)
}

mod iforest {
    use super::*;

    const EULER_GAMMA: f64 = 0.5772156649015329;

    /// Expected search-path length in a binary tree over n points; the
    /// standard normalization for isolation scores.
    pub(super) fn c_norm(n: usize) -> f64 {
        if n <= 1 {
            return 0.0;
        }
        let nf = n as f64;
        2.0 * ((nf - 1.0).ln() + EULER_GAMMA) - 2.0 * (nf - 1.0) / nf
    }

    enum Node {
        Split { axis: usize, at: f64, below: Box<Node>, above: Box<Node> },
        Leaf { size: usize },
    }

    pub(super) struct Tree {
        root: Node,
    }

    fn build(data: &[Vec<f64>], idx: Vec<usize>, depth: usize, limit: usize, rng: &mut SimRng) -> Node {
        if idx.len() <= 1 || depth >= limit {
            return Node::Leaf { size: idx.len() };
        }
        let d = data[idx[0]].len();
        // only axes with spread can separate anything
        let spread: Vec<(usize, f64, f64)> = (0..d)
            .filter_map(|axis| {
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                for &i in &idx {
                    lo = lo.min(data[i][axis]);
                    hi = hi.max(data[i][axis]);
                }
                (hi > lo).then_some((axis, lo, hi))
            })
            .collect();
        if spread.is_empty() {
            return Node::Leaf { size: idx.len() };
        }
        let (axis, lo, hi) = spread[rng.random_range(0..spread.len())];
        let at = rng.random_range(lo..hi);
        let (below_idx, above_idx): (Vec<usize>, Vec<usize>) =
            idx.into_iter().partition(|&i| data[i][axis] < at);
        Node::Split {
            axis,
            at,
            below: Box::new(build(data, below_idx, depth + 1, limit, rng)),
            above: Box::new(build(data, above_idx, depth + 1, limit, rng)),
        }
    }

    impl Tree {
        pub(super) fn grow(
            data: &[Vec<f64>],
            sample: Vec<usize>,
            limit: usize,
            rng: &mut SimRng,
        ) -> Tree {
            Tree { root: build(data, sample, 0, limit, rng) }
        }

        pub(super) fn path_length(&self, x: &[f64]) -> f64 {
            let mut node = &self.root;
            let mut depth = 0.0;
            loop {
                match node {
                    Node::Leaf { size } => return depth + c_norm(*size),
                    Node::Split { axis, at, below, above } => {
                        node = if x[*axis] < *at { below } else { above };
                        depth += 1.0;
                    }
                }
            }
        }
    }
}

/// Isolation-forest anomaly scores for a set of frequency estimates.
/// Scores are oriented so that a LARGER score means LESS anomalous (the
/// release rule picks the maximum); this flips the usual convention where
/// short isolation paths give high anomaly scores.
pub fn iforest_scores(
    vectors: &[Vec<f64>],
    config: &DefenseConfig,
    rng: &mut SimRng,
) -> Result<Vec<f64>> {
    config.validate()?;
    let n = vectors.len();
    if n == 0 {
        return Err(Error::EmptyInput("no estimates to score"));
    }
    let d = vectors[0].len();
    if vectors.iter().any(|v| v.len() != d) {
        return Err(Error::config("estimates have mixed dimensions"));
    }
    if n == 1 {
        return Ok(vec![0.5]);
    }
    let psi = config.subsample_size.min(n);
    let limit = (psi as f64).log2().ceil() as usize;
    let mut paths = vec![0.0f64; n];
    for _ in 0..config.trees {
        let sample = sample_indices(rng, n, psi);
        let tree = iforest::Tree::grow(vectors, sample, limit, rng);
        for (i, v) in vectors.iter().enumerate() {
            paths[i] += tree.path_length(v);
        }
    }
    let norm = iforest::c_norm(psi);
    Ok(paths
        .iter()
        .map(|&p| {
            let avg = p / config.trees as f64;
            1.0 - 2f64.powf(-avg / norm)
        })
        .collect())
}

/// Release the least anomalous estimate; ties break to the lowest index.
pub fn defended_release(estimates: &[Vec<f64>], scores: &[f64]) -> Result<Vec<f64>> {
    if estimates.is_empty() {
        return Err(Error::EmptyInput("no estimates to release"));
    }
    if estimates.len() != scores.len() {
        return Err(Error::DimensionMismatch { left: estimates.len(), right: scores.len() });
    }
    let mut best = 0;
    for (i, &sc) in scores.iter().enumerate() {
        if sc > scores[best] {
            best = i;
        }
    }
    Ok(estimates[best].clone())
}

/// Sample size at which a plain histogram would be as noisy as the oracle
/// estimate actually is. Randomized reports carry far more noise per user
/// than raw counts, so feeding raw population sizes to the consistency
/// check makes it fire on noise alone; deflating by the oracle's variance
/// inflation calibrates it.
pub fn ks_effective_size(fo: &FoParams, population: f64) -> f64 {
    let fo_var = fo_variance(fo.kind, population, fo.epsilon, fo.d);
    let f0 = 1.0 / fo.d as f64;
    let histogram_var = f0 * (1.0 - f0) / population;
    (population * histogram_var / fo_var).max(1.0)
}

fn discrete_cdf(est: &[f64]) -> Vec<f64> {
    let clipped: Vec<f64> = est.iter().map(|&v| v.max(0.0)).collect();
    let total: f64 = clipped.iter().sum();
    let mut acc = 0.0;
    if total <= 0.0 {
        return (1..=est.len()).map(|k| k as f64 / est.len() as f64).collect();
    }
    clipped
        .iter()
        .map(|v| {
            acc += v / total;
            acc
        })
        .collect()
}

/// Two-sample Kolmogorov-Smirnov check between two frequency estimates of
/// the same distribution, each clipped to the simplex and read as a
/// discrete CDF. Returns true when the estimates are inconsistent enough
/// to suspect an attack. Effective sample sizes come from
/// [`ks_effective_size`].
pub fn ks_consistency(
    est_a: &[f64],
    est_b: &[f64],
    effective_n_a: f64,
    effective_n_b: f64,
    alpha: f64,
) -> Result<bool> {
    if est_a.len() != est_b.len() {
        return Err(Error::DimensionMismatch { left: est_a.len(), right: est_b.len() });
    }
    if est_a.is_empty() {
        return Err(Error::EmptyInput("empty estimates"));
    }
    if !(effective_n_a > 0.0 && effective_n_b > 0.0) {
        return Err(Error::config("effective sample sizes must be positive"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::config(format!("significance level must be in (0, 1), got {alpha}")));
    }
    let cdf_a = discrete_cdf(est_a);
    let cdf_b = discrete_cdf(est_b);
    let d_stat = cdf_a
        .iter()
        .zip(&cdf_b)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    let c_alpha = (-(alpha / 2.0).ln() / 2.0).sqrt();
    let critical =
        c_alpha * ((effective_n_a + effective_n_b) / (effective_n_a * effective_n_b)).sqrt();
    Ok(d_stat > critical)
}

/// Time-and-dimension averaged MSE between a released stream and ground
/// truth.
pub fn mse_stream(released: &[Vec<f64>], truth: &[Vec<f64>]) -> Result<f64> {
    if released.len() != truth.len() {
        return Err(Error::DimensionMismatch { left: released.len(), right: truth.len() });
    }
    if released.is_empty() {
        return Err(Error::EmptyInput("empty stream"));
    }
    let mut total = 0.0;
    let mut cells = 0usize;
    for (a, b) in released.iter().zip(truth) {
        if a.len() != b.len() {
            return Err(Error::DimensionMismatch { left: a.len(), right: b.len() });
        }
        for (x, y) in a.iter().zip(b) {
            total += (x - y) * (x - y);
        }
        cells += a.len();
    }
    Ok(total / cells as f64)
}

/// Error reduction the defense achieved: MSE of the undefended release
/// stream minus MSE of the defended one, both against ground truth.
pub fn accuracy_gain(
    released_before: &[Vec<f64>],
    released_after: &[Vec<f64>],
    truth: &[Vec<f64>],
) -> Result<f64> {
    Ok(mse_stream(released_before, truth)? - mse_stream(released_after, truth)?)
}

/// One row of the per-run defense trace.
#[derive(Debug, Clone)]
pub struct DefenseTraceRow {
    pub t: usize,
    pub detected: bool,
    /// Score of the released subset estimate; empty when the defense did
    /// not rebuild the release this step.
    pub chosen_subset_score: Option<f64>,
    pub ag_running: f64,
}

pub fn write_defense_trace_csv<W: std::io::Write>(
    mut out: W,
    trace: &[DefenseTraceRow],
) -> Result<()> {
    writeln!(out, "t,detected,chosen_subset_score,AG_running")?;
    for row in trace {
        let score = row.chosen_subset_score.map_or(String::new(), |s| s.to_string());
        writeln!(out, "{},{},{},{}", row.t, row.detected, score, row.ag_running)?;
    }
    Ok(())
}
