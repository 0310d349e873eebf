//! Frequency oracles for categorical data under local differential privacy.
//!
//! Two concrete mechanisms are provided, k-ary randomized response (kRR) and
//! optimized unary encoding (OUE), plus an adaptive wrapper that picks
//! whichever has the smaller analytical variance for the given (epsilon, d).
//! Estimates are produced by the usual debiasing transform and are left
//! unclipped and unnormalized: downstream consumers depend on the raw values.
//!
//! Besides the per-report API there is a batch path that draws aggregate
//! support counts directly from binomial/multinomial distributions. For
//! everything the estimator consumes (support counts) the two paths have
//! identical distributions, and the batch path is what makes 1e5-user
//! streaming simulations cheap.

use rand::Rng;
use rand_distr::{Binomial, Distribution};

use crate::error::{Error, Result};
use crate::rng::SimRng;
use crate::util::multinomial_counts;

/// Which frequency oracle to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum FoKind {
    Krr,
    Oue,
    /// Resolves to kRR or OUE, whichever has smaller variance; ties go to kRR.
    Ada,
}

impl FoKind {
    pub fn label(self) -> &'static str {
        match self {
            FoKind::Krr => "krr",
            FoKind::Oue => "oue",
            FoKind::Ada => "ada",
        }
    }
}

impl std::str::FromStr for FoKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "krr" => Ok(FoKind::Krr),
            "oue" => Ok(FoKind::Oue),
            "ada" => Ok(FoKind::Ada),
            other => Err(Error::config(format!("unknown frequency oracle: {other}"))),
        }
    }
}

/// Fully resolved oracle parameters. `kind` is always a concrete mechanism.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FoParams {
    pub kind: FoKind,
    pub d: usize,
    pub epsilon: f64,
    /// Probability that a report supports the holder's true item.
    pub p: f64,
    /// Probability that a report supports any particular other item.
    pub q: f64,
}

/// One perturbed report.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FoReport {
    /// kRR: the (possibly flipped) item index.
    Item(usize),
    /// OUE: one bit per item.
    Bits(Vec<bool>),
}

fn check_common(epsilon: f64, d: usize) -> Result<()> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::config(format!("epsilon must be positive and finite, got {epsilon}")));
    }
    if d < 2 {
        return Err(Error::config(format!("domain size must be at least 2, got {d}")));
    }
    Ok(())
}

/// Resolve oracle parameters for (kind, epsilon, d).
pub fn fo_params(kind: FoKind, epsilon: f64, d: usize) -> Result<FoParams> {
    check_common(epsilon, d)?;
    let e = epsilon.exp();
    let resolved = match kind {
        FoKind::Ada => {
            // any n > 0 gives the same comparison; both variances scale as 1/n
            if krr_variance(1.0, epsilon, d) <= oue_variance(1.0, epsilon, d) {
                FoKind::Krr
            } else {
                FoKind::Oue
            }
        }
        k => k,
    };
    let (p, q) = match resolved {
        FoKind::Krr => (e / (e + d as f64 - 1.0), 1.0 / (e + d as f64 - 1.0)),
        FoKind::Oue => (0.5, 1.0 / (e + 1.0)),
        FoKind::Ada => unreachable!(),
    };
    Ok(FoParams { kind: resolved, d, epsilon, p, q })
}

fn krr_variance(n: f64, epsilon: f64, d: usize) -> f64 {
    let e = epsilon.exp();
    let d = d as f64;
    (d - 2.0 + e) / (n * (e - 1.0) * (e - 1.0)) + (d - 2.0) / (n * d * (e - 1.0))
}

fn oue_variance(n: f64, epsilon: f64, d: usize) -> f64 {
    let e = epsilon.exp();
    let d = d as f64;
    4.0 * e / (n * (e - 1.0) * (e - 1.0)) + 1.0 / (n * d)
}

/// Analytical estimate variance, averaged over the domain, for `n` reports.
/// For `Ada` this is the minimum of the two mechanisms.
pub fn fo_variance(kind: FoKind, n: f64, epsilon: f64, d: usize) -> f64 {
    match kind {
        FoKind::Krr => krr_variance(n, epsilon, d),
        FoKind::Oue => oue_variance(n, epsilon, d),
        FoKind::Ada => krr_variance(n, epsilon, d).min(oue_variance(n, epsilon, d)),
    }
}

/// Perturb one value. `value` must be < d.
pub fn fo_perturb(params: &FoParams, value: usize, rng: &mut SimRng) -> Result<FoReport> {
    if value >= params.d {
        return Err(Error::Domain(format!("value {value} outside domain of size {}", params.d)));
    }
    match params.kind {
        FoKind::Krr => {
            let keep: bool = rng.random_bool(params.p);
            if keep {
                Ok(FoReport::Item(value))
            } else {
                let r = rng.random_range(0..params.d - 1);
                Ok(FoReport::Item(if r < value { r } else { r + 1 }))
            }
        }
        FoKind::Oue => {
            let bits = (0..params.d)
                .map(|k| rng.random_bool(if k == value { params.p } else { params.q }))
                .collect();
            Ok(FoReport::Bits(bits))
        }
        FoKind::Ada => unreachable!("fo_params never yields Ada"),
    }
}

fn binom(rng: &mut SimRng, n: u64, p: f64) -> u64 {
    if n == 0 || p <= 0.0 {
        0
    } else if p >= 1.0 {
        n
    } else {
        Binomial::new(n, p).expect("valid binomial").sample(rng)
    }
}

/// Batch path: support counts of the perturbed reports of a population whose
/// true items have the given counts. Distribution-identical to perturbing
/// every user with `fo_perturb` and summing supports.
pub fn perturb_counts(params: &FoParams, true_counts: &[u64], rng: &mut SimRng) -> Result<Vec<u64>> {
    if true_counts.len() != params.d {
        return Err(Error::DimensionMismatch { left: true_counts.len(), right: params.d });
    }
    let d = params.d;
    let mut support = vec![0u64; d];
    match params.kind {
        FoKind::Krr => {
            let flip_probs = vec![1.0 / (d as f64 - 1.0); d - 1];
            for (j, &c) in true_counts.iter().enumerate() {
                if c == 0 {
                    continue;
                }
                let kept = binom(rng, c, params.p);
                support[j] += kept;
                let moved = multinomial_counts(rng, c - kept, &flip_probs);
                let mut mi = 0;
                for (k, s) in support.iter_mut().enumerate() {
                    if k == j {
                        continue;
                    }
                    *s += moved[mi];
                    mi += 1;
                }
            }
        }
        FoKind::Oue => {
            let n: u64 = true_counts.iter().sum();
            for (k, s) in support.iter_mut().enumerate() {
                let c = true_counts[k];
                *s = binom(rng, c, params.p) + binom(rng, n - c, params.q);
            }
        }
        FoKind::Ada => unreachable!(),
    }
    Ok(support)
}

/// Debiased frequency estimate from support counts over `n` reports.
/// Intentionally not clipped to [0,1] and not renormalized.
pub fn fo_aggregate_counts(params: &FoParams, support: &[f64], n: f64) -> Result<Vec<f64>> {
    if support.len() != params.d {
        return Err(Error::DimensionMismatch { left: support.len(), right: params.d });
    }
    if !(n > 0.0) {
        return Err(Error::EmptyInput("aggregation over zero reports"));
    }
    let denom = params.p - params.q;
    Ok(support.iter().map(|s| (s / n - params.q) / denom).collect())
}

/// Aggregate a set of reports; `n` is the population size the aggregator
/// believes it has (genuine plus fake).
pub fn fo_aggregate(params: &FoParams, reports: &ReportSet, n: f64) -> Result<Vec<f64>> {
    let support: Vec<f64> = reports.support_counts().iter().map(|&c| c as f64).collect();
    fo_aggregate_counts(params, &support, n)
}

/// Dense bit matrix for OUE report collections.
#[derive(Debug, Clone, Default)]
pub struct BitRows {
    d: usize,
    words_per_row: usize,
    rows: usize,
    data: Vec<u64>,
}

impl BitRows {
    pub fn new(d: usize) -> Self {
        BitRows { d, words_per_row: d.div_ceil(64), rows: 0, data: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Append a row given the set bit positions.
    pub fn push_set_bits(&mut self, set: impl IntoIterator<Item = usize>) {
        let base = self.data.len();
        self.data.resize(base + self.words_per_row, 0);
        for k in set {
            debug_assert!(k < self.d);
            self.data[base + k / 64] |= 1u64 << (k % 64);
        }
        self.rows += 1;
    }

    pub fn get(&self, row: usize, k: usize) -> bool {
        let w = self.data[row * self.words_per_row + k / 64];
        (w >> (k % 64)) & 1 == 1
    }

    fn add_row_to(&self, row: usize, support: &mut [u64]) {
        let base = row * self.words_per_row;
        for (wi, &word) in self.data[base..base + self.words_per_row].iter().enumerate() {
            let mut bits = word;
            while bits != 0 {
                let b = bits.trailing_zeros() as usize;
                support[wi * 64 + b] += 1;
                bits &= bits - 1;
            }
        }
    }
}

/// A collection of reports from one oracle invocation.
#[derive(Debug, Clone)]
pub enum ReportSet {
    Krr { d: usize, items: Vec<u32> },
    Oue(BitRows),
}

impl ReportSet {
    pub fn new(params: &FoParams) -> Self {
        match params.kind {
            FoKind::Krr => ReportSet::Krr { d: params.d, items: Vec::new() },
            FoKind::Oue => ReportSet::Oue(BitRows::new(params.d)),
            FoKind::Ada => unreachable!(),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            ReportSet::Krr { items, .. } => items.len(),
            ReportSet::Oue(rows) => rows.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn d(&self) -> usize {
        match self {
            ReportSet::Krr { d, .. } => *d,
            ReportSet::Oue(rows) => rows.d(),
        }
    }

    pub fn push(&mut self, report: FoReport) {
        match (self, report) {
            (ReportSet::Krr { items, .. }, FoReport::Item(v)) => items.push(v as u32),
            (ReportSet::Oue(rows), FoReport::Bits(bits)) => {
                rows.push_set_bits(bits.iter().enumerate().filter(|(_, b)| **b).map(|(k, _)| k));
            }
            _ => panic!("report kind does not match report set"),
        }
    }

    /// Total support per item over all reports.
    pub fn support_counts(&self) -> Vec<u64> {
        match self {
            ReportSet::Krr { d, items } => {
                let mut support = vec![0u64; *d];
                for &v in items {
                    support[v as usize] += 1;
                }
                support
            }
            ReportSet::Oue(rows) => {
                let mut support = vec![0u64; rows.d()];
                for r in 0..rows.len() {
                    rows.add_row_to(r, &mut support);
                }
                support
            }
        }
    }

    /// Support counts over a subset of report rows.
    pub fn support_of_rows(&self, picked: &[usize]) -> Vec<u64> {
        match self {
            ReportSet::Krr { d, items } => {
                let mut support = vec![0u64; *d];
                for &r in picked {
                    support[items[r] as usize] += 1;
                }
                support
            }
            ReportSet::Oue(rows) => {
                let mut support = vec![0u64; rows.d()];
                for &r in picked {
                    rows.add_row_to(r, &mut support);
                }
                support
            }
        }
    }

    /// Append all reports of `other` (same kind and d required).
    pub fn extend_from(&mut self, other: &ReportSet) {
        match (self, other) {
            (ReportSet::Krr { d, items }, ReportSet::Krr { d: od, items: oi }) => {
                assert_eq!(d, od);
                items.extend_from_slice(oi);
            }
            (ReportSet::Oue(rows), ReportSet::Oue(other_rows)) => {
                assert_eq!(rows.d(), other_rows.d());
                for r in 0..other_rows.len() {
                    rows.push_set_bits((0..other_rows.d()).filter(|&k| other_rows.get(r, k)));
                }
            }
            _ => panic!("cannot extend a report set with a different kind"),
        }
    }
}
