//! Synthetic user streams, attack-target streams, and CSV ingestion.
//!
//! Synthetic streams are binary (d = 2): at each timestamp a fraction p_t of
//! the users holds category 0 and the rest hold category 1, with exactly
//! round(p_t * n) users on category 0. Four drift models for p_t are
//! provided. Target streams are what an attacker steers releases toward.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::distribution::ContinuousCDF;

use crate::error::{Error, Result};
use crate::rng::SimRng;

/// Per-user categorical stream: `n` users observed over `t_len` timestamps.
#[derive(Debug, Clone)]
pub struct CategoricalStream {
    pub d: usize,
    pub n: usize,
    pub t_len: usize,
    /// Row-major (user-major): values[u * t_len + t].
    values: Vec<u16>,
    /// Per-timestamp item counts, precomputed.
    counts: Vec<Vec<u64>>,
}

impl CategoricalStream {
    pub fn from_values(d: usize, n: usize, t_len: usize, values: Vec<u16>) -> Result<Self> {
        if values.len() != n * t_len {
            return Err(Error::config(format!(
                "value matrix has {} entries, expected {}",
                values.len(),
                n * t_len
            )));
        }
        if d < 2 || d > u16::MAX as usize {
            return Err(Error::config(format!("domain size {d} unsupported")));
        }
        let mut counts = vec![vec![0u64; d]; t_len];
        for u in 0..n {
            for t in 0..t_len {
                let v = values[u * t_len + t] as usize;
                if v >= d {
                    return Err(Error::Ingest(format!("user {u} holds item {v} >= d={d} at t={t}")));
                }
                counts[t][v] += 1;
            }
        }
        Ok(CategoricalStream { d, n, t_len, values, counts })
    }

    pub fn item(&self, user: usize, t: usize) -> usize {
        self.values[user * self.t_len + t] as usize
    }

    /// True item counts at timestamp t.
    pub fn column_counts(&self, t: usize) -> &[u64] {
        &self.counts[t]
    }

    /// True frequency vector at timestamp t.
    pub fn frequencies(&self, t: usize) -> Vec<f64> {
        self.counts[t].iter().map(|&c| c as f64 / self.n as f64).collect()
    }

    /// Item counts at t over a fixed subset of users.
    pub fn subset_counts(&self, users: &[u32], t: usize) -> Vec<u64> {
        let mut counts = vec![0u64; self.d];
        for &u in users {
            counts[self.item(u as usize, t)] += 1;
        }
        counts
    }
}

/// Drift models for the synthetic binary streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SyntheticModel {
    /// Random walk: p_t = clamp(p_{t-1} + N(0, 0.025^2)), p_0 = 0.5.
    LinearNoise,
    /// p_t = 0.05 sin(0.01 t) + 0.5.
    Sine,
    /// p_t = 0.75 / (1 + e^(-0.01 t)).
    Logistic,
    /// p_t drawn uniformly from {0, 1}.
    Pulse,
}

impl std::str::FromStr for SyntheticModel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lns" | "linear_noise" => Ok(SyntheticModel::LinearNoise),
            "sin" | "sine" => Ok(SyntheticModel::Sine),
            "log" | "logistic" => Ok(SyntheticModel::Logistic),
            "pulse" => Ok(SyntheticModel::Pulse),
            other => Err(Error::config(format!("unknown synthetic model: {other}"))),
        }
    }
}

impl SyntheticModel {
    pub fn label(self) -> &'static str {
        match self {
            SyntheticModel::LinearNoise => "lns",
            SyntheticModel::Sine => "sin",
            SyntheticModel::Logistic => "log",
            SyntheticModel::Pulse => "pulse",
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub model: SyntheticModel,
    pub n: usize,
    pub t_len: usize,
}

/// The fraction-of-category-0 trajectory for a model.
pub fn model_fractions(model: SyntheticModel, t_len: usize, rng: &mut SimRng) -> Vec<f64> {
    let mut p = Vec::with_capacity(t_len);
    match model {
        SyntheticModel::LinearNoise => {
            let noise = Normal::new(0.0, 0.025).expect("valid normal");
            let mut cur: f64 = 0.5;
            for t in 0..t_len {
                if t > 0 {
                    cur = (cur + noise.sample(rng)).clamp(0.0, 1.0);
                }
                p.push(cur);
            }
        }
        SyntheticModel::Sine => {
            for t in 0..t_len {
                p.push(0.05 * (0.01 * t as f64).sin() + 0.5);
            }
        }
        SyntheticModel::Logistic => {
            for t in 0..t_len {
                p.push(0.75 / (1.0 + (-0.01 * t as f64).exp()));
            }
        }
        SyntheticModel::Pulse => {
            for _ in 0..t_len {
                p.push(if rng.random_bool(0.5) { 1.0 } else { 0.0 });
            }
        }
    }
    p
}

/// Generate a binary stream: at each t exactly round(p_t * n) users hold
/// category 0, chosen uniformly at random per timestamp.
pub fn gen_synthetic(cfg: &GeneratorConfig, rng: &mut SimRng) -> Result<CategoricalStream> {
    if cfg.n == 0 || cfg.t_len == 0 {
        return Err(Error::config("stream needs at least one user and one timestamp"));
    }
    let fractions = model_fractions(cfg.model, cfg.t_len, rng);
    let n = cfg.n;
    let t_len = cfg.t_len;
    let mut values = vec![1u16; n * t_len];
    let mut idx: Vec<u32> = (0..n as u32).collect();
    for (t, &p) in fractions.iter().enumerate() {
        let c = (p * n as f64).round() as usize;
        let c = c.min(n);
        for i in 0..c {
            let j = rng.random_range(i..n);
            idx.swap(i, j);
            values[idx[i] as usize * t_len + t] = 0;
        }
    }
    CategoricalStream::from_values(2, n, t_len, values)
}

/// Numeric view over user data for mean estimation, values in [-1, 1].
#[derive(Debug, Clone)]
pub enum NumericStream {
    /// Categorical stream with a per-item value map (memory-friendly).
    Mapped { cat: CategoricalStream, levels: Vec<f64> },
    /// Dense matrix of values (CSV-ingested data).
    Dense { n: usize, t_len: usize, values: Vec<f64> },
}

impl NumericStream {
    pub fn n(&self) -> usize {
        match self {
            NumericStream::Mapped { cat, .. } => cat.n,
            NumericStream::Dense { n, .. } => *n,
        }
    }

    pub fn t_len(&self) -> usize {
        match self {
            NumericStream::Mapped { cat, .. } => cat.t_len,
            NumericStream::Dense { t_len, .. } => *t_len,
        }
    }

    pub fn value(&self, user: usize, t: usize) -> f64 {
        match self {
            NumericStream::Mapped { cat, levels } => levels[cat.item(user, t)],
            NumericStream::Dense { t_len, values, .. } => values[user * t_len + t],
        }
    }

    /// True population mean at t.
    pub fn mean(&self, t: usize) -> f64 {
        match self {
            NumericStream::Mapped { cat, levels } => {
                let counts = cat.column_counts(t);
                let total: f64 =
                    counts.iter().zip(levels).map(|(&c, &v)| c as f64 * v).sum();
                total / cat.n as f64
            }
            NumericStream::Dense { n, t_len, values } => {
                (0..*n).map(|u| values[u * t_len + t]).sum::<f64>() / *n as f64
            }
        }
    }

    /// Sum of squared values at t (used by the mean-attack gap formulas).
    pub fn sum_sq(&self, t: usize) -> f64 {
        match self {
            NumericStream::Mapped { cat, levels } => {
                let counts = cat.column_counts(t);
                counts.iter().zip(levels).map(|(&c, &v)| c as f64 * v * v).sum()
            }
            NumericStream::Dense { n, t_len, values } => {
                (0..*n).map(|u| values[u * t_len + t].powi(2)).sum()
            }
        }
    }
}

/// Binary synthetic stream mapped onto {+1, -1}: category 0 holds +1.
pub fn gen_synthetic_numeric(cfg: &GeneratorConfig, rng: &mut SimRng) -> Result<NumericStream> {
    let cat = gen_synthetic(cfg, rng)?;
    Ok(NumericStream::Mapped { cat, levels: vec![1.0, -1.0] })
}

/// Shapes of the frequency streams an attacker steers releases toward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TargetKind {
    /// 1/d on every item at every t.
    Uniform,
    /// One-hot on item (t mod d).
    Pulse,
    /// A zero-mean Gaussian with variance 0.25 t, discretized over d
    /// equal-width bins spanning [-1.5 sqrt(T), 1.5 sqrt(T)], renormalized.
    Gaussian,
    /// Item 0 carries 2 sigmoid(0.01 t) - 1; the rest is spread uniformly.
    Sigmoid,
}

impl std::str::FromStr for TargetKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "uniform" => Ok(TargetKind::Uniform),
            "pulse" => Ok(TargetKind::Pulse),
            "gaussian" => Ok(TargetKind::Gaussian),
            "sigmoid" => Ok(TargetKind::Sigmoid),
            other => Err(Error::config(format!("unknown target kind: {other}"))),
        }
    }
}

impl TargetKind {
    pub fn label(self) -> &'static str {
        match self {
            TargetKind::Uniform => "uniform",
            TargetKind::Pulse => "pulse",
            TargetKind::Gaussian => "gaussian",
            TargetKind::Sigmoid => "sigmoid",
        }
    }
}

/// Build the target stream: one frequency vector (sums to 1) per timestamp.
pub fn gen_target(kind: TargetKind, d: usize, t_len: usize) -> Result<Vec<Vec<f64>>> {
    if d < 2 || t_len == 0 {
        return Err(Error::config("target stream needs d >= 2 and t_len >= 1"));
    }
    let mut out = Vec::with_capacity(t_len);
    match kind {
        TargetKind::Uniform => {
            for _ in 0..t_len {
                out.push(vec![1.0 / d as f64; d]);
            }
        }
        TargetKind::Pulse => {
            for t in 0..t_len {
                let mut v = vec![0.0; d];
                v[t % d] = 1.0;
                out.push(v);
            }
        }
        TargetKind::Gaussian => {
            let sigma = 0.5;
            let bound = 3.0 * sigma * (t_len as f64).sqrt();
            let width = 2.0 * bound / d as f64;
            let normal = statrs::distribution::Normal::new(0.0, 1.0)
                .map_err(|e| Error::config(e.to_string()))?;
            for t in 0..t_len {
                if t == 0 {
                    // point mass at zero: the bin just right of the origin
                    let mut v = vec![0.0; d];
                    v[d / 2] = 1.0;
                    out.push(v);
                    continue;
                }
                let s = sigma * (t as f64).sqrt();
                let mut v: Vec<f64> = (0..d)
                    .map(|k| {
                        let lo = (-bound + k as f64 * width) / s;
                        let hi = (-bound + (k + 1) as f64 * width) / s;
                        normal.cdf(hi) - normal.cdf(lo)
                    })
                    .collect();
                let total: f64 = v.iter().sum();
                for x in &mut v {
                    *x /= total;
                }
                out.push(v);
            }
        }
        TargetKind::Sigmoid => {
            for t in 0..t_len {
                let lead = 2.0 / (1.0 + (-0.01 * t as f64).exp()) - 1.0;
                let rest = (1.0 - lead) / (d as f64 - 1.0);
                let mut v = vec![rest; d];
                v[0] = lead;
                out.push(v);
            }
        }
    }
    Ok(out)
}

/// Target values for the mean-estimation task, one scalar in [-1, 1] per t.
pub fn gen_mean_target(kind: TargetKind, t_len: usize, constant: f64) -> Result<Vec<f64>> {
    if !(-1.0..=1.0).contains(&constant) {
        return Err(Error::config(format!("constant mean target {constant} outside [-1, 1]")));
    }
    Ok(match kind {
        TargetKind::Uniform => vec![constant; t_len],
        TargetKind::Pulse => (0..t_len).map(|t| if t % 2 == 0 { 1.0 } else { -1.0 }).collect(),
        TargetKind::Gaussian => {
            // deterministic slow oscillation within the domain
            (0..t_len).map(|t| 0.5 * (0.02 * t as f64).sin()).collect()
        }
        TargetKind::Sigmoid => (0..t_len).map(|t| 2.0 / (1.0 + (-0.01 * t as f64).exp()) - 1.0).collect(),
    })
}

/// Options for CSV ingestion.
#[derive(Debug, Clone, Default)]
pub struct IngestOptions {
    /// Optional explicit mapping from raw value strings to category indices.
    /// Without it, distinct values are assigned indices in first-seen order.
    pub category_map: Option<std::collections::HashMap<String, u16>>,
}

/// Read a categorical stream from CSV rows `user_id,timestamp_index,value`.
/// The matrix must be rectangular: every (user, t) pair exactly once.
pub fn ingest_csv(path: &std::path::Path, opts: &IngestOptions) -> Result<CategoricalStream> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(false).from_path(path)?;
    let mut users: std::collections::HashMap<String, usize> = Default::default();
    let mut categories: std::collections::HashMap<String, u16> =
        opts.category_map.clone().unwrap_or_default();
    let fixed_categories = opts.category_map.is_some();
    let mut triples: Vec<(usize, usize, u16)> = Vec::new();
    let mut t_max = 0usize;
    for (line, row) in reader.records().enumerate() {
        let row = row?;
        if row.len() != 3 {
            return Err(Error::Ingest(format!("row {line}: expected 3 columns, got {}", row.len())));
        }
        let uid = row[0].to_string();
        let t: usize = row[1]
            .parse()
            .map_err(|_| Error::Ingest(format!("row {line}: bad timestamp '{}'", &row[1])))?;
        let raw = row[2].to_string();
        let next_user = users.len();
        let u = *users.entry(uid).or_insert(next_user);
        let cat = if fixed_categories {
            *categories
                .get(&raw)
                .ok_or_else(|| Error::Ingest(format!("row {line}: unmapped value '{raw}'")))?
        } else {
            let next = categories.len() as u16;
            *categories.entry(raw).or_insert(next)
        };
        t_max = t_max.max(t);
        triples.push((u, t, cat));
    }
    if triples.is_empty() {
        return Err(Error::EmptyInput("csv contained no data rows"));
    }
    let n = users.len();
    let t_len = t_max + 1;
    let d = categories.len().max(2);
    let mut seen = vec![false; n * t_len];
    let mut values = vec![0u16; n * t_len];
    for (u, t, cat) in triples {
        let i = u * t_len + t;
        if seen[i] {
            return Err(Error::Ingest(format!("duplicate observation for user {u} at t={t}")));
        }
        seen[i] = true;
        values[i] = cat;
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(Error::Ingest(format!(
            "missing observation for user {} at t={}",
            i / t_len,
            i % t_len
        )));
    }
    CategoricalStream::from_values(d, n, t_len, values)
}

/// Read a numeric stream from CSV rows `user_id,timestamp_index,value`,
/// min-max normalized to [-1, 1].
pub fn ingest_numeric_csv(path: &std::path::Path) -> Result<NumericStream> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let mut users: std::collections::HashMap<String, usize> = Default::default();
    let mut triples: Vec<(usize, usize, f64)> = Vec::new();
    let mut t_max = 0usize;
    for (line, row) in reader.records().enumerate() {
        let row = row?;
        if row.len() != 3 {
            return Err(Error::Ingest(format!("row {line}: expected 3 columns, got {}", row.len())));
        }
        let uid = row[0].to_string();
        let t: usize = row[1]
            .parse()
            .map_err(|_| Error::Ingest(format!("row {line}: bad timestamp '{}'", &row[1])))?;
        let v: f64 = row[2]
            .parse()
            .map_err(|_| Error::Ingest(format!("row {line}: bad value '{}'", &row[2])))?;
        let next_user = users.len();
        let u = *users.entry(uid).or_insert(next_user);
        t_max = t_max.max(t);
        triples.push((u, t, v));
    }
    if triples.is_empty() {
        return Err(Error::EmptyInput("csv contained no data rows"));
    }
    let n = users.len();
    let t_len = t_max + 1;
    let lo = triples.iter().map(|t| t.2).fold(f64::INFINITY, f64::min);
    let hi = triples.iter().map(|t| t.2).fold(f64::NEG_INFINITY, f64::max);
    let scale = if hi > lo { 2.0 / (hi - lo) } else { 0.0 };
    let mut seen = vec![false; n * t_len];
    let mut values = vec![0.0f64; n * t_len];
    for (u, t, v) in triples {
        let i = u * t_len + t;
        if seen[i] {
            return Err(Error::Ingest(format!("duplicate observation for user {u} at t={t}")));
        }
        seen[i] = true;
        values[i] = if scale == 0.0 { 0.0 } else { (v - lo) * scale - 1.0 };
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(Error::Ingest(format!(
            "missing observation for user {} at t={}",
            i / t_len,
            i % t_len
        )));
    }
    Ok(NumericStream::Dense { n, t_len, values })
}
