//! Streaming release protocols over sliding windows of w timestamps.
//!
//! Seven kinds share one step loop with up to three phases: private
//! dissimilarity estimation, strategy choice, and publication. Budget-division
//! kinds (LBD, LBA, LBU, LSP) split the privacy budget across the window and
//! collect from every user; population-division kinds (LPD, LPA, LPU) spend
//! the full budget on disjoint user samples. The adaptive kinds (LBD, LBA,
//! LPD, LPA) compare the dissimilarity estimate against the potential
//! publication error and re-release the previous estimate whenever a fresh
//! one would be noisier.
//!
//! Reports enter through the [`ReportSource`] seam. The protocol never
//! learns which reports are genuine; a source backed by an attacker simply
//! mixes fake reports into whatever it returns.
//!
//! Allocation arithmetic lives in the pure functions
//! [`dissimilarity_allocation`] and [`publication_candidate`] so that other
//! components (an attacker estimating the next publication budget from
//! observed history, tests) can reproduce the protocol's numbers exactly.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::freq_oracle::{fo_aggregate_counts, fo_params, fo_variance, FoKind, FoParams, ReportSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ProtocolKind {
    /// Budget division, exponential-decay allocation of the publication half.
    Lbd,
    /// Budget division, uniform per-slot allocation with absorption.
    Lba,
    /// Population division, exponential-decay allocation.
    Lpd,
    /// Population division, uniform allocation with absorption.
    Lpa,
    /// Budget uniform baseline: publish every step with eps/w.
    Lbu,
    /// Population uniform baseline: publish every step with n/w users.
    Lpu,
    /// Sampling baseline: one full-budget publication per window.
    Lsp,
}

impl ProtocolKind {
    pub const ALL: [ProtocolKind; 7] = [
        ProtocolKind::Lbd,
        ProtocolKind::Lba,
        ProtocolKind::Lpd,
        ProtocolKind::Lpa,
        ProtocolKind::Lbu,
        ProtocolKind::Lpu,
        ProtocolKind::Lsp,
    ];

    pub fn is_budget_division(self) -> bool {
        matches!(self, ProtocolKind::Lbd | ProtocolKind::Lba | ProtocolKind::Lbu | ProtocolKind::Lsp)
    }

    /// Kinds that run the dissimilarity/strategy phases each step.
    pub fn is_adaptive(self) -> bool {
        matches!(self, ProtocolKind::Lbd | ProtocolKind::Lba | ProtocolKind::Lpd | ProtocolKind::Lpa)
    }

    pub fn label(self) -> &'static str {
        match self {
            ProtocolKind::Lbd => "lbd",
            ProtocolKind::Lba => "lba",
            ProtocolKind::Lpd => "lpd",
            ProtocolKind::Lpa => "lpa",
            ProtocolKind::Lbu => "lbu",
            ProtocolKind::Lpu => "lpu",
            ProtocolKind::Lsp => "lsp",
        }
    }
}

impl std::str::FromStr for ProtocolKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lbd" => Ok(ProtocolKind::Lbd),
            "lba" => Ok(ProtocolKind::Lba),
            "lpd" => Ok(ProtocolKind::Lpd),
            "lpa" => Ok(ProtocolKind::Lpa),
            "lbu" => Ok(ProtocolKind::Lbu),
            "lpu" => Ok(ProtocolKind::Lpu),
            "lsp" => Ok(ProtocolKind::Lsp),
            other => Err(Error::config(format!("unknown protocol kind: {other}"))),
        }
    }
}

/// What a step phase spends: a budget share (all users report) or a user
/// sample (full budget).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Allocation {
    Budget(f64),
    Population(u64),
}

/// Per-step dissimilarity-phase allocation. `None` for kinds without that
/// phase (LBU, LPU, LSP).
pub fn dissimilarity_allocation(
    kind: ProtocolKind,
    epsilon: f64,
    n_total: u64,
    w: usize,
) -> Option<Allocation> {
    match kind {
        ProtocolKind::Lbd | ProtocolKind::Lba => {
            Some(Allocation::Budget(epsilon / (2.0 * w as f64)))
        }
        ProtocolKind::Lpd | ProtocolKind::Lpa => {
            Some(Allocation::Population((n_total / (2 * w as u64)).max(1)))
        }
        _ => None,
    }
}

/// The publication budget or population the protocol would spend if it
/// published now, given the publication spends of the last `min(t, w-1)`
/// steps (`window`, oldest first, 0.0 marking approximation steps).
///
/// Decay kinds halve what remains of the publication half; absorption kinds
/// add the unit allocations of approximation slots since the last in-window
/// publication, capped so the window's publication total stays within its
/// half. A `Population(0)` result means publication is infeasible this step.
pub fn publication_candidate(
    kind: ProtocolKind,
    epsilon: f64,
    n_total: u64,
    w: usize,
    window: &[f64],
) -> Allocation {
    let spent: f64 = window.iter().sum();
    // approximation slots since the last in-window publication
    let absorbable = window.iter().rev().take_while(|&&x| x == 0.0).count() as f64;
    match kind {
        ProtocolKind::Lbd => Allocation::Budget((epsilon / 2.0 - spent) / 2.0),
        ProtocolKind::Lba => {
            let unit = epsilon / (2.0 * w as f64);
            let cap = (epsilon / 2.0 - spent).max(0.0);
            Allocation::Budget((unit * (1.0 + absorbable)).min(cap))
        }
        ProtocolKind::Lpd => {
            let cand = ((n_total as f64 / 2.0 - spent) / 2.0).floor();
            Allocation::Population(if cand >= 1.0 { cand as u64 } else { 0 })
        }
        ProtocolKind::Lpa => {
            let unit = (n_total / (2 * w as u64)) as f64;
            let cap = ((n_total as f64 / 2.0).floor() - spent).max(0.0);
            let cand = (unit * (1.0 + absorbable)).min(cap).floor();
            Allocation::Population(if cand >= 1.0 { cand as u64 } else { 0 })
        }
        ProtocolKind::Lbu => Allocation::Budget(epsilon / w as f64),
        ProtocolKind::Lpu => Allocation::Population((n_total / w as u64).max(1)),
        ProtocolKind::Lsp => Allocation::Budget(epsilon),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Dissimilarity,
    Publication,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PopulationSpec {
    /// Every user reports (budget division).
    All,
    /// A fresh sample of this many users, disjoint from any sample still
    /// inside the window (population division).
    Sample(u64),
}

/// One collection request issued by the protocol to its report source.
#[derive(Debug, Clone)]
pub struct CollectRequest {
    pub t: usize,
    pub phase: Phase,
    /// Resolved oracle parameters the reporting users must apply. Fake users
    /// controlled by an attacker see these too.
    pub fo: FoParams,
    pub population: PopulationSpec,
    /// Ask for the individual reports in addition to the support counts
    /// (needed by the subsampling defense).
    pub want_raw: bool,
}

/// What came back from one collection.
#[derive(Debug, Clone)]
pub struct Collected {
    /// Per-item support counts over all collected reports.
    pub support: Vec<f64>,
    pub n_reports: u64,
    /// How many of the reports were fake (diagnostics only; the protocol
    /// itself never reads this).
    pub n_fake: u64,
    pub raw: Option<ReportSet>,
}

/// The seam through which reports reach the protocol. Implementations own
/// the user population (genuine and fake alike) and, for population
/// division, the per-user participation bookkeeping.
pub trait ReportSource {
    /// Population size as visible to the protocol (genuine + fake).
    fn total_population(&self) -> u64;

    /// Users still eligible to be sampled at t (population division). The
    /// default suits budget division, where everyone reports every step.
    fn eligible(&self, _t: usize) -> u64 {
        self.total_population()
    }

    fn collect(&mut self, req: &CollectRequest) -> Result<Collected>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Strategy {
    Publication,
    Approximation,
}

impl Strategy {
    pub fn label(self) -> &'static str {
        match self {
            Strategy::Publication => "publication",
            Strategy::Approximation => "approximation",
        }
    }
}

#[derive(Debug, Clone)]
pub struct PhaseRecord {
    /// Budget each collected report was perturbed with.
    pub epsilon: f64,
    pub reports: u64,
    pub fake_reports: u64,
    pub raw: Option<ReportSet>,
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub t: usize,
    pub strategy: Strategy,
    pub release: Vec<f64>,
    /// Private dissimilarity estimate; None at t=0 and for kinds without a
    /// dissimilarity phase.
    pub dis_bar: Option<f64>,
    /// Potential publication error compared against dis_bar; +inf when the
    /// window is exhausted, None for kinds that never compare.
    pub err: Option<f64>,
    /// Budget charged against the window at this step (budget division).
    pub budget_spent: f64,
    /// Users consumed at this step (population division).
    pub population_spent: u64,
    /// The publication budget actually spent, if this step published with
    /// budget division.
    pub publication_budget: Option<f64>,
    /// The publication sample size actually used, if this step published
    /// with population division.
    pub publication_population: Option<u64>,
    pub phase1: Option<PhaseRecord>,
    pub phase3: Option<PhaseRecord>,
}

/// Driver state for one protocol over one stream.
#[derive(Debug, Clone)]
pub struct ProtocolState {
    pub kind: ProtocolKind,
    pub fo_kind: FoKind,
    pub epsilon: f64,
    pub w: usize,
    pub d: usize,
    t: usize,
    last_release: Option<Vec<f64>>,
    /// Publication spends of the last w-1 steps, oldest first; 0 marks an
    /// approximation step. Grows to length w-1 over the first steps.
    window: VecDeque<f64>,
}

impl ProtocolState {
    pub fn new(kind: ProtocolKind, fo_kind: FoKind, epsilon: f64, w: usize, d: usize) -> Result<Self> {
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(Error::config(format!("epsilon must be positive, got {epsilon}")));
        }
        if w == 0 {
            return Err(Error::config("window size must be at least 1"));
        }
        if d < 2 {
            return Err(Error::config("domain size must be at least 2"));
        }
        Ok(ProtocolState {
            kind,
            fo_kind,
            epsilon,
            w,
            d,
            t: 0,
            last_release: None,
            window: VecDeque::new(),
        })
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn last_release(&self) -> Option<&[f64]> {
        self.last_release.as_deref()
    }

    /// Publication spends of the last min(t, w-1) steps, oldest first.
    pub fn window_spends(&self) -> Vec<f64> {
        self.window.iter().copied().collect()
    }

    /// Replace the latest release (a defense layer that post-processes the
    /// publication must push its substitute back so the next step's
    /// dissimilarity compares against what was actually published).
    pub fn override_release(&mut self, release: Vec<f64>) -> Result<()> {
        if release.len() != self.d {
            return Err(Error::DimensionMismatch { left: release.len(), right: self.d });
        }
        self.last_release = Some(release);
        Ok(())
    }

    /// Run one timestamp: collect, choose a strategy, release.
    pub fn step(&mut self, source: &mut dyn ReportSource) -> Result<StepOutcome> {
        let t = self.t;
        let n_total = source.total_population();
        let mut budget_spent = 0.0;
        let mut population_spent = 0u64;

        // Phase 1: private dissimilarity estimate.
        let mut dis_bar = None;
        let mut phase1 = None;
        if self.kind.is_adaptive() {
            let alloc = dissimilarity_allocation(self.kind, self.epsilon, n_total, self.w)
                .expect("adaptive kinds allocate a dissimilarity phase");
            let (fo1, population, var_n) = match alloc {
                Allocation::Budget(e1) => {
                    budget_spent += e1;
                    (fo_params(self.fo_kind, e1, self.d)?, PopulationSpec::All, n_total as f64)
                }
                Allocation::Population(u1) => {
                    population_spent += u1;
                    (fo_params(self.fo_kind, self.epsilon, self.d)?, PopulationSpec::Sample(u1), u1 as f64)
                }
            };
            let col = source.collect(&CollectRequest {
                t,
                phase: Phase::Dissimilarity,
                fo: fo1.clone(),
                population,
                want_raw: false,
            })?;
            let f_bar = fo_aggregate_counts(&fo1, &col.support, col.n_reports as f64)?;
            if let Some(prev) = &self.last_release {
                let var_term = fo_variance(fo1.kind, var_n, fo1.epsilon, self.d);
                dis_bar = Some(dissimilarity(&f_bar, prev, var_term)?);
            }
            phase1 = Some(PhaseRecord {
                epsilon: fo1.epsilon,
                reports: col.n_reports,
                fake_reports: col.n_fake,
                raw: col.raw,
            });
        }

        // Phase 2: strategy choice.
        let window_now = self.window_spends();
        let candidate = publication_candidate(self.kind, self.epsilon, n_total, self.w, &window_now);
        let (feasible, err) = match self.kind {
            ProtocolKind::Lbu | ProtocolKind::Lpu | ProtocolKind::Lsp => (true, None),
            _ => {
                let err = match candidate {
                    Allocation::Budget(e2) if e2 > self.epsilon * 1e-12 => {
                        fo_variance(self.fo_kind, n_total as f64, e2, self.d)
                    }
                    Allocation::Budget(_) => f64::INFINITY,
                    Allocation::Population(u2) if u2 >= 1 && source.eligible(t) >= u2 => {
                        fo_variance(self.fo_kind, u2 as f64, self.epsilon, self.d)
                    }
                    Allocation::Population(_) => f64::INFINITY,
                };
                (err.is_finite(), Some(err))
            }
        };
        let publish = match self.kind {
            ProtocolKind::Lbu | ProtocolKind::Lpu => true,
            ProtocolKind::Lsp => t % self.w == 0,
            _ => {
                feasible
                    && match dis_bar {
                        // first step: nothing to approximate from
                        None => true,
                        Some(dis) => dis > err.unwrap_or(f64::INFINITY),
                    }
            }
        };

        // Phase 3: publish or re-release.
        let mut publication_budget = None;
        let mut publication_population = None;
        let mut phase3 = None;
        let (strategy, release) = if publish {
            let (fo2, population, agg_n, spend) = match candidate {
                Allocation::Budget(e2) => {
                    budget_spent += e2;
                    publication_budget = Some(e2);
                    (fo_params(self.fo_kind, e2, self.d)?, PopulationSpec::All, n_total as f64, e2)
                }
                Allocation::Population(u2) => {
                    population_spent += u2;
                    publication_population = Some(u2);
                    (
                        fo_params(self.fo_kind, self.epsilon, self.d)?,
                        PopulationSpec::Sample(u2),
                        u2 as f64,
                        u2 as f64,
                    )
                }
            };
            let col = source.collect(&CollectRequest {
                t,
                phase: Phase::Publication,
                fo: fo2.clone(),
                population,
                want_raw: true,
            })?;
            let release = fo_aggregate_counts(&fo2, &col.support, agg_n)?;
            phase3 = Some(PhaseRecord {
                epsilon: fo2.epsilon,
                reports: col.n_reports,
                fake_reports: col.n_fake,
                raw: col.raw,
            });
            self.push_window(spend);
            (Strategy::Publication, release)
        } else {
            self.push_window(0.0);
            let release = match &self.last_release {
                Some(prev) => prev.clone(),
                // first step infeasible (degenerate tiny population):
                // release the uninformative uniform prior
                None => vec![1.0 / self.d as f64; self.d],
            };
            (Strategy::Approximation, release)
        };

        self.last_release = Some(release.clone());
        self.t += 1;
        Ok(StepOutcome {
            t,
            strategy,
            release,
            dis_bar,
            err,
            budget_spent,
            population_spent,
            publication_budget,
            publication_population,
            phase1,
            phase3,
        })
    }

    fn push_window(&mut self, spend: f64) {
        if self.w > 1 {
            self.window.push_back(spend);
            if self.window.len() > self.w - 1 {
                self.window.pop_front();
            }
        }
    }
}

/// Private dissimilarity between a fresh estimate and the previous release:
/// mean squared coordinate distance, debiased by the estimate's sampling
/// variance. Deliberately not clamped at zero; callers compare the raw value.
pub fn dissimilarity(f_bar: &[f64], f_last: &[f64], var_term: f64) -> Result<f64> {
    if f_bar.len() != f_last.len() {
        return Err(Error::DimensionMismatch { left: f_bar.len(), right: f_last.len() });
    }
    if f_bar.is_empty() {
        return Err(Error::EmptyInput("dissimilarity over empty vectors"));
    }
    let d = f_bar.len() as f64;
    let sq: f64 = f_bar.iter().zip(f_last).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(sq / d - var_term)
}

/// Check the sliding-window resource invariant on a finished trace: over
/// every w consecutive steps, budget-division kinds must spend at most
/// epsilon and population-division kinds at most the total population.
pub fn window_budget_audit(
    kind: ProtocolKind,
    epsilon: f64,
    n_total: u64,
    w: usize,
    trace: &[StepOutcome],
) -> bool {
    let width = w.min(trace.len().max(1));
    if trace.is_empty() {
        return true;
    }
    for start in 0..=(trace.len() - width) {
        let steps = &trace[start..start + width];
        if kind.is_budget_division() {
            let total: f64 = steps.iter().map(|s| s.budget_spent).sum();
            if total > epsilon * (1.0 + 1e-9) {
                return false;
            }
        } else {
            let total: u64 = steps.iter().map(|s| s.population_spent).sum();
            if total > n_total {
                return false;
            }
        }
    }
    true
}

/// Write a trace as CSV: one row per step, releases flattened into
/// release_0..release_{d-1}.
pub fn write_trace_csv<W: std::io::Write>(out: W, trace: &[StepOutcome]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let d = trace.first().map(|s| s.release.len()).unwrap_or(0);
    let mut header = vec![
        "t".to_string(),
        "strategy".to_string(),
        "dis_bar".to_string(),
        "err".to_string(),
        "budget_spent".to_string(),
        "population_spent".to_string(),
    ];
    header.extend((0..d).map(|k| format!("release_{k}")));
    w.write_record(&header)?;
    let fmt_opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for s in trace {
        let mut row = vec![
            s.t.to_string(),
            s.strategy.label().to_string(),
            fmt_opt(s.dis_bar),
            fmt_opt(s.err),
            s.budget_spent.to_string(),
            s.population_spent.to_string(),
        ];
        row.extend(s.release.iter().map(|x| x.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
