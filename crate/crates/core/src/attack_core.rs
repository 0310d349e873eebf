//! Fake-report crafting primitives for a single attacked collection.
//!
//! Four building blocks: publication manipulation steers the released
//! estimate toward a target distribution (input variant poisons the fake
//! users' raw values, output variant injects crafted post-perturbation
//! reports); dissimilarity manipulation pushes the protocol's strategy
//! choice toward publication (maximize) or approximation (minimize).
//! Alongside the solvers live the expected-gap formulas the attacker plans
//! with, the sufficient fake-user counts that make a target exactly
//! reachable in expectation, and the comparator the attacker uses to pick
//! its per-step strategy.

use crate::error::{Error, Result};
use crate::freq_oracle::{fo_perturb, fo_variance, perturb_counts, FoKind, FoParams, FoReport, ReportSet};
use crate::rng::SimRng;
use crate::stream_protocols::Strategy;
use crate::util::{argmax_tie_lowest, argmin_tie_lowest, largest_remainder};

/// What the attacker believes about the genuine population.
#[derive(Debug, Clone)]
pub struct Knowledge {
    /// Estimated number of genuine users.
    pub n_e: f64,
    /// Estimated genuine frequency vector. Under man-in-the-middle
    /// estimation this can leave the simplex; solvers tolerate that.
    pub f_e: Vec<f64>,
}

impl Knowledge {
    pub fn new(n_e: f64, f_e: Vec<f64>) -> Result<Self> {
        if !(n_e > 0.0) || !n_e.is_finite() {
            return Err(Error::config(format!("estimated population must be positive, got {n_e}")));
        }
        if f_e.len() < 2 || f_e.iter().any(|x| !x.is_finite()) {
            return Err(Error::config("estimated frequencies must be finite with d >= 2"));
        }
        Ok(Knowledge { n_e, f_e })
    }

    pub fn d(&self) -> usize {
        self.f_e.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Minimize,
    Maximize,
}

/// How the fake counts are to be realized as reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoisonMode {
    /// counts[k] fake users hold item k and perturb honestly.
    Input,
    /// counts[k] fake reports claim item k verbatim.
    OutputKrr,
    /// Fake bit-vector reports with column sums equal to counts.
    OutputOue,
}

/// A solved per-item assignment of the m fake users.
#[derive(Debug, Clone)]
pub struct FakeAllocation {
    pub counts: Vec<u64>,
    pub total: u64,
    pub mode: PoisonMode,
}

impl FakeAllocation {
    fn check(&self) -> Result<()> {
        if self.counts.iter().any(|&c| c > self.total) {
            return Err(Error::config("allocation entry exceeds total fake users"));
        }
        let sum: u64 = self.counts.iter().sum();
        match self.mode {
            PoisonMode::Input | PoisonMode::OutputKrr if sum != self.total => Err(Error::config(
                format!("allocation sums to {sum}, expected {}", self.total),
            )),
            _ => Ok(()),
        }
    }
}

/// Expected squared distance between the released estimate and the target,
/// split into the reachability bias and the estimator's sampling variance.
#[derive(Debug, Clone, Copy)]
pub struct GapEstimate {
    pub bias: f64,
    pub variance: f64,
}

impl GapEstimate {
    pub fn value(&self) -> f64 {
        self.bias + self.variance
    }
}

/// Euclidean projection of `c` onto {x : sum x = total, 0 <= x_k <= cap}.
///
/// The sum constraint shifts every coordinate by a common lambda before
/// clipping; the right lambda is found exactly by sweeping the 2d
/// breakpoints of the piecewise-linear map lambda -> sum clip(c_k + lambda).
pub fn box_simplex_project(c: &[f64], total: f64, cap: f64) -> Vec<f64> {
    let d = c.len();
    if total <= 0.0 || cap <= 0.0 {
        return vec![0.0; d];
    }
    let mut events: Vec<(f64, f64)> = Vec::with_capacity(2 * d);
    for &ck in c {
        events.push((-ck, 1.0));
        events.push((cap - ck, -1.0));
    }
    events.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.total_cmp(&a.1)));
    let mut lam_prev = events[0].0;
    let mut g_prev: f64 = c.iter().map(|&ck| (ck + lam_prev).clamp(0.0, cap)).sum();
    let mut slope = 0.0;
    let mut solution = None;
    for &(lam, delta) in &events {
        if lam > lam_prev {
            let g = g_prev + slope * (lam - lam_prev);
            if g >= total {
                solution = Some(if total > g_prev {
                    lam_prev + (total - g_prev) / slope
                } else {
                    lam_prev
                });
                break;
            }
            g_prev = g;
            lam_prev = lam;
        }
        slope += delta;
    }
    // no crossing before the last event means everything saturates
    let lam = solution.unwrap_or(events[events.len() - 1].0);
    c.iter().map(|&ck| (ck + lam).clamp(0.0, cap)).collect()
}

/// The unconstrained per-item fake counts that would place the expected
/// raw mixture exactly on the target.
fn input_target_counts(knowledge: &Knowledge, target: &[f64], m: u64) -> Vec<f64> {
    let scale = m as f64 + knowledge.n_e;
    target
        .iter()
        .zip(&knowledge.f_e)
        .map(|(&t, &fe)| scale * t - knowledge.n_e * fe)
        .collect()
}

/// Continuous input-side publication-attack solution: minimizes the mean
/// squared distance between the expected raw mixture and the target over
/// the feasible allocations.
pub fn ipma_continuous(knowledge: &Knowledge, target: &[f64], m: u64) -> Result<Vec<f64>> {
    if target.len() != knowledge.d() {
        return Err(Error::DimensionMismatch { left: target.len(), right: knowledge.d() });
    }
    let c = input_target_counts(knowledge, target, m);
    Ok(box_simplex_project(&c, m as f64, m as f64))
}

/// Input-side publication attack: assign the m fake users' raw values so
/// the expected post-aggregation estimate lands as close to the target as
/// possible. Exact continuous projection, then largest-remainder rounding.
pub fn ipma_solve(knowledge: &Knowledge, target: &[f64], m: u64) -> Result<FakeAllocation> {
    let x = ipma_continuous(knowledge, target, m)?;
    let counts = largest_remainder(&x, m, m);
    let alloc = FakeAllocation { counts, total: m, mode: PoisonMode::Input };
    alloc.check()?;
    Ok(alloc)
}

/// Mean squared distance between the expected raw mixture under an
/// allocation and a target (the quantity `ipma_solve` minimizes; also the
/// bias term of the input gap).
pub fn input_mixture_objective(counts: &[f64], n: f64, f: &[f64], target: &[f64], m: u64) -> f64 {
    let total = n + m as f64;
    let d = target.len() as f64;
    counts
        .iter()
        .zip(f)
        .zip(target)
        .map(|((&mk, &fk), &tk)| {
            let reached = (mk + n * fk) / total;
            (reached - tk) * (reached - tk)
        })
        .sum::<f64>()
        / d
}

/// Expected manipulation gap of an input publication attack: reachability
/// bias plus the attacked estimator's variance at population n + m.
pub fn ipma_gap(
    alloc: &FakeAllocation,
    n: f64,
    f: &[f64],
    target: &[f64],
    fo_kind: FoKind,
    epsilon: f64,
) -> GapEstimate {
    let counts: Vec<f64> = alloc.counts.iter().map(|&c| c as f64).collect();
    let bias = input_mixture_objective(&counts, n, f, target, alloc.total);
    let variance = fo_variance(fo_kind, n + alloc.total as f64, epsilon, target.len());
    GapEstimate { bias, variance }
}

/// Fake users needed to make the target exactly reachable by input
/// poisoning under exact knowledge. None marks an unreachable target (a
/// zero-probability target item that genuine users still hold, or a
/// probability-one target item they do not all hold).
pub fn ipma_sufficient_m(n: f64, f: &[f64], target: &[f64]) -> Option<u64> {
    let mut need: f64 = 0.0;
    for (&fk, &tk) in f.iter().zip(target) {
        if tk <= 0.0 {
            if fk > 0.0 {
                return None;
            }
            continue;
        }
        if tk >= 1.0 && fk < 1.0 {
            return None;
        }
        let grow = n * fk / tk - n;
        let shrink = if tk < 1.0 { (n * tk - n * fk) / (1.0 - tk) } else { 0.0 };
        need = need.max(grow).max(shrink);
    }
    Some(need.max(0.0).ceil() as u64)
}

/// The unconstrained per-item fake support counts that would place the
/// expected released estimate exactly on the target.
fn output_target_counts(knowledge: &Knowledge, target: &[f64], m: u64, fo: &FoParams) -> Vec<f64> {
    let pq = fo.p - fo.q;
    let scale = m as f64 + knowledge.n_e;
    target
        .iter()
        .zip(&knowledge.f_e)
        .map(|(&t, &fe)| pq * (scale * t - knowledge.n_e * fe) + m as f64 * fo.q)
        .collect()
}

/// Continuous output-side publication-attack solution: minimizes the L1
/// distance between the fake support counts and their unconstrained ideal
/// (the linear-program form of the output attack), subject to the box and,
/// for kRR, the sum-to-m constraint.
pub fn opma_continuous(
    knowledge: &Knowledge,
    target: &[f64],
    m: u64,
    fo: &FoParams,
) -> Result<Vec<f64>> {
    if target.len() != knowledge.d() {
        return Err(Error::DimensionMismatch { left: target.len(), right: knowledge.d() });
    }
    let ideal = output_target_counts(knowledge, target, m, fo);
    let cap = m as f64;
    let mut x: Vec<f64> = ideal.iter().map(|&v| v.clamp(0.0, cap)).collect();
    if fo.kind == FoKind::Krr {
        // Repair the sum constraint. Every unit of added or removed mass
        // moves some coordinate away from its clipped ideal at cost slope
        // exactly 1 (post-clipping, deviations only exist at saturated
        // coordinates), so any greedy redistribution is optimal; lowest
        // index first keeps it deterministic.
        let mut excess = x.iter().sum::<f64>() - cap;
        let mut k = 0;
        while excess > 1e-12 && k < x.len() {
            let take = excess.min(x[k]);
            x[k] -= take;
            excess -= take;
            k += 1;
        }
        let mut deficit = -excess;
        let mut k = 0;
        while deficit > 1e-12 && k < x.len() {
            let add = deficit.min(cap - x[k]);
            x[k] += add;
            deficit -= add;
            k += 1;
        }
    }
    Ok(x)
}

/// L1 distance between an allocation and the unconstrained ideal support
/// counts (the quantity `opma_solve` minimizes).
pub fn output_l1_objective(
    counts: &[f64],
    knowledge: &Knowledge,
    target: &[f64],
    m: u64,
    fo: &FoParams,
) -> f64 {
    let ideal = output_target_counts(knowledge, target, m, fo);
    counts.iter().zip(&ideal).map(|(&x, &c)| (x - c).abs()).sum()
}

/// Output-side publication attack: choose fake support counts so the
/// expected released estimate lands as close to the target as possible.
pub fn opma_solve(
    knowledge: &Knowledge,
    target: &[f64],
    m: u64,
    fo: &FoParams,
) -> Result<FakeAllocation> {
    let x = opma_continuous(knowledge, target, m, fo)?;
    let (counts, mode) = match fo.kind {
        FoKind::Krr => (largest_remainder(&x, m, m), PoisonMode::OutputKrr),
        FoKind::Oue => {
            // no coupling between items: round each expected count
            (x.iter().map(|&v| v.round().min(m as f64).max(0.0) as u64).collect(), PoisonMode::OutputOue)
        }
        FoKind::Ada => return Err(Error::config("output attack needs a resolved oracle kind")),
    };
    let alloc = FakeAllocation { counts, total: m, mode };
    alloc.check()?;
    Ok(alloc)
}

/// Expected released estimate under an output attack with fake support
/// counts `counts`, genuine population (n, f).
pub fn output_expected_release(counts: &[f64], n: f64, f: &[f64], m: u64, fo: &FoParams) -> Vec<f64> {
    let pq = fo.p - fo.q;
    let total = n + m as f64;
    counts
        .iter()
        .zip(f)
        .map(|(&mk, &fk)| (n * fk * pq + mk - m as f64 * fo.q) / (total * pq))
        .collect()
}

/// Expected manipulation gap of an output publication attack: reachability
/// bias plus the genuine reports' variance shrunk by (n/(m+n))^2 (fake
/// reports are deterministic, so only genuine noise remains).
pub fn opma_gap(
    alloc: &FakeAllocation,
    n: f64,
    f: &[f64],
    target: &[f64],
    fo: &FoParams,
    epsilon: f64,
) -> GapEstimate {
    let counts: Vec<f64> = alloc.counts.iter().map(|&c| c as f64).collect();
    let reached = output_expected_release(&counts, n, f, alloc.total, fo);
    let d = target.len() as f64;
    let bias = reached
        .iter()
        .zip(target)
        .map(|(&r, &t)| (r - t) * (r - t))
        .sum::<f64>()
        / d;
    let shrink = (n / (n + alloc.total as f64)).powi(2);
    let variance = shrink * fo_variance(fo.kind, n, epsilon, target.len());
    GapEstimate { bias, variance }
}

/// Fake users needed to make the target exactly reachable by output
/// poisoning under exact knowledge. Both box faces constrain m: the ideal
/// support count for every item must fit in [0, m].
pub fn opma_sufficient_m(n: f64, f: &[f64], target: &[f64], fo: &FoParams) -> Option<u64> {
    let pq = fo.p - fo.q;
    let mut need: f64 = 0.0;
    for (&fk, &tk) in f.iter().zip(target) {
        let upper_den = (1.0 - fo.q) / pq - tk;
        let lower_den = fo.q / pq + tk;
        if upper_den <= 0.0 || lower_den <= 0.0 {
            return None;
        }
        need = need.max(n * (tk - fk) / upper_den).max(n * (fk - tk) / lower_den);
    }
    Some(need.max(0.0).ceil() as u64)
}

/// Input-side dissimilarity manipulation: spread fake raw values to pull
/// the mixture toward the last release (minimize) or pile them on the item
/// with the largest headroom above it (maximize).
pub fn idma_extreme(
    knowledge: &Knowledge,
    f_last: &[f64],
    m: u64,
    direction: Direction,
) -> Result<FakeAllocation> {
    match direction {
        Direction::Minimize => ipma_solve(knowledge, f_last, m),
        Direction::Maximize => {
            if f_last.len() != knowledge.d() {
                return Err(Error::DimensionMismatch { left: f_last.len(), right: knowledge.d() });
            }
            let scale = m as f64 + knowledge.n_e;
            let b: Vec<f64> = knowledge
                .f_e
                .iter()
                .zip(f_last)
                .map(|(&fe, &prev)| knowledge.n_e * fe / scale - prev)
                .collect();
            let k_star = argmax_tie_lowest(&b);
            let mut counts = vec![0u64; b.len()];
            counts[k_star] = m;
            Ok(FakeAllocation { counts, total: m, mode: PoisonMode::Input })
        }
    }
}

/// Output-side dissimilarity manipulation: craft fake supports toward the
/// last release (minimize) or have every fake report support the least
/// frequent item of the last release (maximize).
pub fn odma_extreme(
    knowledge: &Knowledge,
    f_last: &[f64],
    m: u64,
    direction: Direction,
    fo: &FoParams,
) -> Result<FakeAllocation> {
    match direction {
        Direction::Minimize => opma_solve(knowledge, f_last, m, fo),
        Direction::Maximize => {
            if f_last.len() != knowledge.d() {
                return Err(Error::DimensionMismatch { left: f_last.len(), right: knowledge.d() });
            }
            let k_star = argmin_tie_lowest(f_last);
            let mut counts = vec![0u64; f_last.len()];
            counts[k_star] = m;
            let mode = match fo.kind {
                FoKind::Krr => PoisonMode::OutputKrr,
                FoKind::Oue => PoisonMode::OutputOue,
                FoKind::Ada => return Err(Error::config("output attack needs a resolved oracle kind")),
            };
            Ok(FakeAllocation { counts, total: m, mode })
        }
    }
}

/// The attacker's own strategy comparator: prefer forcing a publication
/// only when the distance still to cover exceeds the expected gap a fresh
/// manipulated publication would leave.
pub fn msd_choose(dis_attack: f64, potential_gap: f64) -> Strategy {
    if dis_attack > potential_gap {
        Strategy::Publication
    } else {
        Strategy::Approximation
    }
}

/// Best-case input gap once the target is exactly reachable: only the
/// estimator variance at the inflated population remains.
pub fn ipma_ideal_gap(fo_kind: FoKind, m: f64, n: f64, epsilon: f64, d: usize) -> f64 {
    fo_variance(fo_kind, n + m, epsilon, d)
}

/// Best-case output gap once the target is exactly reachable: the genuine
/// noise shrunk by the square of the genuine fraction.
pub fn opma_ideal_gap(fo_kind: FoKind, m: f64, n: f64, epsilon: f64, d: usize) -> f64 {
    let shrink = (n / (n + m)).powi(2);
    shrink * fo_variance(fo_kind, n, epsilon, d)
}

/// Restrict a solved allocation for all m fakes to the m_t fakes actually
/// sampled into a collection, keeping the proportions.
pub fn scale_allocation(alloc: &FakeAllocation, m_t: u64) -> FakeAllocation {
    if m_t >= alloc.total {
        return alloc.clone();
    }
    let ratio = m_t as f64 / alloc.total as f64;
    let counts = match alloc.mode {
        PoisonMode::Input | PoisonMode::OutputKrr => {
            let scaled: Vec<f64> = alloc.counts.iter().map(|&c| c as f64 * ratio).collect();
            largest_remainder(&scaled, m_t, m_t)
        }
        // OUE bit counts have no sum constraint, only the per-column cap
        PoisonMode::OutputOue => alloc
            .counts
            .iter()
            .map(|&c| ((c as f64 * ratio).round() as u64).min(m_t))
            .collect(),
    };
    FakeAllocation { counts, total: m_t, mode: alloc.mode }
}

/// Per-item support counts this allocation contributes to a collection,
/// drawing perturbation randomness for input-mode fakes. The fast path for
/// simulations that never materialize individual reports.
pub fn allocation_support_counts(
    alloc: &FakeAllocation,
    fo: &FoParams,
    rng: &mut SimRng,
) -> Result<Vec<u64>> {
    alloc.check()?;
    match alloc.mode {
        PoisonMode::Input => perturb_counts(fo, &alloc.counts, rng),
        PoisonMode::OutputKrr | PoisonMode::OutputOue => Ok(alloc.counts.clone()),
    }
}

/// Materialize the allocation as individual reports (needed when a defense
/// inspects per-report data). Input-mode fakes perturb honestly; output
/// kRR fakes claim their item verbatim; output OUE fakes get bit patterns
/// whose column sums match the allocation exactly, staggered across rows
/// so no single report carries every bit.
pub fn allocation_to_reports(
    alloc: &FakeAllocation,
    fo: &FoParams,
    rng: &mut SimRng,
) -> Result<ReportSet> {
    alloc.check()?;
    let mut out = ReportSet::new(fo);
    match alloc.mode {
        PoisonMode::Input => {
            for (k, &count) in alloc.counts.iter().enumerate() {
                for _ in 0..count {
                    out.push(fo_perturb(fo, k, rng)?);
                }
            }
        }
        PoisonMode::OutputKrr => {
            if fo.kind != FoKind::Krr {
                return Err(Error::config("kRR-mode allocation against a non-kRR oracle"));
            }
            for (k, &count) in alloc.counts.iter().enumerate() {
                for _ in 0..count {
                    out.push(FoReport::Item(k));
                }
            }
        }
        PoisonMode::OutputOue => {
            if fo.kind != FoKind::Oue {
                return Err(Error::config("OUE-mode allocation against a non-OUE oracle"));
            }
            let m = alloc.total as usize;
            let mut rows = vec![Vec::new(); m];
            let mut offset = 0usize;
            for (k, &count) in alloc.counts.iter().enumerate() {
                for i in 0..count as usize {
                    rows[(offset + i) % m.max(1)].push(k);
                }
                offset += count as usize;
            }
            for row in rows {
                let mut bits = vec![false; fo.d];
                for k in row {
                    bits[k] = true;
                }
                out.push(FoReport::Bits(bits));
            }
        }
    }
    Ok(out)
}
