//! Whole-stream attack strategies built on the per-step solvers.
//!
//! Three schedules: the uniform attack forces a manipulated publication at
//! every timestamp, the sampling attack forces one publication per window
//! and suppresses the rest, and the adaptive attack mirrors the protocol's
//! own greedy strategy choice against the attacker's objective. Each comes
//! in an input- and an output-poisoning variant. The module also houses the
//! attacker's knowledge estimation, the closed-form expected-gap tables the
//! experiments are checked against, and the adaptations for mean
//! estimation streams.

use std::collections::VecDeque;
use std::str::FromStr;

use crate::attack_core::{
    idma_extreme, input_mixture_objective, ipma_gap, ipma_solve, msd_choose, odma_extreme,
    opma_gap, opma_solve, output_expected_release, scale_allocation, Direction, FakeAllocation,
    Knowledge,
};
use crate::data_targets::CategoricalStream;
use crate::error::{Error, Result};
use crate::freq_oracle::{
    fo_aggregate_counts, fo_params, fo_variance, perturb_counts, FoKind, FoParams,
};
use crate::mean_mech::MeanMechParams;
use crate::rng::SimRng;
use crate::stream_protocols::{
    dissimilarity_allocation, publication_candidate, Allocation, ProtocolKind, Strategy,
};
use crate::util::{msd, sample_indices};

/// The six stream attacks: input/output poisoning crossed with the
/// uniform, sampling, and adaptive schedules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AttackKind {
    Iua,
    Oua,
    Isa,
    Osa,
    Iaa,
    Oaa,
}

/// When the attacker tries to force publications.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schedule {
    /// Every timestamp.
    Uniform,
    /// First timestamp of each window; suppress the rest.
    Sampling,
    /// Greedy choice per timestamp against the attacker's own objective.
    Adaptive,
}

impl AttackKind {
    pub const ALL: [AttackKind; 6] = [
        AttackKind::Iua,
        AttackKind::Oua,
        AttackKind::Isa,
        AttackKind::Osa,
        AttackKind::Iaa,
        AttackKind::Oaa,
    ];

    /// True for the variants that poison raw inputs; false for the ones
    /// that inject crafted post-perturbation reports.
    pub fn is_input(self) -> bool {
        matches!(self, AttackKind::Iua | AttackKind::Isa | AttackKind::Iaa)
    }

    pub fn schedule(self) -> Schedule {
        match self {
            AttackKind::Iua | AttackKind::Oua => Schedule::Uniform,
            AttackKind::Isa | AttackKind::Osa => Schedule::Sampling,
            AttackKind::Iaa | AttackKind::Oaa => Schedule::Adaptive,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            AttackKind::Iua => "iua",
            AttackKind::Oua => "oua",
            AttackKind::Isa => "isa",
            AttackKind::Osa => "osa",
            AttackKind::Iaa => "iaa",
            AttackKind::Oaa => "oaa",
        }
    }
}

impl FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "iua" => Ok(AttackKind::Iua),
            "oua" => Ok(AttackKind::Oua),
            "isa" => Ok(AttackKind::Isa),
            "osa" => Ok(AttackKind::Osa),
            "iaa" => Ok(AttackKind::Iaa),
            "oaa" => Ok(AttackKind::Oaa),
            other => Err(Error::config(format!("unknown attack kind '{other}'"))),
        }
    }
}

/// How much the attacker can see of the genuine population.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KnowledgeMode {
    /// Exact per-step frequencies.
    Full,
    /// Raw inputs of a fixed random fraction of genuine users.
    Partial(f64),
    /// Only the intercepted perturbed reports of that fraction.
    Mitm(f64),
}

impl KnowledgeMode {
    pub fn label(self) -> String {
        match self {
            KnowledgeMode::Full => "full".to_string(),
            KnowledgeMode::Partial(rho) => format!("partial:{rho}"),
            KnowledgeMode::Mitm(rho) => format!("mitm:{rho}"),
        }
    }
}

impl FromStr for KnowledgeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        if lower == "full" {
            return Ok(KnowledgeMode::Full);
        }
        let parse_rho = |raw: &str| -> Result<f64> {
            raw.parse::<f64>()
                .map_err(|_| Error::config(format!("bad observed fraction '{raw}'")))
        };
        if let Some(raw) = lower.strip_prefix("partial:") {
            return Ok(KnowledgeMode::Partial(parse_rho(raw)?));
        }
        if let Some(raw) = lower.strip_prefix("mitm:") {
            return Ok(KnowledgeMode::Mitm(parse_rho(raw)?));
        }
        Err(Error::config(format!("unknown knowledge mode '{s}'")))
    }
}

/// Produces the attacker's per-step [`Knowledge`]. Partial and MITM modes
/// watch a fixed subset of genuine users chosen once up front; MITM sees
/// only their perturbed reports and recovers frequencies through the
/// oracle's unbiased inverse, so its estimates are noisier and can leave
/// the simplex. Interception is modeled as a statistically identical
/// independent perturbation draw on the attacker's own RNG.
#[derive(Debug, Clone)]
pub struct KnowledgeSource {
    mode: KnowledgeMode,
    n_e: f64,
    subset: Vec<u32>,
    rng: SimRng,
}

impl KnowledgeSource {
    /// `n_offset` is relative: the attacker's population estimate is
    /// n·(1 + n_offset).
    pub fn new(mode: KnowledgeMode, n: u64, n_offset: f64, mut rng: SimRng) -> Result<Self> {
        let n_e = n as f64 * (1.0 + n_offset);
        if !(n_e > 0.0) {
            return Err(Error::config(format!(
                "population estimate offset {n_offset} leaves no genuine users"
            )));
        }
        let subset = match mode {
            KnowledgeMode::Full => Vec::new(),
            KnowledgeMode::Partial(rho) | KnowledgeMode::Mitm(rho) => {
                if !(rho > 0.0 && rho <= 1.0) {
                    return Err(Error::config(format!(
                        "observed fraction must be in (0, 1], got {rho}"
                    )));
                }
                let size = ((rho * n as f64).ceil() as usize).clamp(1, n as usize);
                sample_indices(&mut rng, n as usize, size)
                    .into_iter()
                    .map(|u| u as u32)
                    .collect()
            }
        };
        Ok(KnowledgeSource { mode, n_e, subset, rng })
    }

    pub fn n_e(&self) -> f64 {
        self.n_e
    }

    /// Estimate the genuine frequencies at step t. `intercept_fo` is the
    /// oracle configuration the observed users report under at this step
    /// (only MITM uses it).
    pub fn estimate(
        &mut self,
        stream: &CategoricalStream,
        t: usize,
        intercept_fo: &FoParams,
    ) -> Result<Knowledge> {
        let f_e = match self.mode {
            KnowledgeMode::Full => stream.frequencies(t),
            KnowledgeMode::Partial(_) => {
                let counts = stream.subset_counts(&self.subset, t);
                let size = self.subset.len() as f64;
                counts.iter().map(|&c| c as f64 / size).collect()
            }
            KnowledgeMode::Mitm(_) => {
                let counts = stream.subset_counts(&self.subset, t);
                let support = perturb_counts(intercept_fo, &counts, &mut self.rng)?;
                let support: Vec<f64> = support.iter().map(|&c| c as f64).collect();
                fo_aggregate_counts(intercept_fo, &support, self.subset.len() as f64)?
            }
        };
        Knowledge::new(self.n_e, f_e)
    }
}

/// Static attacker parameters for one run.
#[derive(Debug, Clone)]
pub struct AttackerConfig {
    pub kind: AttackKind,
    /// Fake users under the attacker's control.
    pub m: u64,
    /// The protocol the attack is tuned for. Running it against a
    /// different protocol is exactly the mismatch experiment.
    pub assumed_protocol: ProtocolKind,
    pub fo_kind: FoKind,
    pub epsilon: f64,
    pub w: usize,
}

/// The attacker's decision for one timestamp.
#[derive(Debug, Clone)]
pub struct StepPlan {
    pub t: usize,
    /// The strategy the attacker wants to steer the protocol into.
    pub intended: Strategy,
    pub direction: Direction,
    /// Distance still to cover if the protocol approximates.
    pub dis_attack: f64,
    /// Expected gap of a manipulated publication right now.
    pub potential_gap: f64,
    /// The mirrored candidate allocation the gap was computed from.
    pub candidate: Allocation,
}

/// Streaming attacker: tracks the protocol's publication spends through
/// what its fake users observe, plans one step at a time, and crafts the
/// per-phase fake allocations.
#[derive(Debug, Clone)]
pub struct AttackerState {
    cfg: AttackerConfig,
    /// Observed publication spends (budget or sample size; 0 marks an
    /// approximation), most recent last. Grows from empty to w-1 entries,
    /// mirroring the protocol's own window bookkeeping exactly.
    q_m: VecDeque<f64>,
    knowledge: Option<Knowledge>,
    target: Vec<f64>,
    last_release: Vec<f64>,
    plan: Option<StepPlan>,
}

impl AttackerState {
    pub fn new(cfg: AttackerConfig) -> Result<Self> {
        if cfg.w == 0 {
            return Err(Error::config("window length must be at least 1"));
        }
        if !(cfg.epsilon > 0.0) || !cfg.epsilon.is_finite() {
            return Err(Error::config(format!("epsilon must be positive, got {}", cfg.epsilon)));
        }
        Ok(AttackerState {
            cfg,
            q_m: VecDeque::new(),
            knowledge: None,
            target: Vec::new(),
            last_release: Vec::new(),
            plan: None,
        })
    }

    pub fn config(&self) -> &AttackerConfig {
        &self.cfg
    }

    fn assumed_total(&self) -> u64 {
        let n_e = self.knowledge.as_ref().map_or(0.0, |k| k.n_e);
        (n_e.round() as u64).max(1) + self.cfg.m
    }

    /// The publication allocation the protocol would grant if it published
    /// now, reconstructed from observed history with the protocol's own
    /// arithmetic.
    pub fn mirror_candidate(&self) -> Allocation {
        let window: Vec<f64> = self.q_m.iter().copied().collect();
        publication_candidate(
            self.cfg.assumed_protocol,
            self.cfg.epsilon,
            self.assumed_total(),
            self.cfg.w,
            &window,
        )
    }

    /// Expected gap of a manipulated publication under the candidate
    /// allocation, from the attacker's knowledge. Infinite when the
    /// protocol could not publish at all.
    fn potential_gap(&self, knowledge: &Knowledge, candidate: &Allocation) -> Result<f64> {
        let d = knowledge.d();
        let m = self.cfg.m;
        let n_e = knowledge.n_e;
        Ok(match *candidate {
            Allocation::Budget(e2) => {
                if !(e2 > 0.0) {
                    return Ok(f64::INFINITY);
                }
                if self.cfg.kind.is_input() {
                    let alloc = ipma_solve(knowledge, &self.target, m)?;
                    ipma_gap(&alloc, n_e, &knowledge.f_e, &self.target, self.cfg.fo_kind, e2)
                        .value()
                } else {
                    let fo = fo_params(self.cfg.fo_kind, e2, d)?;
                    let alloc = opma_solve(knowledge, &self.target, m, &fo)?;
                    opma_gap(&alloc, n_e, &knowledge.f_e, &self.target, &fo, e2).value()
                }
            }
            Allocation::Population(u2) => {
                if u2 == 0 {
                    return Ok(f64::INFINITY);
                }
                let eps = self.cfg.epsilon;
                // Proportional sampling keeps the expected mixture on the
                // full-population value, so the bias term carries over
                // unchanged; only the variance sees the smaller sample.
                if self.cfg.kind.is_input() {
                    let alloc = ipma_solve(knowledge, &self.target, m)?;
                    let counts: Vec<f64> = alloc.counts.iter().map(|&c| c as f64).collect();
                    let bias =
                        input_mixture_objective(&counts, n_e, &knowledge.f_e, &self.target, m);
                    bias + fo_variance(self.cfg.fo_kind, u2 as f64, eps, d)
                } else {
                    let fo = fo_params(self.cfg.fo_kind, eps, d)?;
                    let alloc = opma_solve(knowledge, &self.target, m, &fo)?;
                    let counts: Vec<f64> = alloc.counts.iter().map(|&c| c as f64).collect();
                    let reached = output_expected_release(&counts, n_e, &knowledge.f_e, m, &fo);
                    let bias = msd(&reached, &self.target);
                    let n_eff = n_e * u2 as f64 / (m as f64 + n_e);
                    let shrink = (n_e / (m as f64 + n_e)).powi(2);
                    bias + shrink * fo_variance(self.cfg.fo_kind, n_eff, eps, d)
                }
            }
        })
    }

    /// Plan timestamp t: refresh knowledge, decide the intended strategy
    /// per the schedule, and fix the dissimilarity direction.
    pub fn begin_step(
        &mut self,
        t: usize,
        knowledge: Knowledge,
        last_release: &[f64],
        target: &[f64],
    ) -> Result<StepPlan> {
        if last_release.len() != target.len() || target.len() != knowledge.d() {
            return Err(Error::DimensionMismatch {
                left: last_release.len(),
                right: target.len(),
            });
        }
        self.target = target.to_vec();
        self.last_release = last_release.to_vec();
        self.knowledge = Some(knowledge);
        let knowledge = self.knowledge.as_ref().unwrap();

        let candidate = self.mirror_candidate();
        let dis_attack = msd(last_release, target);
        let potential_gap = self.potential_gap(knowledge, &candidate)?;
        let intended = match self.cfg.kind.schedule() {
            Schedule::Uniform => Strategy::Publication,
            Schedule::Sampling => {
                if t % self.cfg.w == 0 {
                    Strategy::Publication
                } else {
                    Strategy::Approximation
                }
            }
            Schedule::Adaptive => msd_choose(dis_attack, potential_gap),
        };
        let direction = match intended {
            Strategy::Publication => Direction::Maximize,
            Strategy::Approximation => Direction::Minimize,
        };
        let plan = StepPlan { t, intended, direction, dis_attack, potential_gap, candidate };
        self.plan = Some(plan.clone());
        Ok(plan)
    }

    pub fn plan(&self) -> Option<&StepPlan> {
        self.plan.as_ref()
    }

    /// Oracle parameters the attack tool believes a phase runs with: the
    /// deployed mechanism's kind and domain at the budget the assumed
    /// protocol's arithmetic implies. A matched attacker reconstructs the
    /// actual parameters exactly; a tool built for a different protocol
    /// calibrates to the wrong schedule, which is what drives the poor
    /// performance of mismatched output attacks.
    fn believed_fo(&self, actual: &FoParams, phase_epsilon: f64) -> Result<FoParams> {
        fo_params(actual.kind, phase_epsilon.max(1e-9), actual.d)
    }

    fn believed_dissimilarity_epsilon(&self) -> f64 {
        let alloc = dissimilarity_allocation(
            self.cfg.assumed_protocol,
            self.cfg.epsilon,
            self.assumed_total(),
            self.cfg.w,
        );
        match alloc {
            Some(Allocation::Budget(e1)) => e1,
            // population division and the always-publish baselines run
            // every collection at the full budget
            _ => self.cfg.epsilon,
        }
    }

    fn believed_publication_epsilon(&self) -> f64 {
        match self.mirror_candidate() {
            Allocation::Budget(e2) => e2,
            Allocation::Population(_) => self.cfg.epsilon,
        }
    }

    /// Fake allocation for the dissimilarity phase. Output-mode reports are
    /// calibrated to the assumed protocol's phase parameters, not to
    /// whatever the aggregator actually handed out.
    pub fn dma_allocation(&self, fo1: &FoParams) -> Result<FakeAllocation> {
        let knowledge = self
            .knowledge
            .as_ref()
            .ok_or_else(|| Error::config("dma requested before begin_step"))?;
        let direction =
            self.plan.as_ref().map_or(Direction::Minimize, |p| p.direction);
        if self.cfg.kind.is_input() {
            idma_extreme(knowledge, &self.last_release, self.cfg.m, direction)
        } else {
            let believed = self.believed_fo(fo1, self.believed_dissimilarity_epsilon())?;
            odma_extreme(knowledge, &self.last_release, self.cfg.m, direction, &believed)
        }
    }

    /// Fake allocation for the publication phase, for the `queried` fake
    /// users actually asked to report. Input fakes and tools assuming a
    /// budget-division protocol plan per device (every device carries an
    /// equal share of the full-m solution, so the sampled subset realizes
    /// it proportionally). A tool assuming population division instead
    /// crafts absolute counts for the cohort it believes was drawn: the
    /// mirrored candidate size, the queried fakes it coordinates, and the
    /// believed genuine remainder. A wrong cohort model mis-scales the
    /// push, which is the second way a mismatched output attack loses.
    pub fn pma_allocation(&self, fo2: &FoParams, queried: u64) -> Result<FakeAllocation> {
        let knowledge = self
            .knowledge
            .as_ref()
            .ok_or_else(|| Error::config("pma requested before begin_step"))?;
        if self.cfg.kind.is_input() {
            let full = ipma_solve(knowledge, &self.target, self.cfg.m)?;
            return Ok(scale_allocation(&full, queried));
        }
        let believed = self.believed_fo(fo2, self.believed_publication_epsilon())?;
        match self.mirror_candidate() {
            Allocation::Budget(_) => {
                let full = opma_solve(knowledge, &self.target, self.cfg.m, &believed)?;
                Ok(scale_allocation(&full, queried))
            }
            Allocation::Population(u2) => {
                let genuine = (u2.saturating_sub(queried) as f64).max(1.0);
                let cohort = Knowledge::new(genuine, knowledge.f_e.clone())?;
                opma_solve(&cohort, &self.target, queried, &believed)
            }
        }
    }

    /// Record what the fake users observed this step. At a publication,
    /// budget division reveals the spent budget directly through the
    /// collection parameters; population division is estimated from the
    /// number of fakes sampled into the publication, falling back to the
    /// mirrored candidate when no fake was drawn. Approximations append a
    /// zero spend.
    pub fn observe_step(
        &mut self,
        strategy: Strategy,
        published_epsilon: Option<f64>,
        sampled_fakes: Option<u64>,
    ) {
        let spend = match strategy {
            Strategy::Approximation => 0.0,
            Strategy::Publication => {
                let fallback = match self.plan.as_ref().map(|p| p.candidate) {
                    Some(Allocation::Budget(e2)) => e2,
                    Some(Allocation::Population(u2)) => u2 as f64,
                    None => 0.0,
                };
                if self.cfg.assumed_protocol.is_budget_division() {
                    published_epsilon.unwrap_or(fallback)
                } else {
                    match sampled_fakes {
                        Some(mt) if mt > 0 && self.cfg.m > 0 => {
                            let n_e = self.knowledge.as_ref().map_or(0.0, |k| k.n_e);
                            mt as f64 * (n_e + self.cfg.m as f64) / self.cfg.m as f64
                        }
                        _ => fallback,
                    }
                }
            }
        };
        self.q_m.push_back(spend);
        while self.q_m.len() > self.cfg.w.saturating_sub(1) {
            self.q_m.pop_front();
        }
    }
}

/// One row of the per-run attack trace.
#[derive(Debug, Clone)]
pub struct AttackTraceRow {
    pub t: usize,
    pub msd_choice: Strategy,
    pub dma_direction: Option<Direction>,
    pub dma_success: Option<bool>,
    pub gap: f64,
}

pub fn write_attack_trace_csv<W: std::io::Write>(
    mut out: W,
    trace: &[AttackTraceRow],
) -> Result<()> {
    writeln!(out, "t,msd_choice,dma_direction,dma_success,gap_t")?;
    for row in trace {
        let direction = match row.dma_direction {
            Some(Direction::Maximize) => "maximize",
            Some(Direction::Minimize) => "minimize",
            None => "",
        };
        let success = row.dma_success.map_or(String::new(), |s| s.to_string());
        writeln!(
            out,
            "{},{},{},{},{}",
            row.t,
            row.msd_choice.label(),
            direction,
            success,
            row.gap
        )?;
    }
    Ok(())
}

/// A closed-form expected-gap reference: either a single value or a
/// (best-case, worst-case) interval when the protocol's adaptive
/// allocation makes the exact average intractable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bound {
    Value(f64),
    Interval { lo: f64, hi: f64 },
}

impl Bound {
    pub fn lo(&self) -> f64 {
        match *self {
            Bound::Value(v) => v,
            Bound::Interval { lo, .. } => lo,
        }
    }

    pub fn hi(&self) -> f64 {
        match *self {
            Bound::Value(v) => v,
            Bound::Interval { hi, .. } => hi,
        }
    }
}

fn ideal_gap(input: bool, fo_kind: FoKind, m: f64, n: f64, epsilon: f64, d: usize) -> f64 {
    if input {
        crate::attack_core::ipma_ideal_gap(fo_kind, m, n, epsilon, d)
    } else {
        crate::attack_core::opma_ideal_gap(fo_kind, m, n, epsilon, d)
    }
}

/// Stream-averaged gap of the sampling attack: one manipulated publication
/// per window plus the staleness drift of approximating the remaining
/// timestamps with the window's first target.
fn sampling_average(gap_pub: f64, targets: &[Vec<f64>], w: usize) -> f64 {
    let t_len = targets.len();
    let mut total = 0.0;
    let mut start = 0;
    while start < t_len {
        total += gap_pub;
        for t in start + 1..(start + w).min(t_len) {
            total += msd(&targets[t], &targets[start]);
        }
        start += w;
    }
    total / t_len as f64
}

/// The closed-form expected average manipulation gap for a (protocol,
/// attack) pairing, assuming enough fake users that the dissimilarity
/// manipulations always succeed and the target is exactly reachable.
/// Population-division cells scale both populations by the sampled
/// fraction; sampling-attack cells need the target stream for the drift
/// term. Pairings outside the analyzed set return an error.
pub fn bound_table(
    protocol: ProtocolKind,
    attack: AttackKind,
    fo_kind: FoKind,
    d: usize,
    m: f64,
    n: f64,
    epsilon: f64,
    w: usize,
    targets: Option<&[Vec<f64>]>,
) -> Result<Bound> {
    let input = attack.is_input();
    let g = |m_eff: f64, n_eff: f64, eps: f64| ideal_gap(input, fo_kind, m_eff, n_eff, eps, d);
    let wf = w as f64;
    let pow = 2f64.powi(w as i32 + 1);
    let unsupported = || {
        Err(Error::config(format!(
            "no closed-form gap for attack '{}' against protocol '{}'",
            attack.label(),
            protocol.label()
        )))
    };

    match attack.schedule() {
        Schedule::Uniform => Ok(match protocol {
            ProtocolKind::Lbd => {
                Bound::Interval { lo: g(m, n, epsilon / 4.0), hi: g(m, n, epsilon / pow) }
            }
            ProtocolKind::Lba => Bound::Value(g(m, n, epsilon / (2.0 * wf))),
            ProtocolKind::Lpd => Bound::Interval {
                lo: g(m / 4.0, n / 4.0, epsilon),
                hi: g(m / pow, n / pow, epsilon),
            },
            ProtocolKind::Lpa => Bound::Value(g(m / (2.0 * wf), n / (2.0 * wf), epsilon)),
            ProtocolKind::Lbu => Bound::Value(g(m, n, epsilon / wf)),
            ProtocolKind::Lpu => Bound::Value(g(m / wf, n / wf, epsilon)),
            ProtocolKind::Lsp => return unsupported(),
        }),
        Schedule::Adaptive => Ok(match protocol {
            ProtocolKind::Lbd => {
                Bound::Interval { lo: g(m, n, epsilon / 4.0), hi: g(m, n, epsilon / pow) }
            }
            ProtocolKind::Lba => Bound::Interval {
                lo: g(m, n, epsilon / 2.0),
                hi: g(m, n, epsilon / (2.0 * wf)),
            },
            ProtocolKind::Lpd => Bound::Interval {
                lo: g(m / 4.0, n / 4.0, epsilon),
                hi: g(m / pow, n / pow, epsilon),
            },
            ProtocolKind::Lpa => Bound::Interval {
                lo: g(m / 2.0, n / 2.0, epsilon),
                hi: g(m / (2.0 * wf), n / (2.0 * wf), epsilon),
            },
            _ => return unsupported(),
        }),
        Schedule::Sampling => {
            let targets = targets.ok_or_else(|| {
                Error::config("sampling-attack gap needs the target stream for its drift term")
            })?;
            if targets.is_empty() {
                return Err(Error::config("target stream is empty"));
            }
            let gap_pub = match protocol {
                ProtocolKind::Lbd => g(m, n, epsilon / 4.0),
                ProtocolKind::Lba => g(m, n, epsilon / 2.0),
                ProtocolKind::Lpd => g(m / 4.0, n / 4.0, epsilon),
                ProtocolKind::Lpa => g(m / 2.0, n / 2.0, epsilon),
                ProtocolKind::Lsp => g(m, n, epsilon),
                ProtocolKind::Lbu | ProtocolKind::Lpu => return unsupported(),
            };
            Ok(Bound::Value(sampling_average(gap_pub, targets, w)))
        }
    }
}

/// What the attacker knows about the genuine side of a mean-estimation
/// stream: population estimate and estimated sum of inputs.
#[derive(Debug, Clone, Copy)]
pub struct MeanKnowledge {
    pub n_e: f64,
    pub s1_e: f64,
}

/// The value every fake user reports to steer the aggregate mean onto the
/// target, clipped to the mechanism's legitimate report range.
pub fn opa_fake_value(knowledge: &MeanKnowledge, target: f64, m: u64, bound: f64) -> Result<f64> {
    if m == 0 {
        return Err(Error::config("output mean attack needs at least one fake user"));
    }
    let raw = ((m as f64 + knowledge.n_e) * target - knowledge.s1_e) / m as f64;
    Ok(raw.clamp(-bound, bound))
}

/// Population-doubling shared by the mean-attack gap formulas: their
/// source derivation assumes only half the population feeds the mean
/// estimator, so with everyone participating the populations and the
/// population-extensive sums all double, while the mean itself does not.
struct DoubledMean {
    m: f64,
    n: f64,
    n_e: f64,
    s1: f64,
    s2: f64,
    s1_e: f64,
}

fn doubled(m: u64, n: f64, n_e: f64, s1: f64, s2: f64, s1_e: f64) -> DoubledMean {
    DoubledMean { m: 2.0 * m as f64, n: 2.0 * n, n_e: 2.0 * n_e, s1: 2.0 * s1, s2: 2.0 * s2, s1_e: 2.0 * s1_e }
}

fn mean_bias(v: &DoubledMean, mu: f64) -> f64 {
    let total = v.m + v.n;
    ((v.n_e - v.n) / total * mu + (v.s1 - v.s1_e) / total).powi(2)
}

/// Expected squared distance between the attacked mean release and the
/// target when the genuine reports come from the stochastic-rounding
/// randomizer. s1/s2 are the sums of genuine inputs and squared inputs,
/// mu the true mean; the `_e` values are the attacker's estimates.
pub fn opa_gap_sr(
    m: u64,
    n: f64,
    n_e: f64,
    epsilon: f64,
    s1: f64,
    s2: f64,
    s1_e: f64,
    mu: f64,
) -> f64 {
    let v = doubled(m, n, n_e, s1, s2, s1_e);
    let e = epsilon.exp();
    let pq = (e - 1.0) / (e + 1.0);
    let total2 = (v.m + v.n) * (v.m + v.n);
    (2.0 * v.n - 2.0 * pq * pq * v.s2) / (total2 * pq * pq) + v.s2 / total2 + mean_bias(&v, mu)
}

/// Same, with the genuine reports coming from the piecewise randomizer.
pub fn opa_gap_pm(
    m: u64,
    n: f64,
    n_e: f64,
    epsilon: f64,
    s1: f64,
    s2: f64,
    s1_e: f64,
    mu: f64,
) -> f64 {
    let v = doubled(m, n, n_e, s1, s2, s1_e);
    let h = (epsilon / 2.0).exp();
    let total2 = (v.m + v.n) * (v.m + v.n);
    mean_bias(&v, mu)
        + 2.0 * v.n * (h + 3.0) / (3.0 * total2 * (h - 1.0) * (h - 1.0))
        + (1.0 + h) * v.s2 / (total2 * (h - 1.0))
}

/// Branch-weighted gap for the hybrid randomizer: its reports come from
/// the piecewise branch with the mechanism's mixing probability and from
/// stochastic rounding otherwise.
pub fn opa_gap(
    params: &MeanMechParams,
    m: u64,
    n: f64,
    n_e: f64,
    s1: f64,
    s2: f64,
    s1_e: f64,
    mu: f64,
) -> f64 {
    let sr = opa_gap_sr(m, n, n_e, params.epsilon, s1, s2, s1_e, mu);
    if params.pm_weight <= 0.0 {
        return sr;
    }
    let pm = opa_gap_pm(m, n, n_e, params.epsilon, s1, s2, s1_e, mu);
    params.pm_weight * pm + (1.0 - params.pm_weight) * sr
}

/// Dissimilarity steering target for mean streams: approach the last
/// release to suppress a publication, or the domain endpoint farther from
/// it to force one.
pub fn mean_dma_target(last_release: f64, direction: Direction) -> f64 {
    match direction {
        Direction::Minimize => last_release,
        Direction::Maximize => {
            if (last_release - 1.0).abs() >= (last_release + 1.0).abs() {
                1.0
            } else {
                -1.0
            }
        }
    }
}

/// Fake value that drives a plain (single-collection) mean aggregate onto
/// the target: each of the m fake users reports the same solved value,
/// clipped to the data domain.
pub fn cgm_attack(n_e: f64, mean_e: f64, target: f64, m: u64, domain: (f64, f64)) -> Result<f64> {
    if m == 0 {
        return Err(Error::config("mean attack needs at least one fake user"));
    }
    if domain.0 >= domain.1 {
        return Err(Error::config("empty value domain"));
    }
    let z = ((n_e + m as f64) * target - n_e * mean_e) / m as f64;
    Ok(z.clamp(domain.0, domain.1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_targets::{gen_synthetic, GeneratorConfig, SyntheticModel};
    use crate::mean_mech::{mean_params, mean_perturb, report_bound, MeanMechKind};
    use crate::rng::{lane, substream};
    use approx::assert_abs_diff_eq;

    #[test]
    fn attack_kind_parsing_and_structure() {
        for kind in AttackKind::ALL {
            assert_eq!(kind.label().parse::<AttackKind>().unwrap(), kind);
        }
        assert!(AttackKind::Iaa.is_input());
        assert!(!AttackKind::Osa.is_input());
        assert_eq!(AttackKind::Oua.schedule(), Schedule::Uniform);
        assert_eq!(AttackKind::Isa.schedule(), Schedule::Sampling);
        assert!("xxx".parse::<AttackKind>().is_err());

        assert_eq!("full".parse::<KnowledgeMode>().unwrap(), KnowledgeMode::Full);
        assert_eq!(
            "partial:0.25".parse::<KnowledgeMode>().unwrap(),
            KnowledgeMode::Partial(0.25)
        );
        assert_eq!("mitm:0.01".parse::<KnowledgeMode>().unwrap(), KnowledgeMode::Mitm(0.01));
        assert!("partial:zero".parse::<KnowledgeMode>().is_err());
    }

    fn fixed_stream(n: usize, t_len: usize) -> CategoricalStream {
        let cfg = GeneratorConfig { model: SyntheticModel::Sine, n, t_len };
        gen_synthetic(&cfg, &mut substream(11, lane::DATA)).unwrap()
    }

    #[test]
    fn knowledge_modes_behave_as_specified() {
        let stream = fixed_stream(100_000, 3);
        let fo = fo_params(FoKind::Krr, 1.0, 2).unwrap();

        let mut full =
            KnowledgeSource::new(KnowledgeMode::Full, 100_000, 0.0, substream(1, lane::KNOWLEDGE))
                .unwrap();
        let k = full.estimate(&stream, 1, &fo).unwrap();
        assert_eq!(k.f_e, stream.frequencies(1));
        assert_abs_diff_eq!(k.n_e, 100_000.0, epsilon = 1e-9);

        let offset =
            KnowledgeSource::new(KnowledgeMode::Full, 100_000, -0.25, substream(1, lane::KNOWLEDGE))
                .unwrap();
        assert_abs_diff_eq!(offset.n_e(), 75_000.0, epsilon = 1e-9);

        let mut partial = KnowledgeSource::new(
            KnowledgeMode::Partial(0.25),
            100_000,
            0.0,
            substream(2, lane::KNOWLEDGE),
        )
        .unwrap();
        let k = partial.estimate(&stream, 1, &fo).unwrap();
        let truth = stream.frequencies(1);
        let linf = k
            .f_e
            .iter()
            .zip(&truth)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(linf < 0.01, "subset estimate off by {linf}");

        assert!(KnowledgeSource::new(
            KnowledgeMode::Partial(0.0),
            100,
            0.0,
            substream(3, lane::KNOWLEDGE)
        )
        .is_err());
    }

    #[test]
    fn mitm_knowledge_is_noisier_than_partial() {
        let stream = fixed_stream(10_000, 40);
        let fo = fo_params(FoKind::Krr, 1.0, 2).unwrap();
        let mut partial = KnowledgeSource::new(
            KnowledgeMode::Partial(0.01),
            10_000,
            0.0,
            substream(4, lane::KNOWLEDGE),
        )
        .unwrap();
        let mut mitm = KnowledgeSource::new(
            KnowledgeMode::Mitm(0.01),
            10_000,
            0.0,
            substream(4, lane::KNOWLEDGE),
        )
        .unwrap();
        let (mut err_partial, mut err_mitm) = (0.0, 0.0);
        for t in 0..stream.t_len {
            let truth = stream.frequencies(t);
            err_partial += msd(&partial.estimate(&stream, t, &fo).unwrap().f_e, &truth);
            err_mitm += msd(&mitm.estimate(&stream, t, &fo).unwrap().f_e, &truth);
        }
        assert!(
            err_mitm > 2.0 * err_partial,
            "oracle recovery should add noise: mitm {err_mitm} vs partial {err_partial}"
        );
    }

    fn attacker(kind: AttackKind, assumed: ProtocolKind, m: u64, w: usize) -> AttackerState {
        AttackerState::new(AttackerConfig {
            kind,
            m,
            assumed_protocol: assumed,
            fo_kind: FoKind::Krr,
            epsilon: 1.0,
            w,
        })
        .unwrap()
    }

    #[test]
    fn empty_history_mirrors_protocol_candidates() {
        let mut a = attacker(AttackKind::Iaa, ProtocolKind::Lbd, 100, 5);
        let k = Knowledge::new(1000.0, vec![0.5, 0.5]).unwrap();
        a.begin_step(0, k, &[0.5, 0.5], &[0.5, 0.5]).unwrap();
        // halving grants a quarter of the stream budget on a clean window
        match a.mirror_candidate() {
            Allocation::Budget(e2) => assert_abs_diff_eq!(e2, 0.25, epsilon = 1e-12),
            other => panic!("expected a budget candidate, got {other:?}"),
        }
    }

    #[test]
    fn observation_updates_shift_the_candidate() {
        let mut a = attacker(AttackKind::Iaa, ProtocolKind::Lbd, 100, 4);
        let k = Knowledge::new(1000.0, vec![0.5, 0.5]).unwrap();
        a.begin_step(0, k.clone(), &[0.5, 0.5], &[0.9, 0.1]).unwrap();
        a.observe_step(Strategy::Publication, Some(0.25), None);
        a.begin_step(1, k.clone(), &[0.9, 0.1], &[0.9, 0.1]).unwrap();
        match a.mirror_candidate() {
            Allocation::Budget(e2) => assert_abs_diff_eq!(e2, 0.125, epsilon = 1e-12),
            other => panic!("expected a budget candidate, got {other:?}"),
        }
        a.observe_step(Strategy::Approximation, None, None);
        a.begin_step(2, k, &[0.9, 0.1], &[0.9, 0.1]).unwrap();
        match a.mirror_candidate() {
            Allocation::Budget(e2) => assert_abs_diff_eq!(e2, 0.125, epsilon = 1e-12),
            other => panic!("expected a budget candidate, got {other:?}"),
        }
    }

    #[test]
    fn adaptive_schedule_follows_the_gap_comparison() {
        let mut a = attacker(AttackKind::Iaa, ProtocolKind::Lbd, 200, 5);
        let k = Knowledge::new(1000.0, vec![0.5, 0.5]).unwrap();

        // release already on target: nothing to gain from publishing
        let plan = a.begin_step(0, k.clone(), &[0.5, 0.5], &[0.5, 0.5]).unwrap();
        assert_eq!(plan.intended, Strategy::Approximation);
        assert_eq!(plan.direction, Direction::Minimize);
        assert_abs_diff_eq!(plan.dis_attack, 0.0, epsilon = 1e-15);

        // release far from target: force a publication
        let plan = a.begin_step(0, k, &[0.1, 0.9], &[0.9, 0.1]).unwrap();
        assert_eq!(plan.intended, Strategy::Publication);
        assert_eq!(plan.direction, Direction::Maximize);
        assert!(plan.dis_attack > plan.potential_gap);
    }

    #[test]
    fn fixed_schedules_ignore_the_gap() {
        let k = Knowledge::new(1000.0, vec![0.5, 0.5]).unwrap();
        let mut uniform = attacker(AttackKind::Iua, ProtocolKind::Lba, 50, 4);
        let plan = uniform.begin_step(3, k.clone(), &[0.5, 0.5], &[0.5, 0.5]).unwrap();
        assert_eq!(plan.intended, Strategy::Publication);

        let mut sampling = attacker(AttackKind::Osa, ProtocolKind::Lba, 50, 4);
        let plan = sampling.begin_step(4, k.clone(), &[0.1, 0.9], &[0.9, 0.1]).unwrap();
        assert_eq!(plan.intended, Strategy::Publication);
        let plan = sampling.begin_step(5, k, &[0.1, 0.9], &[0.9, 0.1]).unwrap();
        assert_eq!(plan.intended, Strategy::Approximation);
    }

    #[test]
    fn allocations_match_the_underlying_solvers() {
        let mut a = attacker(AttackKind::Oaa, ProtocolKind::Lbd, 100, 5);
        let k = Knowledge::new(100.0, vec![0.5, 0.5]).unwrap();
        a.begin_step(0, k.clone(), &[0.1, 0.9], &[0.75, 0.25]).unwrap();
        // the tool calibrates to its own mirror of the protocol, not to the
        // parameters of the collection it is injected into
        let handed_out = fo_params(FoKind::Krr, 3f64.ln(), 2).unwrap();
        let believed = fo_params(FoKind::Krr, 0.25, 2).unwrap(); // fresh LBD window: eps/4
        let pma = a.pma_allocation(&handed_out).unwrap();
        assert_eq!(pma.counts, opma_solve(&k, &[0.75, 0.25], 100, &believed).unwrap().counts);
        let dma = a.dma_allocation(&handed_out).unwrap();
        // maximize: every fake supports the least frequent released item
        assert_eq!(dma.counts, vec![100, 0]);
    }

    #[test]
    fn population_mirror_uses_sampled_fake_counts() {
        let mut a = attacker(AttackKind::Iaa, ProtocolKind::Lpd, 100, 4);
        let k = Knowledge::new(900.0, vec![0.5, 0.5]).unwrap();
        a.begin_step(0, k.clone(), &[0.1, 0.9], &[0.9, 0.1]).unwrap();
        match a.mirror_candidate() {
            // fresh window: (N/2 - 0)/2 with N = 900 + 100
            Allocation::Population(u2) => assert_eq!(u2, 250),
            other => panic!("expected a population candidate, got {other:?}"),
        }
        // 30 of the 100 fakes sampled: attacker reconstructs 30 * 1000/100
        a.observe_step(Strategy::Publication, None, Some(30));
        a.begin_step(1, k, &[0.9, 0.1], &[0.9, 0.1]).unwrap();
        match a.mirror_candidate() {
            Allocation::Population(u2) => assert_eq!(u2, (500.0f64 - 300.0).div_euclid(2.0) as u64),
            other => panic!("expected a population candidate, got {other:?}"),
        }
    }

    #[test]
    fn bound_table_hand_cells() {
        let (m, n, eps, w, d) = (20_000.0, 100_000.0, 1.0, 5usize, 2usize);
        let kind = FoKind::Krr;

        let b = bound_table(ProtocolKind::Lba, AttackKind::Iua, kind, d, m, n, eps, w, None)
            .unwrap();
        assert_eq!(b, Bound::Value(fo_variance(kind, n + m, eps / 10.0, d)));

        let b = bound_table(ProtocolKind::Lbd, AttackKind::Oaa, kind, d, m, n, eps, w, None)
            .unwrap();
        let shrink = (n / (n + m)).powi(2);
        assert_eq!(
            b,
            Bound::Interval {
                lo: shrink * fo_variance(kind, n, eps / 4.0, d),
                hi: shrink * fo_variance(kind, n, eps / 64.0, d),
            }
        );

        let b = bound_table(ProtocolKind::Lpu, AttackKind::Oua, kind, d, m, n, eps, w, None)
            .unwrap();
        assert_eq!(b, Bound::Value(shrink * fo_variance(kind, n / 5.0, eps, d)));

        // constant target: the drift vanishes, leaving one full-budget
        // publication gap averaged over each window
        let targets = vec![vec![0.5, 0.5]; 20];
        let b = bound_table(
            ProtocolKind::Lsp,
            AttackKind::Isa,
            kind,
            d,
            m,
            n,
            eps,
            w,
            Some(&targets),
        )
        .unwrap();
        assert_abs_diff_eq!(
            b.lo(),
            fo_variance(kind, n + m, eps, d) / w as f64,
            epsilon = 1e-15
        );

        // moving target: drift is strictly positive
        let mut moving = targets.clone();
        for (t, row) in moving.iter_mut().enumerate() {
            row[0] = 0.3 + 0.02 * t as f64;
            row[1] = 1.0 - row[0];
        }
        let b_moving = bound_table(
            ProtocolKind::Lsp,
            AttackKind::Isa,
            kind,
            d,
            m,
            n,
            eps,
            w,
            Some(&moving),
        )
        .unwrap();
        assert!(b_moving.lo() > b.lo());

        assert!(bound_table(ProtocolKind::Lsp, AttackKind::Iua, kind, d, m, n, eps, w, None)
            .is_err());
        assert!(bound_table(ProtocolKind::Lbu, AttackKind::Isa, kind, d, m, n, eps, w, None)
            .is_err());
        assert!(bound_table(ProtocolKind::Lsp, AttackKind::Isa, kind, d, m, n, eps, w, None)
            .is_err());
    }

    #[test]
    fn interval_bounds_are_ordered() {
        for &(proto, attack) in &[
            (ProtocolKind::Lbd, AttackKind::Iua),
            (ProtocolKind::Lbd, AttackKind::Oua),
            (ProtocolKind::Lba, AttackKind::Iaa),
            (ProtocolKind::Lpd, AttackKind::Oaa),
            (ProtocolKind::Lpa, AttackKind::Iaa),
        ] {
            let b = bound_table(proto, attack, FoKind::Oue, 4, 1e4, 1e5, 1.0, 20, None).unwrap();
            assert!(b.lo() <= b.hi(), "{proto:?}/{attack:?} bound inverted");
            assert!(b.lo() > 0.0);
        }
    }

    #[test]
    fn opa_fake_value_solves_and_clips() {
        let k = MeanKnowledge { n_e: 100_000.0, s1_e: 0.0 };
        let z = opa_fake_value(&k, 0.1, 11_111, 2.0).unwrap();
        assert_abs_diff_eq!(z, 111_111.0 * 0.1 / 11_111.0, epsilon = 1e-9);
        let clipped = opa_fake_value(&k, 0.1, 11_111, 0.5).unwrap();
        assert_abs_diff_eq!(clipped, 0.5, epsilon = 1e-12);
        assert!(opa_fake_value(&k, 0.1, 0, 2.0).is_err());
    }

    #[test]
    fn mean_gap_bias_vanishes_under_exact_knowledge() {
        let (m, n, eps) = (200u64, 2000.0, 1.0);
        let (s1, s2, mu) = (600.0, 180.0, 0.3);
        let exact = opa_gap_sr(m, n, n, eps, s1, s2, s1, mu);
        let off = opa_gap_sr(m, n, 1.1 * n, eps, s1, s2, s1, mu);
        assert!(off > exact, "population misestimate must add bias");
        let off_sum = opa_gap_pm(m, n, n, eps, s1, s2, 0.9 * s1, mu);
        let exact_pm = opa_gap_pm(m, n, n, eps, s1, s2, s1, mu);
        assert!(off_sum > exact_pm, "sum misestimate must add bias");
    }

    #[test]
    fn mean_gap_formulas_track_simulated_attacks() {
        // constant-value population, exact knowledge, target off the mean:
        // released error should concentrate on the formula's variance term
        let n = 2000usize;
        let m = 200u64;
        let v = 0.3;
        let target = 0.2;
        let s1 = n as f64 * v;
        let s2 = n as f64 * v * v;
        let mut rng = substream(21, lane::ATTACK);

        for (kind, eps) in [(MeanMechKind::Sr, 1.0), (MeanMechKind::Pm, 2.0), (MeanMechKind::Hm, 2.0)] {
            let params = mean_params(kind, eps).unwrap();
            let k = MeanKnowledge { n_e: n as f64, s1_e: s1 };
            let z = opa_fake_value(&k, target, m, report_bound(&params)).unwrap();
            let total = n as f64 + m as f64;
            let reps = 4000;
            let mut mse = 0.0;
            for _ in 0..reps {
                let mut sum = m as f64 * z;
                for _ in 0..n {
                    sum += mean_perturb(&params, v, &mut rng).unwrap();
                }
                let release = sum / total;
                mse += (release - target) * (release - target);
            }
            mse /= reps as f64;
            let formula = match kind {
                MeanMechKind::Sr => opa_gap_sr(m, n as f64, n as f64, eps, s1, s2, s1, v),
                MeanMechKind::Pm => opa_gap_pm(m, n as f64, n as f64, eps, s1, s2, s1, v),
                MeanMechKind::Hm => opa_gap(&params, m, n as f64, n as f64, s1, s2, s1, v),
            };
            let ratio: f64 = mse / formula;
            assert!(
                (0.85..=1.15).contains(&ratio),
                "{kind:?} empirical {mse} vs formula {formula} (ratio {ratio})"
            );
        }
    }

    #[test]
    fn mean_dma_picks_the_farther_endpoint() {
        assert_abs_diff_eq!(mean_dma_target(0.2, Direction::Maximize), -1.0);
        assert_abs_diff_eq!(mean_dma_target(-0.4, Direction::Maximize), 1.0);
        assert_abs_diff_eq!(mean_dma_target(0.2, Direction::Minimize), 0.2);
    }

    #[test]
    fn cgm_hand_examples() {
        let z = cgm_attack(100.0, 0.2, 0.5, 50, (-1.0, 1.0)).unwrap();
        assert_abs_diff_eq!(z, 1.0, epsilon = 1e-12);
        let z = cgm_attack(100.0, 0.2, 0.5, 50, (-2.0, 2.0)).unwrap();
        assert_abs_diff_eq!(z, 1.1, epsilon = 1e-12);
        let z = cgm_attack(100.0, 0.3, 0.3, 50, (-1.0, 1.0)).unwrap();
        assert_abs_diff_eq!(z, 0.3, epsilon = 1e-12);
        let z = cgm_attack(100.0, 0.2, 0.4, 1_000_000_000, (-1.0, 1.0)).unwrap();
        assert_abs_diff_eq!(z, 0.4, epsilon = 1e-6);
    }

    #[test]
    fn attack_trace_roundtrip() {
        let rows = vec![
            AttackTraceRow {
                t: 0,
                msd_choice: Strategy::Publication,
                dma_direction: Some(Direction::Maximize),
                dma_success: Some(true),
                gap: 0.01,
            },
            AttackTraceRow {
                t: 1,
                msd_choice: Strategy::Approximation,
                dma_direction: None,
                dma_success: None,
                gap: 0.02,
            },
        ];
        let mut buf = Vec::new();
        write_attack_trace_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "t,msd_choice,dma_direction,dma_success,gap_t");
        assert_eq!(lines.next().unwrap(), "0,publication,maximize,true,0.01");
        assert_eq!(lines.next().unwrap(), "1,approximation,,,0.02");
    }
}
