//! One simulated seed: synthetic stream in, protocol releases out, with the
//! attacker and the defense wired into the collection path.

use crate::attack_core::{
    allocation_support_counts, allocation_to_reports, ipma_sufficient_m, opma_sufficient_m,
    FakeAllocation,
};
use crate::attack_orchestrators::{
    AttackTraceRow, AttackerConfig, AttackerState, KnowledgeSource, StepPlan,
};
use crate::data_targets::{gen_synthetic, gen_target, CategoricalStream, GeneratorConfig};
use crate::defense::{
    defended_release, iforest_scores, ks_consistency, ks_effective_size, subsample_estimates,
    DefenseTraceRow,
};
use crate::error::{Error, Result};
use crate::freq_oracle::{
    fo_aggregate_counts, fo_params, fo_perturb, perturb_counts, FoParams, ReportSet,
};
use crate::harness::config::{ExperimentConfig, FakeBudget, TargetSelect};
use crate::rng::{lane, substream, SimRng};
use crate::stream_protocols::{
    CollectRequest, Collected, Phase, PopulationSpec, ProtocolKind, ProtocolState, ReportSource,
    StepOutcome, Strategy,
};
use crate::util::sample_indices;

/// Per-user participation bookkeeping for population division: a user who
/// reports at step t is unavailable until t + w.
#[derive(Debug, Clone)]
pub struct ParticipationPool {
    next_free: Vec<u32>,
    w: usize,
}

impl ParticipationPool {
    pub fn new(total: usize, w: usize) -> Self {
        ParticipationPool { next_free: vec![0; total], w }
    }

    pub fn eligible_count(&self, t: usize) -> u64 {
        self.next_free.iter().filter(|&&nf| nf as usize <= t).count() as u64
    }

    /// Draw `u` distinct eligible user ids and start their cooldown.
    pub fn sample(&mut self, rng: &mut SimRng, t: usize, u: u64) -> Result<Vec<usize>> {
        let eligible: Vec<usize> = (0..self.next_free.len())
            .filter(|&i| self.next_free[i] as usize <= t)
            .collect();
        if (u as usize) > eligible.len() {
            return Err(Error::config(format!(
                "requested {u} reporters at step {t} but only {} are outside their cooldown",
                eligible.len()
            )));
        }
        let picked: Vec<usize> =
            sample_indices(rng, eligible.len(), u as usize).into_iter().map(|i| eligible[i]).collect();
        for &id in &picked {
            self.next_free[id] = (t + self.w) as u32;
        }
        Ok(picked)
    }
}

pub use crate::attack_core::scale_allocation;

/// The support counts and parameters of the latest dissimilarity
/// collection, kept so the defense can rebuild the phase-1 estimate.
#[derive(Debug, Clone)]
pub struct PhaseSnapshot {
    pub fo: FoParams,
    pub support: Vec<f64>,
    pub reports: u64,
}

/// Report source combining the genuine stream with attacker-controlled
/// fake users. With no attacker (or m = 0) it degrades to an honest source
/// whose randomness consumption is identical, so attack-free and
/// zero-beta runs produce bit-identical releases.
pub struct AttackedSource<'a> {
    stream: &'a CategoricalStream,
    n: u64,
    m: u64,
    attacker: Option<AttackerState>,
    knowledge: Option<KnowledgeSource>,
    intercept_fo: FoParams,
    pool: Option<ParticipationPool>,
    provide_raw: bool,
    rng_protocol: SimRng,
    rng_attack: SimRng,
    last_dis: Option<PhaseSnapshot>,
    last_pub_fo: Option<FoParams>,
}

impl<'a> AttackedSource<'a> {
    pub fn new(
        cfg: &ExperimentConfig,
        seed: u64,
        stream: &'a CategoricalStream,
        m: u64,
    ) -> Result<Self> {
        let active = m > 0 && cfg.attack.is_some();
        let (attacker, knowledge) = if active {
            let attacker = AttackerState::new(AttackerConfig {
                kind: cfg.attack.expect("active implies an attack kind"),
                m,
                assumed_protocol: cfg.assumed_protocol.unwrap_or(cfg.protocol),
                fo_kind: cfg.fo,
                epsilon: cfg.epsilon,
                w: cfg.w,
            })?;
            let knowledge = KnowledgeSource::new(
                cfg.knowledge,
                cfg.n,
                cfg.ne_offset,
                substream(seed, lane::KNOWLEDGE),
            )?;
            (Some(attacker), Some(knowledge))
        } else {
            (None, None)
        };
        let m = if active { m } else { 0 };
        let pool = (!cfg.protocol.is_budget_division())
            .then(|| ParticipationPool::new((cfg.n + m) as usize, cfg.w));
        Ok(AttackedSource {
            stream,
            n: cfg.n,
            m,
            attacker,
            knowledge,
            intercept_fo: intercept_params(cfg)?,
            pool,
            provide_raw: cfg.defense.is_some(),
            rng_protocol: substream(seed, lane::PROTOCOL),
            rng_attack: substream(seed, lane::ATTACK),
            last_dis: None,
            last_pub_fo: None,
        })
    }

    /// Let the attacker plan the coming step. None when no attack runs.
    pub fn plan_step(
        &mut self,
        t: usize,
        last_release: &[f64],
        target: &[f64],
    ) -> Result<Option<StepPlan>> {
        let (Some(attacker), Some(knowledge)) =
            (self.attacker.as_mut(), self.knowledge.as_mut())
        else {
            return Ok(None);
        };
        let estimate = knowledge.estimate(self.stream, t, &self.intercept_fo)?;
        Ok(Some(attacker.begin_step(t, estimate, last_release, target)?))
    }

    /// Feed the step outcome back into the attacker's spend bookkeeping.
    pub fn observe(&mut self, outcome: &StepOutcome) {
        if let Some(attacker) = self.attacker.as_mut() {
            attacker.observe_step(
                outcome.strategy,
                outcome.publication_budget,
                outcome.phase3.as_ref().map(|p| p.fake_reports),
            );
        }
    }

    pub fn take_dissimilarity_snapshot(&mut self) -> Option<PhaseSnapshot> {
        self.last_dis.take()
    }

    pub fn take_publication_fo(&mut self) -> Option<FoParams> {
        self.last_pub_fo.take()
    }
}

impl ReportSource for AttackedSource<'_> {
    fn total_population(&self) -> u64 {
        self.n + self.m
    }

    fn eligible(&self, t: usize) -> u64 {
        self.pool.as_ref().map_or(self.n + self.m, |p| p.eligible_count(t))
    }

    fn collect(&mut self, req: &CollectRequest) -> Result<Collected> {
        let d = req.fo.d;
        let (genuine_counts, genuine_total, m_t) = match req.population {
            PopulationSpec::All => {
                (self.stream.column_counts(req.t).to_vec(), self.n, self.m)
            }
            PopulationSpec::Sample(u) => {
                let pool = self
                    .pool
                    .as_mut()
                    .ok_or_else(|| Error::config("sampled collection without a participation pool"))?;
                let picked = pool.sample(&mut self.rng_protocol, req.t, u)?;
                let mut counts = vec![0u64; d];
                let mut fakes = 0u64;
                for id in picked {
                    if (id as u64) < self.n {
                        counts[self.stream.item(id, req.t)] += 1;
                    } else {
                        fakes += 1;
                    }
                }
                (counts, u - fakes, fakes)
            }
        };

        let fake_alloc = match (&self.attacker, m_t) {
            (Some(attacker), m_t) if m_t > 0 => Some(match req.phase {
                // Dissimilarity votes are per-device (rail or mimic), so the
                // sampled subset just carries the full plan proportionally.
                Phase::Dissimilarity => {
                    scale_allocation(&attacker.dma_allocation(&req.fo)?, m_t)
                }
                Phase::Publication => attacker.pma_allocation(&req.fo, m_t)?,
            }),
            _ => None,
        };

        // The defense inspects per-report data, so runs with a defense
        // configured materialize every publication's reports; all other
        // paths use count-level perturbation, which draws far fewer
        // random variates.
        let (support, raw) = if req.want_raw && self.provide_raw {
            let mut raw = ReportSet::new(&req.fo);
            for (k, &count) in genuine_counts.iter().enumerate() {
                for _ in 0..count {
                    raw.push(fo_perturb(&req.fo, k, &mut self.rng_protocol)?);
                }
            }
            if let Some(alloc) = &fake_alloc {
                let fake_reports = allocation_to_reports(alloc, &req.fo, &mut self.rng_attack)?;
                raw.extend_from(&fake_reports);
            }
            let support: Vec<f64> = raw.support_counts().iter().map(|&c| c as f64).collect();
            (support, Some(raw))
        } else {
            let mut support = perturb_counts(&req.fo, &genuine_counts, &mut self.rng_protocol)?;
            if let Some(alloc) = &fake_alloc {
                let fake_support =
                    allocation_support_counts(alloc, &req.fo, &mut self.rng_attack)?;
                for (s, f) in support.iter_mut().zip(&fake_support) {
                    *s += f;
                }
            }
            (support.iter().map(|&c| c as f64).collect(), None)
        };

        let n_reports = genuine_total + m_t;
        match req.phase {
            Phase::Dissimilarity => {
                self.last_dis = Some(PhaseSnapshot {
                    fo: req.fo.clone(),
                    support: support.clone(),
                    reports: n_reports,
                });
            }
            Phase::Publication => self.last_pub_fo = Some(req.fo.clone()),
        }
        Ok(Collected { support, n_reports, n_fake: m_t, raw })
    }
}

/// The seed-dependent inputs of one run; built once per seed so paired
/// runs (with/without defense, or different protocols in a matrix) share
/// the exact same stream.
#[derive(Debug, Clone)]
pub struct SeedData {
    pub stream: CategoricalStream,
    pub targets: Vec<Vec<f64>>,
    pub truth: Vec<Vec<f64>>,
}

pub fn build_seed_data(cfg: &ExperimentConfig, seed: u64) -> Result<SeedData> {
    let mut rng = substream(seed, lane::DATA);
    let stream = gen_synthetic(
        &GeneratorConfig { model: cfg.model, n: cfg.n as usize, t_len: cfg.t_len },
        &mut rng,
    )?;
    let truth: Vec<Vec<f64>> = (0..cfg.t_len).map(|t| stream.frequencies(t)).collect();
    let targets = match cfg.target {
        TargetSelect::Kind(kind) => gen_target(kind, cfg.d, cfg.t_len)?,
        TargetSelect::Truth => truth.clone(),
    };
    Ok(SeedData { stream, targets, truth })
}

/// Largest publication budget the protocol can ever grant; the sizing
/// reference for a reachability-sufficient fake population.
fn max_publication_budget(kind: ProtocolKind, epsilon: f64, w: usize) -> f64 {
    match kind {
        ProtocolKind::Lbd => epsilon / 4.0,
        ProtocolKind::Lba => epsilon / 2.0,
        ProtocolKind::Lbu => epsilon / w as f64,
        // population-division samples and the single-publication baseline
        // report under the full budget
        ProtocolKind::Lsp | ProtocolKind::Lpd | ProtocolKind::Lpa | ProtocolKind::Lpu => epsilon,
    }
}

/// Oracle parameters the genuine users report under at the step every user
/// participates in; what a man-in-the-middle observer must invert.
fn intercept_params(cfg: &ExperimentConfig) -> Result<FoParams> {
    let eps = match cfg.protocol {
        ProtocolKind::Lbd | ProtocolKind::Lba => cfg.epsilon / (2.0 * cfg.w as f64),
        ProtocolKind::Lbu => cfg.epsilon / cfg.w as f64,
        _ => cfg.epsilon,
    };
    fo_params(cfg.fo, eps, cfg.d)
}

/// Turn the configured fake budget into a concrete count, with a warning
/// when sufficiency could not be established everywhere.
pub fn resolve_fakes(cfg: &ExperimentConfig, data: &SeedData) -> (u64, Option<String>) {
    if cfg.attack.is_none() {
        return (0, None);
    }
    match cfg.fakes {
        FakeBudget::Count(m) => (m, None),
        FakeBudget::Beta(b) => {
            if b <= 0.0 {
                (0, None)
            } else {
                ((b / (1.0 - b) * cfg.n as f64).round() as u64, None)
            }
        }
        FakeBudget::Sufficient => {
            let attack = cfg.attack.expect("checked above");
            let budget = max_publication_budget(cfg.protocol, cfg.epsilon, cfg.w);
            let fo = match fo_params(cfg.fo, budget, cfg.d) {
                Ok(fo) => fo,
                Err(e) => return (0, Some(format!("cannot size fake population: {e}"))),
            };
            let n = cfg.n as f64;
            let mut best: Option<u64> = None;
            let mut unreachable = 0usize;
            for t in 0..cfg.t_len {
                let needed = if attack.is_input() {
                    ipma_sufficient_m(n, &data.truth[t], &data.targets[t])
                } else {
                    opma_sufficient_m(n, &data.truth[t], &data.targets[t], &fo)
                };
                match needed {
                    Some(m) => best = Some(best.map_or(m, |b| b.max(m))),
                    None => unreachable += 1,
                }
            }
            match best {
                Some(m) => {
                    let warning = (unreachable > 0).then(|| {
                        format!(
                            "{unreachable} of {} steps have unreachable targets; fake population sized for the rest",
                            cfg.t_len
                        )
                    });
                    (m, warning)
                }
                None => (0, Some("target unreachable at every step; no fake users registered".into())),
            }
        }
    }
}

/// Everything one simulated seed produces.
#[derive(Debug, Clone)]
pub struct SimOutput {
    /// Deployed releases, one per timestamp (defense substitutions applied).
    pub releases: Vec<Vec<f64>>,
    /// Per-step protocol outcomes with raw reports stripped.
    pub trace: Vec<StepOutcome>,
    pub attack_trace: Vec<AttackTraceRow>,
    pub defense_trace: Vec<DefenseTraceRow>,
    /// Steps where fake users reached a dissimilarity collection.
    pub dma_launched: u64,
    /// Among those, steps where the protocol took the attacker's intended
    /// strategy.
    pub dma_successes: u64,
    pub m: u64,
    pub warning: Option<String>,
}

/// Run one seed end to end. `defense_active` only gates the release
/// substitution; detection bookkeeping and raw-report materialization stay
/// identical so a deactivated twin consumes the same randomness.
pub fn simulate_seed(
    cfg: &ExperimentConfig,
    seed: u64,
    data: &SeedData,
    defense_active: bool,
) -> Result<SimOutput> {
    cfg.validate()?;
    let (m, warning) = resolve_fakes(cfg, data);
    let mut source = AttackedSource::new(cfg, seed, &data.stream, m)?;
    let mut protocol = ProtocolState::new(cfg.protocol, cfg.fo, cfg.epsilon, cfg.w, cfg.d)?;
    let mut rng_defense = substream(seed, lane::DEFENSE);
    let uniform = vec![1.0 / cfg.d as f64; cfg.d];

    let mut releases = Vec::with_capacity(cfg.t_len);
    let mut trace = Vec::with_capacity(cfg.t_len);
    let mut attack_trace = Vec::new();
    let mut defense_trace = Vec::new();
    let mut dma_launched = 0u64;
    let mut dma_successes = 0u64;

    for t in 0..cfg.t_len {
        let last = protocol
            .last_release()
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| uniform.clone());
        let plan = source.plan_step(t, &last, &data.targets[t])?;
        let mut outcome = protocol.step(&mut source)?;
        let dis_snapshot = source.take_dissimilarity_snapshot();
        let pub_fo = source.take_publication_fo();

        if let Some(def) = &cfg.defense {
            // Consistency screening needs both a dissimilarity estimate and
            // a fresh publication, so it only ever fires on the adaptive
            // kinds' publication steps.
            if outcome.strategy == Strategy::Publication {
                if let (Some(snap), Some(fo2), Some(reports2)) =
                    (&dis_snapshot, &pub_fo, outcome.phase3.as_ref().map(|p| p.reports))
                {
                    let phase1_estimate =
                        fo_aggregate_counts(&snap.fo, &snap.support, snap.reports as f64)?;
                    let eff1 = ks_effective_size(&snap.fo, snap.reports as f64);
                    let eff2 = ks_effective_size(fo2, reports2 as f64);
                    let detected = ks_consistency(
                        &phase1_estimate,
                        &outcome.release,
                        eff1,
                        eff2,
                        def.ks_alpha,
                    )?;
                    let mut chosen_score = None;
                    if detected && defense_active {
                        let raw = outcome
                            .phase3
                            .as_mut()
                            .and_then(|p| p.raw.take())
                            .ok_or_else(|| Error::config("defense needs raw publication reports"))?;
                        let estimates =
                            subsample_estimates(&raw, fo2, def.r, def.s, &mut rng_defense)?;
                        let scores = iforest_scores(&estimates, def, &mut rng_defense)?;
                        let substitute = defended_release(&estimates, &scores)?;
                        let mut best = 0;
                        for (i, &sc) in scores.iter().enumerate() {
                            if sc > scores[best] {
                                best = i;
                            }
                        }
                        chosen_score = Some(scores[best]);
                        protocol.override_release(substitute.clone())?;
                        outcome.release = substitute;
                    }
                    defense_trace.push(DefenseTraceRow {
                        t,
                        detected,
                        chosen_subset_score: chosen_score,
                        ag_running: 0.0,
                    });
                }
            }
        }

        source.observe(&outcome);

        if let Some(plan) = plan {
            let engaged = outcome.phase1.as_ref().is_some_and(|p| p.fake_reports > 0);
            let success = outcome.strategy == plan.intended;
            if engaged {
                dma_launched += 1;
                if success {
                    dma_successes += 1;
                }
            }
            attack_trace.push(AttackTraceRow {
                t,
                msd_choice: plan.intended,
                dma_direction: engaged.then_some(plan.direction),
                dma_success: engaged.then_some(success),
                gap: plan.potential_gap,
            });
        }

        if let Some(p) = outcome.phase1.as_mut() {
            p.raw = None;
        }
        if let Some(p) = outcome.phase3.as_mut() {
            p.raw = None;
        }
        releases.push(outcome.release.clone());
        trace.push(outcome);
    }

    Ok(SimOutput {
        releases,
        trace,
        attack_trace,
        defense_trace,
        dma_launched,
        dma_successes,
        m,
        warning,
    })
}
