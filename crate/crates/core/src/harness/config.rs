//! Experiment configuration: a declarative TOML file plus programmatic
//! construction for tests and grids.

use std::str::FromStr;

use serde::Deserialize;

use crate::attack_orchestrators::{AttackKind, KnowledgeMode};
use crate::data_targets::{SyntheticModel, TargetKind};
use crate::defense::DefenseConfig;
use crate::error::{Error, Result};
use crate::freq_oracle::FoKind;
use crate::stream_protocols::ProtocolKind;

/// How many fake users the attacker registers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FakeBudget {
    /// Fraction of the total population: beta = m / (m + n).
    Beta(f64),
    /// Absolute count.
    Count(u64),
    /// Smallest m that makes every per-step target exactly reachable
    /// (publication-side sufficiency, maximized over the stream).
    Sufficient,
}

impl FakeBudget {
    pub fn label(&self) -> String {
        match self {
            FakeBudget::Beta(b) => format!("beta:{b}"),
            FakeBudget::Count(m) => format!("m:{m}"),
            FakeBudget::Sufficient => "sufficient".to_string(),
        }
    }
}

impl FromStr for FakeBudget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        if lower == "sufficient" {
            return Ok(FakeBudget::Sufficient);
        }
        if let Some(raw) = lower.strip_prefix("beta:") {
            let b: f64 = raw
                .parse()
                .map_err(|_| Error::config(format!("bad fake fraction '{raw}'")))?;
            return Ok(FakeBudget::Beta(b));
        }
        if let Some(raw) = lower.strip_prefix("m:") {
            let m: u64 =
                raw.parse().map_err(|_| Error::config(format!("bad fake count '{raw}'")))?;
            return Ok(FakeBudget::Count(m));
        }
        // a bare number reads as a fraction, matching the --beta flag
        lower
            .parse::<f64>()
            .map(FakeBudget::Beta)
            .map_err(|_| Error::config(format!("unknown fake budget '{s}'")))
    }
}

/// What the attacker steers releases toward.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetSelect {
    Kind(TargetKind),
    /// The true frequency stream itself; with this target the attack MSE
    /// coincides with the protocol's utility error.
    Truth,
}

impl TargetSelect {
    pub fn label(&self) -> &'static str {
        match self {
            TargetSelect::Kind(k) => k.label(),
            TargetSelect::Truth => "truth",
        }
    }
}

impl FromStr for TargetSelect {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("truth") {
            return Ok(TargetSelect::Truth);
        }
        Ok(TargetSelect::Kind(s.parse()?))
    }
}

/// One experiment: a protocol, an optional attack, an optional defense,
/// and the population/stream shape, simulated once per seed.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub protocol: ProtocolKind,
    pub fo: FoKind,
    pub attack: Option<AttackKind>,
    /// Protocol the attack is tuned for; None means the actual one.
    /// Setting it differently is the mismatch experiment.
    pub assumed_protocol: Option<ProtocolKind>,
    pub epsilon: f64,
    pub w: usize,
    pub fakes: FakeBudget,
    pub n: u64,
    pub t_len: usize,
    pub d: usize,
    pub model: SyntheticModel,
    pub target: TargetSelect,
    pub knowledge: KnowledgeMode,
    /// Relative error of the attacker's population estimate; the studied
    /// grid is {-0.5, -0.25, 0, 0.25, 0.5}.
    pub ne_offset: f64,
    pub seeds: Vec<u64>,
    pub defense: Option<DefenseConfig>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            protocol: ProtocolKind::Lba,
            fo: FoKind::Ada,
            attack: Some(AttackKind::Oaa),
            assumed_protocol: None,
            epsilon: 1.0,
            w: 20,
            fakes: FakeBudget::Beta(0.2),
            n: 100_000,
            t_len: 800,
            d: 2,
            model: SyntheticModel::LinearNoise,
            target: TargetSelect::Kind(TargetKind::Gaussian),
            knowledge: KnowledgeMode::Partial(0.01),
            ne_offset: 0.0,
            seeds: (0..20).collect(),
            defense: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if self.w == 0 {
            return Err(Error::config("window length must be at least 1"));
        }
        if self.n == 0 {
            return Err(Error::config("population must not be empty"));
        }
        if self.t_len == 0 {
            return Err(Error::config("stream must have at least one timestamp"));
        }
        if self.d != 2 {
            return Err(Error::config(
                "synthetic streams are binary; d must be 2 for stream experiments",
            ));
        }
        if let FakeBudget::Beta(b) = self.fakes {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(format!("fake fraction must be in [0, 1), got {b}")));
            }
        }
        if self.seeds.is_empty() {
            return Err(Error::config("need at least one seed"));
        }
        if let Some(def) = &self.defense {
            def.validate()?;
        }
        match self.knowledge {
            KnowledgeMode::Partial(rho) | KnowledgeMode::Mitm(rho) => {
                if !(rho > 0.0 && rho <= 1.0) {
                    return Err(Error::config(format!(
                        "observed fraction must be in (0, 1], got {rho}"
                    )));
                }
            }
            KnowledgeMode::Full => {}
        }
        if !(self.ne_offset > -1.0) {
            return Err(Error::config(format!(
                "population estimate offset {} leaves no genuine users",
                self.ne_offset
            )));
        }
        Ok(())
    }

    pub fn attack_label(&self) -> &'static str {
        self.attack.map_or("none", AttackKind::label)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawExperiment {
    protocol: Option<String>,
    fo: Option<String>,
    attack: Option<String>,
    assumed_protocol: Option<String>,
    epsilon: Option<f64>,
    w: Option<usize>,
    beta: Option<f64>,
    m: Option<String>,
    n: Option<u64>,
    t_len: Option<usize>,
    d: Option<usize>,
    model: Option<String>,
    target: Option<String>,
    knowledge: Option<String>,
    ne_offset: Option<f64>,
    seeds: Option<Vec<u64>>,
    seed_count: Option<u64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDefense {
    enabled: Option<bool>,
    r: Option<f64>,
    s: Option<usize>,
    trees: Option<usize>,
    subsample_size: Option<usize>,
    ks_alpha: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    experiment: Option<RawExperiment>,
    defense: Option<RawDefense>,
}

/// Parse a TOML experiment description. Every field is optional and
/// defaults to the paper-style configuration; `attack = "none"` disables
/// the attack.
pub fn from_toml_str(text: &str) -> Result<ExperimentConfig> {
    let raw: RawConfig =
        toml::from_str(text).map_err(|e| Error::config(format!("config parse error: {e}")))?;
    let mut cfg = ExperimentConfig::default();
    if let Some(exp) = raw.experiment {
        if let Some(v) = exp.protocol {
            cfg.protocol = v.parse()?;
        }
        if let Some(v) = exp.fo {
            cfg.fo = v.parse()?;
        }
        if let Some(v) = exp.attack {
            cfg.attack = if v.eq_ignore_ascii_case("none") { None } else { Some(v.parse()?) };
        }
        if let Some(v) = exp.assumed_protocol {
            cfg.assumed_protocol =
                if v.eq_ignore_ascii_case("actual") { None } else { Some(v.parse()?) };
        }
        if let Some(v) = exp.epsilon {
            cfg.epsilon = v;
        }
        if let Some(v) = exp.w {
            cfg.w = v;
        }
        match (exp.beta, exp.m) {
            (Some(_), Some(_)) => {
                return Err(Error::config("give either beta or m, not both"));
            }
            (Some(b), None) => cfg.fakes = FakeBudget::Beta(b),
            (None, Some(m)) => cfg.fakes = m.parse()?,
            (None, None) => {}
        }
        if let Some(v) = exp.n {
            cfg.n = v;
        }
        if let Some(v) = exp.t_len {
            cfg.t_len = v;
        }
        if let Some(v) = exp.d {
            cfg.d = v;
        }
        if let Some(v) = exp.model {
            cfg.model = v.parse()?;
        }
        if let Some(v) = exp.target {
            cfg.target = v.parse()?;
        }
        if let Some(v) = exp.knowledge {
            cfg.knowledge = v.parse()?;
        }
        if let Some(v) = exp.ne_offset {
            cfg.ne_offset = v;
        }
        match (exp.seeds, exp.seed_count) {
            (Some(_), Some(_)) => {
                return Err(Error::config("give either seeds or seed_count, not both"));
            }
            (Some(list), None) => cfg.seeds = list,
            (None, Some(count)) => cfg.seeds = (0..count).collect(),
            (None, None) => {}
        }
    }
    if let Some(def) = raw.defense {
        if def.enabled.unwrap_or(false) {
            let mut d = DefenseConfig::default();
            if let Some(v) = def.r {
                d.r = v;
            }
            if let Some(v) = def.s {
                d.s = v;
            }
            if let Some(v) = def.trees {
                d.trees = v;
            }
            if let Some(v) = def.subsample_size {
                d.subsample_size = v;
            }
            if let Some(v) = def.ks_alpha {
                d.ks_alpha = v;
            }
            cfg.defense = Some(d);
        }
    }
    cfg.validate()?;
    Ok(cfg)
}
