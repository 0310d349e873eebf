//! Mean estimation mechanisms for numeric values in [-1, 1].
//!
//! Three local randomizers: the binary stochastic-rounding mechanism (SR),
//! the piecewise mechanism (PM), and the hybrid (HM) that runs PM with
//! probability 1 - e^(-eps/2) whenever eps > 0.61 and SR otherwise. All three
//! are unbiased; the aggregator simply averages the reports.

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::SimRng;

/// Threshold above which HM starts mixing in the piecewise mechanism.
pub const HM_SWITCH_EPSILON: f64 = 0.61;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum MeanMechKind {
    Sr,
    Pm,
    Hm,
}

impl MeanMechKind {
    pub fn label(self) -> &'static str {
        match self {
            MeanMechKind::Sr => "sr",
            MeanMechKind::Pm => "pm",
            MeanMechKind::Hm => "hm",
        }
    }
}

impl std::str::FromStr for MeanMechKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sr" => Ok(MeanMechKind::Sr),
            "pm" => Ok(MeanMechKind::Pm),
            "hm" => Ok(MeanMechKind::Hm),
            other => Err(Error::config(format!("unknown mean mechanism '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanMechParams {
    pub kind: MeanMechKind,
    pub epsilon: f64,
    /// SR output magnitude (e^eps+1)/(e^eps-1).
    pub sr_level: f64,
    /// PM output bound (e^(eps/2)+1)/(e^(eps/2)-1).
    pub pm_bound: f64,
    /// Probability HM routes a report through PM.
    pub pm_weight: f64,
}

pub fn mean_params(kind: MeanMechKind, epsilon: f64) -> Result<MeanMechParams> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::config(format!("epsilon must be positive and finite, got {epsilon}")));
    }
    let e = epsilon.exp();
    let eh = (epsilon / 2.0).exp();
    let pm_weight = match kind {
        MeanMechKind::Sr => 0.0,
        MeanMechKind::Pm => 1.0,
        MeanMechKind::Hm => {
            if epsilon > HM_SWITCH_EPSILON {
                1.0 - (-epsilon / 2.0).exp()
            } else {
                0.0
            }
        }
    };
    Ok(MeanMechParams {
        kind,
        epsilon,
        sr_level: (e + 1.0) / (e - 1.0),
        pm_bound: (eh + 1.0) / (eh - 1.0),
        pm_weight,
    })
}

fn perturb_sr(params: &MeanMechParams, v: f64, rng: &mut SimRng) -> f64 {
    let c = params.sr_level;
    let p_high = 0.5 * (1.0 + v / c);
    if rng.random_bool(p_high.clamp(0.0, 1.0)) {
        c
    } else {
        -c
    }
}

fn perturb_pm(params: &MeanMechParams, v: f64, rng: &mut SimRng) -> f64 {
    let s = params.pm_bound;
    let l = (s + 1.0) / 2.0 * v - (s - 1.0) / 2.0;
    let r = l + s - 1.0;
    let eh = (params.epsilon / 2.0).exp();
    if rng.random_bool(eh / (eh + 1.0)) {
        rng.random_range(l..=r)
    } else {
        // uniform over [-s, l) U (r, s], total length s + 1
        let left = l + s;
        let u = rng.random_range(0.0..(s + 1.0));
        if u < left {
            -s + u
        } else {
            r + (u - left)
        }
    }
}

/// Perturb one value in [-1, 1].
pub fn mean_perturb(params: &MeanMechParams, v: f64, rng: &mut SimRng) -> Result<f64> {
    if !(-1.0..=1.0).contains(&v) {
        return Err(Error::Domain(format!("value {v} outside [-1, 1]")));
    }
    Ok(match params.kind {
        MeanMechKind::Sr => perturb_sr(params, v, rng),
        MeanMechKind::Pm => perturb_pm(params, v, rng),
        MeanMechKind::Hm => {
            if params.pm_weight > 0.0 && rng.random_bool(params.pm_weight) {
                perturb_pm(params, v, rng)
            } else {
                perturb_sr(params, v, rng)
            }
        }
    })
}

/// Largest value a report can legitimately take; fake reports beyond this
/// would be rejected by a range-checking aggregator.
pub fn report_bound(params: &MeanMechParams) -> f64 {
    match params.kind {
        MeanMechKind::Sr => params.sr_level,
        MeanMechKind::Pm => params.pm_bound,
        MeanMechKind::Hm => {
            if params.pm_weight > 0.0 {
                params.pm_bound.max(params.sr_level)
            } else {
                params.sr_level
            }
        }
    }
}

/// Worst-case per-report variance of HM over v in [-1, 1].
pub fn hm_worst_variance(epsilon: f64) -> f64 {
    let e = epsilon.exp();
    let eh = (epsilon / 2.0).exp();
    let sr_term = ((e + 1.0) / (e - 1.0)).powi(2);
    if epsilon <= HM_SWITCH_EPSILON {
        sr_term
    } else {
        (-epsilon / 2.0).exp() * (sr_term + (eh + 3.0) / (3.0 * (eh - 1.0) * (eh - 1.0)))
    }
}

/// Variance of the aggregated mean estimate from `n` HM reports.
pub fn mean_variance(n: f64, epsilon: f64) -> f64 {
    hm_worst_variance(epsilon) / n
}

/// Average the reports; `n` is the population the aggregator believes in.
pub fn mean_aggregate(reports_sum: f64, n: f64) -> Result<f64> {
    if !(n > 0.0) {
        return Err(Error::EmptyInput("mean aggregation over zero reports"));
    }
    Ok(reports_sum / n)
}
