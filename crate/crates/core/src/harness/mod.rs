//! Experiment harness: multi-seed runs, config grids, the protocol/attack
//! mismatch matrix, and the mean-estimation pipeline, all reported as
//! versioned CSV. Identical config and seed give bit-identical rows except
//! for the wall-clock column.

pub mod config;
mod grid;
mod mean_sim;
mod sim;

pub use config::{from_toml_str, ExperimentConfig, FakeBudget, TargetSelect};
pub use grid::{mismatch_matrix, run_grid, write_mismatch_csv, MismatchCell};
pub use mean_sim::{run_mean_experiment, MeanExperimentConfig, MeanSeedSummary};
pub use sim::{
    build_seed_data, resolve_fakes, scale_allocation, simulate_seed, AttackedSource,
    ParticipationPool, PhaseSnapshot, SeedData, SimOutput,
};

use crate::attack_orchestrators::bound_table;
use crate::defense::{accuracy_gain, mse_stream};
use crate::error::Result;

pub const RESULTS_HEADER_VERSION: &str = "# ldpstream results v1";
pub const MISMATCH_HEADER_VERSION: &str = "# ldpstream mismatch v1";

/// Cap the worker count of the data-parallel runner. Must be called before
/// the first parallel run; a no-op without the `parallel` feature.
pub fn set_threads(threads: usize) -> Result<()> {
    #[cfg(feature = "parallel")]
    {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| crate::error::Error::config(format!("worker pool: {e}")))?;
    }
    #[cfg(not(feature = "parallel"))]
    let _ = threads;
    Ok(())
}

/// Metrics of one seed of one experiment.
#[derive(Debug, Clone)]
pub struct SeedMetrics {
    pub seed: u64,
    pub m: u64,
    /// Realized fake fraction m / (m + n).
    pub beta_actual: f64,
    /// Mean squared distance of the deployed releases from the attack
    /// target stream.
    pub mse_attack: f64,
    /// Mean squared distance from the true frequency stream.
    pub mse_utility: f64,
    /// Fraction of dissimilarity manipulations that steered the protocol
    /// into the intended strategy; None when no fake ever reached a
    /// dissimilarity collection.
    pub dma_success_rate: Option<f64>,
    /// Utility recovered by the defense (paired against an identically
    /// seeded run without release substitution); None without a defense.
    pub ag: Option<f64>,
    /// Predicted gap interval for matched attacks; None for mismatched or
    /// un-analyzed pairings.
    pub bound: Option<(f64, f64)>,
    pub wall_ms: u64,
    pub warning: Option<String>,
}

/// One experiment over all its seeds.
#[derive(Debug)]
pub struct RunRecord {
    pub config: ExperimentConfig,
    pub per_seed: Vec<SeedMetrics>,
    pub mean_mse_attack: f64,
    pub mean_mse_utility: f64,
    pub mean_dma_success_rate: Option<f64>,
    pub mean_ag: Option<f64>,
    pub bound: Option<(f64, f64)>,
    /// Full traces of the first seed, for CSV export and inspection.
    pub exemplar: Option<SimOutput>,
}

fn run_one_seed(cfg: &ExperimentConfig, seed: u64) -> Result<(SeedMetrics, SimOutput)> {
    let start = std::time::Instant::now();
    let data = build_seed_data(cfg, seed)?;
    let mut run = simulate_seed(cfg, seed, &data, true)?;
    let ag = if cfg.defense.is_some() {
        let baseline = simulate_seed(cfg, seed, &data, false)?;
        fill_running_gain(&mut run, &baseline, &data.truth);
        Some(accuracy_gain(&baseline.releases, &run.releases, &data.truth)?)
    } else {
        None
    };
    let mse_attack = mse_stream(&run.releases, &data.targets)?;
    let mse_utility = mse_stream(&run.releases, &data.truth)?;
    let dma_success_rate =
        (run.dma_launched > 0).then(|| run.dma_successes as f64 / run.dma_launched as f64);
    let matched = cfg.assumed_protocol.map_or(true, |a| a == cfg.protocol);
    let bound = match (cfg.attack, matched) {
        (Some(attack), true) => bound_table(
            cfg.protocol,
            attack,
            cfg.fo,
            cfg.d,
            run.m as f64,
            cfg.n as f64,
            cfg.epsilon,
            cfg.w,
            Some(&data.targets),
        )
        .ok()
        .map(|b| (b.lo(), b.hi())),
        _ => None,
    };
    let metrics = SeedMetrics {
        seed,
        m: run.m,
        beta_actual: run.m as f64 / (run.m + cfg.n) as f64,
        mse_attack,
        mse_utility,
        dma_success_rate,
        ag,
        bound,
        wall_ms: start.elapsed().as_millis() as u64,
        warning: run.warning.clone(),
    };
    Ok((metrics, run))
}

/// Backfill the running utility gain into the defense trace, comparing
/// prefix MSEs of the deployed releases against the paired baseline.
fn fill_running_gain(run: &mut SimOutput, baseline: &SimOutput, truth: &[Vec<f64>]) {
    if run.defense_trace.is_empty() {
        return;
    }
    let step_error = |rel: &[Vec<f64>]| -> Vec<f64> {
        rel.iter()
            .zip(truth)
            .map(|(r, tr)| {
                r.iter().zip(tr).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / r.len() as f64
            })
            .collect()
    };
    let on = step_error(&run.releases);
    let off = step_error(&baseline.releases);
    let mut acc_on = 0.0;
    let mut acc_off = 0.0;
    let mut prefix_gain = vec![0.0; on.len()];
    for t in 0..on.len() {
        acc_on += on[t];
        acc_off += off[t];
        prefix_gain[t] = (acc_off - acc_on) / (t + 1) as f64;
    }
    for row in &mut run.defense_trace {
        row.ag_running = prefix_gain[row.t];
    }
}

/// Run one experiment across all its seeds (in parallel when the
/// `parallel` feature is on) and aggregate.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunRecord> {
    cfg.validate()?;

    #[cfg(feature = "parallel")]
    let outputs: Result<Vec<(SeedMetrics, SimOutput)>> = {
        use rayon::prelude::*;
        cfg.seeds.par_iter().map(|&seed| run_one_seed(cfg, seed)).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let outputs: Result<Vec<(SeedMetrics, SimOutput)>> =
        cfg.seeds.iter().map(|&seed| run_one_seed(cfg, seed)).collect();

    let (per_seed, sims): (Vec<SeedMetrics>, Vec<SimOutput>) = outputs?.into_iter().unzip();
    let count = per_seed.len() as f64;
    let mean_mse_attack = per_seed.iter().map(|s| s.mse_attack).sum::<f64>() / count;
    let mean_mse_utility = per_seed.iter().map(|s| s.mse_utility).sum::<f64>() / count;
    let opt_mean = |values: Vec<f64>| {
        (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
    };
    let mean_dma_success_rate =
        opt_mean(per_seed.iter().filter_map(|s| s.dma_success_rate).collect());
    let mean_ag = opt_mean(per_seed.iter().filter_map(|s| s.ag).collect());
    let bounds: Vec<(f64, f64)> = per_seed.iter().filter_map(|s| s.bound).collect();
    let bound = (bounds.len() == per_seed.len() && !bounds.is_empty()).then(|| {
        let k = bounds.len() as f64;
        (
            bounds.iter().map(|b| b.0).sum::<f64>() / k,
            bounds.iter().map(|b| b.1).sum::<f64>() / k,
        )
    });
    Ok(RunRecord {
        config: cfg.clone(),
        per_seed,
        mean_mse_attack,
        mean_mse_utility,
        mean_dma_success_rate,
        mean_ag,
        bound,
        exemplar: sims.into_iter().next(),
    })
}

/// Write run records as CSV: a versioned comment line, a header, one row
/// per seed, then one aggregate row per record with seed column "mean"
/// (the only rows carrying the predicted bounds).
pub fn write_results_csv<W: std::io::Write>(mut out: W, records: &[RunRecord]) -> Result<()> {
    writeln!(out, "{RESULTS_HEADER_VERSION}")?;
    writeln!(
        out,
        "run_id,seed,protocol,attack,epsilon,w,beta,target,knowledge,d,n,T,\
         mse_attack,mse_utility,dma_success_rate,ag,bound_lo,bound_hi,wall_ms"
    )?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for (idx, rec) in records.iter().enumerate() {
        let cfg = &rec.config;
        let prefix = |seed: String, beta: f64| -> Vec<String> {
            vec![
                format!("r{idx:03}"),
                seed,
                cfg.protocol.label().to_string(),
                cfg.attack_label().to_string(),
                cfg.epsilon.to_string(),
                cfg.w.to_string(),
                beta.to_string(),
                cfg.target.label().to_string(),
                cfg.knowledge.label(),
                cfg.d.to_string(),
                cfg.n.to_string(),
                cfg.t_len.to_string(),
            ]
        };
        for s in &rec.per_seed {
            let mut row = prefix(s.seed.to_string(), s.beta_actual);
            row.extend([
                s.mse_attack.to_string(),
                s.mse_utility.to_string(),
                opt(s.dma_success_rate),
                opt(s.ag),
                String::new(),
                String::new(),
                s.wall_ms.to_string(),
            ]);
            writeln!(out, "{}", row.join(","))?;
        }
        let k = rec.per_seed.len() as f64;
        let mean_beta = rec.per_seed.iter().map(|s| s.beta_actual).sum::<f64>() / k;
        let mean_wall =
            (rec.per_seed.iter().map(|s| s.wall_ms).sum::<u64>() as f64 / k).round() as u64;
        let mut row = prefix("mean".into(), mean_beta);
        row.extend([
            rec.mean_mse_attack.to_string(),
            rec.mean_mse_utility.to_string(),
            opt(rec.mean_dma_success_rate),
            opt(rec.mean_ag),
            opt(rec.bound.map(|b| b.0)),
            opt(rec.bound.map(|b| b.1)),
            mean_wall.to_string(),
        ]);
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}
