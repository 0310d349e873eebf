//! Config grids and the protocol-mismatch matrix.

use super::config::ExperimentConfig;
use super::sim::{build_seed_data, simulate_seed};
use super::{run_experiment, RunRecord, MISMATCH_HEADER_VERSION};
use crate::attack_orchestrators::AttackKind;
use crate::defense::mse_stream;
use crate::error::{Error, Result};
use crate::stream_protocols::ProtocolKind;

/// Run a list of experiments in order. Each experiment fans its seeds out
/// in parallel already, so the outer loop stays sequential and the output
/// order matches the input order exactly.
pub fn run_grid(configs: &[ExperimentConfig]) -> Result<Vec<RunRecord>> {
    configs.iter().map(run_experiment).collect()
}

/// One cell of the mismatch matrix: an attack tuned for `assumed` running
/// against `actual`.
#[derive(Debug, Clone)]
pub struct MismatchCell {
    pub actual: ProtocolKind,
    pub assumed: ProtocolKind,
    pub attack: AttackKind,
    pub mse_attack_mean: f64,
    pub diagonal: bool,
}

/// Cross every actual protocol with every assumed protocol for each attack
/// kind, averaging the attack MSE over the base config's seeds. All cells
/// of one seed share the same generated stream, so the cells differ only
/// in protocol arithmetic, never in data.
pub fn mismatch_matrix(
    protocols: &[ProtocolKind],
    attacks: &[AttackKind],
    base: &ExperimentConfig,
) -> Result<Vec<MismatchCell>> {
    base.validate()?;
    if protocols.is_empty() || attacks.is_empty() {
        return Err(Error::EmptyInput("mismatch matrix needs protocols and attacks"));
    }
    let mut cell_defs = Vec::new();
    for &attack in attacks {
        for &actual in protocols {
            for &assumed in protocols {
                cell_defs.push((attack, actual, assumed));
            }
        }
    }

    let per_seed = |&seed: &u64| -> Result<Vec<f64>> {
        let data = build_seed_data(base, seed)?;
        cell_defs
            .iter()
            .map(|&(attack, actual, assumed)| {
                let mut cfg = base.clone();
                cfg.protocol = actual;
                cfg.assumed_protocol = Some(assumed);
                cfg.attack = Some(attack);
                let run = simulate_seed(&cfg, seed, &data, true)?;
                mse_stream(&run.releases, &data.targets)
            })
            .collect()
    };

    #[cfg(feature = "parallel")]
    let seed_rows: Result<Vec<Vec<f64>>> = {
        use rayon::prelude::*;
        base.seeds.par_iter().map(per_seed).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let seed_rows: Result<Vec<Vec<f64>>> = base.seeds.iter().map(per_seed).collect();

    let seed_rows = seed_rows?;
    let count = seed_rows.len() as f64;
    Ok(cell_defs
        .iter()
        .enumerate()
        .map(|(i, &(attack, actual, assumed))| MismatchCell {
            actual,
            assumed,
            attack,
            mse_attack_mean: seed_rows.iter().map(|row| row[i]).sum::<f64>() / count,
            diagonal: actual == assumed,
        })
        .collect())
}

pub fn write_mismatch_csv<W: std::io::Write>(mut out: W, cells: &[MismatchCell]) -> Result<()> {
    writeln!(out, "{MISMATCH_HEADER_VERSION}")?;
    writeln!(out, "attack,actual,assumed,mse_attack,diagonal")?;
    for c in cells {
        writeln!(
            out,
            "{},{},{},{},{}",
            c.attack.label(),
            c.actual.label(),
            c.assumed.label(),
            c.mse_attack_mean,
            c.diagonal
        )?;
    }
    Ok(())
}
