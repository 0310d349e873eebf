//! Acceptance suite: end-to-end checks pinning the crate's quantitative
//! guarantees at stated tolerances and time budgets. Each test prints the
//! measurements behind its pass/fail line; run with `--nocapture` to see
//! them.

use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::Rng;

use ldpstream_core::attack_core::{
    idma_extreme, input_mixture_objective, ipma_continuous, ipma_gap, ipma_ideal_gap, ipma_solve,
    ipma_sufficient_m, odma_extreme, opma_continuous, opma_gap, opma_ideal_gap, opma_solve,
    opma_sufficient_m, output_l1_objective, Direction, Knowledge,
};
use ldpstream_core::attack_orchestrators::{bound_table, cgm_attack, AttackKind, KnowledgeMode};
use ldpstream_core::data_targets::TargetKind;
use ldpstream_core::defense::{mse_stream, DefenseConfig};
use ldpstream_core::freq_oracle::{
    fo_aggregate_counts, fo_params, fo_variance, perturb_counts, FoKind, FoParams,
};
use ldpstream_core::harness::{
    build_seed_data, mismatch_matrix, run_experiment, run_mean_experiment, simulate_seed,
    ExperimentConfig, FakeBudget, MeanExperimentConfig, TargetSelect,
};
use ldpstream_core::rng::{lane, substream, SimRng};
use ldpstream_core::stream_protocols::{window_budget_audit, ProtocolKind, StepOutcome};
use ldpstream_core::util::{largest_remainder, msd};

fn rand_simplex(rng: &mut SimRng, d: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..d).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let s: f64 = v.iter().sum();
    for x in &mut v {
        *x /= s;
    }
    v
}

fn to_f64(counts: &[u64]) -> Vec<f64> {
    counts.iter().map(|&c| c as f64).collect()
}

/// Visit every way of writing `m` as an ordered sum of `d` non-negative
/// parts (the feasible integer points of the sum-constrained solvers).
fn for_each_composition(d: usize, m: u64, f: &mut dyn FnMut(&[u64])) {
    fn rec(buf: &mut [u64], idx: usize, left: u64, f: &mut dyn FnMut(&[u64])) {
        if idx + 1 == buf.len() {
            buf[idx] = left;
            f(buf);
            return;
        }
        for take in 0..=left {
            buf[idx] = take;
            rec(buf, idx + 1, left - take, f);
        }
    }
    let mut buf = vec![0u64; d];
    rec(&mut buf, 0, m, f);
}

/// Visit every point of the box {0..=m}^d (the feasible integer points of
/// the per-item-capped solvers without a sum constraint).
fn for_each_box(d: usize, m: u64, f: &mut dyn FnMut(&[u64])) {
    let mut buf = vec![0u64; d];
    loop {
        f(&buf);
        let mut k = 0;
        while k < d && buf[k] == m {
            buf[k] = 0;
            k += 1;
        }
        if k == d {
            return;
        }
        buf[k] += 1;
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn std_err(xs: &[f64]) -> f64 {
    let mu = mean(xs);
    let var = xs.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (xs.len() as f64 - 1.0);
    (var / xs.len() as f64).sqrt()
}

/// Both publication solvers against exhaustive search over their feasible
/// integer points: the continuous stage may never be beaten by any integer
/// point, and the rounded stage must stay within the rounding slack.
#[test]
fn acceptance_01_solvers_match_brute_force() {
    let start = Instant::now();
    let mut rng = substream(101, lane::ATTACK);
    for i in 0..100u32 {
        let d = rng.random_range(2..=4usize);
        let m = rng.random_range(1..=12u64);
        let n: f64 = rng.random_range(20.0..300.0);
        let f = rand_simplex(&mut rng, d);
        let t = rand_simplex(&mut rng, d);
        let kn = Knowledge::new(n, f.clone()).unwrap();

        // Input side. The integer compositions are feasible points of the
        // continuous relaxation, so the projection's objective must lower-
        // bound the exhaustive optimum; rounding moves each mixture
        // coordinate by less than 1/(n+m).
        let x = ipma_continuous(&kn, &t, m).unwrap();
        let obj_cont = input_mixture_objective(&x, n, &f, &t, m);
        let mut best = f64::INFINITY;
        for_each_composition(d, m, &mut |c| {
            best = best.min(input_mixture_objective(&to_f64(c), n, &f, &t, m));
        });
        assert!(
            obj_cont <= best + 1e-9,
            "instance {i}: continuous input objective {obj_cont} above exhaustive best {best}"
        );
        let alloc = ipma_solve(&kn, &t, m).unwrap();
        let obj_int = input_mixture_objective(&to_f64(&alloc.counts), n, &f, &t, m);
        assert!(
            obj_int >= best - 1e-12,
            "instance {i}: integer input objective {obj_int} beats exhaustive best {best}"
        );
        let h = 1.0 / (n + m as f64);
        assert!(
            obj_int <= obj_cont + 2.0 * h * obj_cont.sqrt() + h * h + 1e-12,
            "instance {i}: rounding slack exceeded: {obj_int} vs continuous {obj_cont}"
        );

        // Output side: kRR couples the items through the sum constraint
        // (compositions), OUE caps each item independently (box). OUE
        // rounding is per-item optimal, so it must match the exhaustive
        // optimum exactly; kRR rounding moves at most d count units of L1.
        let kind = if i % 2 == 0 { FoKind::Krr } else { FoKind::Oue };
        let eps = rng.random_range(0.5..2.0);
        let fo = fo_params(kind, eps, d).unwrap();
        let xo = opma_continuous(&kn, &t, m, &fo).unwrap();
        let obj_cont_o = output_l1_objective(&xo, &kn, &t, m, &fo);
        let mut best_o = f64::INFINITY;
        let mut visit = |c: &[u64]| {
            best_o = best_o.min(output_l1_objective(&to_f64(c), &kn, &t, m, &fo));
        };
        match kind {
            FoKind::Krr => for_each_composition(d, m, &mut visit),
            FoKind::Oue => for_each_box(d, m, &mut visit),
            FoKind::Ada => unreachable!(),
        }
        assert!(
            obj_cont_o <= best_o + 1e-9,
            "instance {i}: continuous output objective {obj_cont_o} above exhaustive best {best_o}"
        );
        let alloc_o = opma_solve(&kn, &t, m, &fo).unwrap();
        let obj_int_o = output_l1_objective(&to_f64(&alloc_o.counts), &kn, &t, m, &fo);
        assert!(
            obj_int_o >= best_o - 1e-9,
            "instance {i}: integer output objective {obj_int_o} beats exhaustive best {best_o}"
        );
        let slack = match kind {
            FoKind::Krr => d as f64,
            _ => 0.0,
        };
        assert!(
            obj_int_o <= best_o + slack + 1e-9,
            "instance {i}: output rounding slack exceeded: {obj_int_o} vs best {best_o}"
        );
    }
    let elapsed = start.elapsed();
    println!("100 input + 100 output instances verified in {elapsed:.2?}");
    assert!(elapsed < Duration::from_secs(10), "brute-force check too slow: {elapsed:?}");
}

/// With the smallest fake population that makes the target exactly
/// reachable, the Monte Carlo manipulation gap collapses to the closed-form
/// floor: estimator variance at n+m for input poisoning, shrunk genuine
/// variance for output poisoning.
#[test]
fn acceptance_02_sufficient_fakes_reach_ideal_gap() {
    let start = Instant::now();
    let mut rng = substream(202, lane::ATTACK);
    let eps = 0.5;
    let reps = 2000;
    for i in 0..50u32 {
        let d = 3 + (i as usize % 2);
        let kind = if (i / 2) % 2 == 0 { FoKind::Krr } else { FoKind::Oue };
        let n: u64 = rng.random_range(1000..3000);
        let raw = rand_simplex(&mut rng, d);
        let scaled: Vec<f64> = raw.iter().map(|x| x * n as f64).collect();
        let counts = largest_remainder(&scaled, n, n);
        let f: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
        let mut t: Vec<f64> = (0..d).map(|_| rng.random_range(0.1..0.9)).collect();
        let s: f64 = t.iter().sum();
        for x in &mut t {
            *x /= s;
        }
        let fo = fo_params(kind, eps, d).unwrap();
        let kn = Knowledge::new(n as f64, f.clone()).unwrap();

        // Input poisoning: fakes are perturbed along with everyone else.
        let m = ipma_sufficient_m(n as f64, &f, &t).expect("interior target is reachable");
        let alloc = ipma_solve(&kn, &t, m).unwrap();
        let mut combined = counts.clone();
        for (c, &a) in combined.iter_mut().zip(&alloc.counts) {
            *c += a;
        }
        let total = n + m;
        let mut acc = 0.0;
        for _ in 0..reps {
            let support = perturb_counts(&fo, &combined, &mut rng).unwrap();
            let est = fo_aggregate_counts(&fo, &to_f64(&support), total as f64).unwrap();
            acc += msd(&est, &t);
        }
        let gap_in = acc / reps as f64;
        let ideal_in = ipma_ideal_gap(kind, m as f64, n as f64, eps, d);
        println!(
            "instance {i} {kind:?} d={d} n={n} m_in={m}: mc {gap_in:.4e} ideal {ideal_in:.4e}"
        );
        assert!(
            (gap_in - ideal_in).abs() <= 0.10 * ideal_in,
            "instance {i}: input gap {gap_in} not within 10% of {ideal_in}"
        );

        // Output poisoning: only genuine reports are perturbed, the fake
        // support counts enter verbatim.
        let m_o = opma_sufficient_m(n as f64, &f, &t, &fo).expect("interior target is reachable");
        let alloc_o = opma_solve(&kn, &t, m_o, &fo).unwrap();
        let mut acc_o = 0.0;
        for _ in 0..reps {
            let support = perturb_counts(&fo, &counts, &mut rng).unwrap();
            let joined: Vec<f64> = support
                .iter()
                .zip(&alloc_o.counts)
                .map(|(&g, &a)| (g + a) as f64)
                .collect();
            let est = fo_aggregate_counts(&fo, &joined, (n + m_o) as f64).unwrap();
            acc_o += msd(&est, &t);
        }
        let gap_out = acc_o / reps as f64;
        let ideal_out = opma_ideal_gap(kind, m_o as f64, n as f64, eps, d);
        println!(
            "instance {i} {kind:?} d={d} n={n} m_out={m_o}: mc {gap_out:.4e} ideal {ideal_out:.4e}"
        );
        assert!(
            (gap_out - ideal_out).abs() <= 0.10 * ideal_out,
            "instance {i}: output gap {gap_out} not within 10% of {ideal_out}"
        );
    }
    let elapsed = start.elapsed();
    println!("50 sufficiency instances in {elapsed:.2?}");
    assert!(elapsed < Duration::from_secs(120), "sufficiency check too slow: {elapsed:?}");
}

/// Frequency-oracle estimates are unbiased and their averaged per-item
/// variance matches the closed form. A point-mass population makes the
/// closed form exact, so the only slack needed is Monte Carlo noise.
#[test]
fn acceptance_03_frequency_oracle_moments() {
    let start = Instant::now();
    let n: u64 = 10_000;
    let reps = 10_000usize;
    let mut rng = substream(303, lane::PROTOCOL);
    for kind in [FoKind::Krr, FoKind::Oue] {
        for eps in [0.5, 1.0, 2.0] {
            for d in [2usize, 8] {
                let fo = fo_params(kind, eps, d).unwrap();
                let mut truth = vec![0u64; d];
                truth[0] = n;
                let f: Vec<f64> = (0..d).map(|k| if k == 0 { 1.0 } else { 0.0 }).collect();
                let mut sum = vec![0.0; d];
                let mut sumsq = vec![0.0; d];
                for _ in 0..reps {
                    let support = perturb_counts(&fo, &truth, &mut rng).unwrap();
                    let est = fo_aggregate_counts(&fo, &to_f64(&support), n as f64).unwrap();
                    for k in 0..d {
                        sum[k] += est[k];
                        sumsq[k] += est[k] * est[k];
                    }
                }
                let mut pooled = 0.0;
                for k in 0..d {
                    let mu = sum[k] / reps as f64;
                    let var = (sumsq[k] - reps as f64 * mu * mu) / (reps as f64 - 1.0);
                    let se = (var / reps as f64).sqrt();
                    assert!(
                        (mu - f[k]).abs() <= 4.0 * se,
                        "{kind:?} eps={eps} d={d} item {k}: mean {mu} vs truth {} (se {se})",
                        f[k]
                    );
                    pooled += var / d as f64;
                }
                let formula = fo_variance(kind, n as f64, eps, d);
                println!("{kind:?} eps={eps} d={d}: pooled var {pooled:.4e} formula {formula:.4e}");
                assert!(
                    (pooled - formula).abs() <= 0.10 * formula,
                    "{kind:?} eps={eps} d={d}: variance {pooled} not within 10% of {formula}"
                );
            }
        }
    }
    let elapsed = start.elapsed();
    println!("12 oracle cells in {elapsed:.2?}");
    assert!(elapsed < Duration::from_secs(120), "oracle moment check too slow: {elapsed:?}");
}

/// Per-item weights of the linearized dissimilarity push: expanding the
/// expected squared deviation of the next estimate from the previous
/// release in the fake support counts and dropping allocation-independent
/// terms leaves the linear form sum_k w_k * m_k.
fn dissimilarity_push_weights(prev: &[f64], n: f64, m: u64, fo: &FoParams) -> Vec<f64> {
    let total = n + m as f64;
    let pq = fo.p - fo.q;
    prev.iter()
        .map(|&r| (-2.0 * r * total * pq - 2.0 * total * fo.q) / (pq * pq * total * total))
        .collect()
}

/// The maximizing dissimilarity manipulations are exact optimizers: the
/// input variant of the true quadratic spread objective over all integer
/// compositions, the output variant of its linearized lower bound.
#[test]
fn acceptance_04_dissimilarity_extremes_optimal() {
    let start = Instant::now();
    let mut rng = substream(404, lane::ATTACK);
    let d = 3;
    for i in 0..50u32 {
        let m = rng.random_range(1..=5u64);
        let n: f64 = rng.random_range(50.0..500.0);
        let f = rand_simplex(&mut rng, d);
        let prev = rand_simplex(&mut rng, d);
        let kn = Knowledge::new(n, f.clone()).unwrap();

        let alloc = idma_extreme(&kn, &prev, m, Direction::Maximize).unwrap();
        let got = input_mixture_objective(&to_f64(&alloc.counts), n, &f, &prev, m);
        let mut best = f64::NEG_INFINITY;
        for_each_composition(d, m, &mut |c| {
            best = best.max(input_mixture_objective(&to_f64(c), n, &f, &prev, m));
        });
        assert!(
            got >= best - 1e-9,
            "instance {i}: input extreme {got} below exhaustive max {best}"
        );

        for kind in [FoKind::Krr, FoKind::Oue] {
            let eps = rng.random_range(0.5..2.0);
            let fo = fo_params(kind, eps, d).unwrap();
            let alloc = odma_extreme(&kn, &prev, m, Direction::Maximize, &fo).unwrap();
            let w = dissimilarity_push_weights(&prev, n, m, &fo);
            let lin = |c: &[u64]| c.iter().zip(&w).map(|(&x, &wk)| x as f64 * wk).sum::<f64>();
            let got = lin(&alloc.counts);
            let mut best = f64::NEG_INFINITY;
            for_each_composition(d, m, &mut |c| {
                best = best.max(lin(c));
            });
            assert!(
                got >= best - 1e-9,
                "instance {i} {kind:?}: output extreme {got} below exhaustive max {best}"
            );
        }
    }
    let elapsed = start.elapsed();
    println!("50 extreme-manipulation instances in {elapsed:.2?}");
    assert!(elapsed < Duration::from_secs(30), "extreme check too slow: {elapsed:?}");
}

/// The closed-form gap floors respond to resources the right way: more
/// privacy budget never hurts the attacker, and scaling both populations
/// strictly shrinks the floor.
#[test]
fn acceptance_05_gap_monotonicity() {
    let mut rng = substream(505, lane::ATTACK);
    let eps_grid = [0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0, 4.0];
    for i in 0..50u32 {
        let d = rng.random_range(2..=4usize);
        let kind = if i % 2 == 0 { FoKind::Krr } else { FoKind::Oue };
        let n: f64 = rng.random_range(100.0..5000.0);
        let m = rng.random_range(1..500u64);
        let mf = m as f64;

        let mut prev_in = f64::INFINITY;
        let mut prev_out = f64::INFINITY;
        for &e in &eps_grid {
            let gi = ipma_ideal_gap(kind, mf, n, e, d);
            let go = opma_ideal_gap(kind, mf, n, e, d);
            assert!(gi <= prev_in, "instance {i}: input floor rose at eps={e}");
            assert!(go <= prev_out, "instance {i}: output floor rose at eps={e}");
            prev_in = gi;
            prev_out = go;
        }

        // Full gap estimates of fixed solved allocations: the bias term is
        // constant, so the ordering must survive the variance part.
        let f = rand_simplex(&mut rng, d);
        let t = rand_simplex(&mut rng, d);
        let kn = Knowledge::new(n, f.clone()).unwrap();
        let alloc = ipma_solve(&kn, &t, m).unwrap();
        let fo1 = fo_params(kind, 1.0, d).unwrap();
        let alloc_o = opma_solve(&kn, &t, m, &fo1).unwrap();
        let mut prev_in = f64::INFINITY;
        let mut prev_out = f64::INFINITY;
        for &e in &eps_grid {
            let gi = ipma_gap(&alloc, n, &f, &t, kind, e).value();
            let go = opma_gap(&alloc_o, n, &f, &t, &fo1, e).value();
            assert!(gi <= prev_in, "instance {i}: solved input gap rose at eps={e}");
            assert!(go <= prev_out, "instance {i}: solved output gap rose at eps={e}");
            prev_in = gi;
            prev_out = go;
        }

        for alpha in [2.0, 4.0] {
            for &e in &eps_grid {
                assert!(
                    ipma_ideal_gap(kind, alpha * mf, alpha * n, e, d)
                        < ipma_ideal_gap(kind, mf, n, e, d),
                    "instance {i}: input floor did not shrink at alpha={alpha}, eps={e}"
                );
                assert!(
                    opma_ideal_gap(kind, alpha * mf, alpha * n, e, d)
                        < opma_ideal_gap(kind, mf, n, e, d),
                    "instance {i}: output floor did not shrink at alpha={alpha}, eps={e}"
                );
            }
        }
    }
    println!("50 monotonicity instances verified");
}

struct AttackCell {
    protocol: ProtocolKind,
    attack: AttackKind,
    w: usize,
    epsilon: f64,
    mean_m: f64,
    success: f64,
    mean_gap: f64,
    se: f64,
    lo: f64,
    hi: f64,
}

struct AttackGrid {
    cells: Vec<AttackCell>,
    traces: Vec<(ProtocolKind, f64, u64, usize, Vec<StepOutcome>)>,
    elapsed: Duration,
}

/// Per-division privacy budgets for the uniform-attack grid. The closed
/// forms assume the dissimilarity manipulation forces a publication every
/// step, which needs a per-step dissimilarity estimate sharp enough to
/// resolve the manipulated distance, while the sampled-population forms
/// also ignore the composition noise of drawing each publication cohort,
/// which shrinks relative to estimator variance as the budget drops. The
/// absorbing protocols get no slack from their interval, so each division
/// runs where both effects are inside Monte Carlo error.
const BD_EPSILON: f64 = 2.0;
const PD_EPSILON: f64 = 0.4;

fn attack_grid() -> &'static AttackGrid {
    static GRID: OnceLock<AttackGrid> = OnceLock::new();
    GRID.get_or_init(|| {
        let start = Instant::now();
        let mut base = ExperimentConfig::default();
        base.t_len = 200;
        base.fakes = FakeBudget::Sufficient;
        base.target = TargetSelect::Kind(TargetKind::Uniform);
        base.knowledge = KnowledgeMode::Full;
        base.seeds = (0..20).collect();

        // One generated stream per seed, shared by every cell: the cells
        // differ only in protocol arithmetic and attack side.
        let data: Vec<_> = base
            .seeds
            .iter()
            .map(|&s| build_seed_data(&base, s).expect("stream generation"))
            .collect();

        let mut cells = Vec::new();
        let mut traces = Vec::new();
        for protocol in [ProtocolKind::Lbd, ProtocolKind::Lba, ProtocolKind::Lpd, ProtocolKind::Lpa]
        {
            let epsilon = if protocol.is_budget_division() { BD_EPSILON } else { PD_EPSILON };
            for attack in [AttackKind::Iua, AttackKind::Oua] {
                for w in [5usize, 20] {
                    let mut cfg = base.clone();
                    cfg.protocol = protocol;
                    cfg.attack = Some(attack);
                    cfg.epsilon = epsilon;
                    cfg.w = w;
                    let mut gaps = Vec::new();
                    let mut los = Vec::new();
                    let mut his = Vec::new();
                    let mut ms = Vec::new();
                    let mut succ = Vec::new();
                    for (i, &seed) in base.seeds.iter().enumerate() {
                        let out = simulate_seed(&cfg, seed, &data[i], true).expect("simulation");
                        gaps.push(mse_stream(&out.releases, &data[i].targets).unwrap());
                        let b = bound_table(
                            protocol,
                            attack,
                            cfg.fo,
                            cfg.d,
                            out.m as f64,
                            cfg.n as f64,
                            epsilon,
                            w,
                            None,
                        )
                        .expect("closed form exists for this pairing");
                        los.push(b.lo());
                        his.push(b.hi());
                        ms.push(out.m as f64);
                        if out.dma_launched > 0 {
                            succ.push(out.dma_successes as f64 / out.dma_launched as f64);
                        }
                        traces.push((protocol, epsilon, cfg.n + out.m, w, out.trace));
                    }
                    cells.push(AttackCell {
                        protocol,
                        attack,
                        w,
                        epsilon,
                        mean_m: mean(&ms),
                        success: if succ.is_empty() { f64::NAN } else { mean(&succ) },
                        mean_gap: mean(&gaps),
                        se: std_err(&gaps),
                        lo: mean(&los),
                        hi: mean(&his),
                    });
                }
            }
        }
        AttackGrid { cells, traces, elapsed: start.elapsed() }
    })
}

/// Uniform-schedule attacks with a sufficient fake population land inside
/// their closed-form gap envelope; the decaying protocols carry an interval
/// (first-publication floor to full-decay ceiling), the absorbing ones a
/// point value, all up to Monte Carlo error on 20 seeds.
#[test]
fn acceptance_06_uniform_attacks_match_closed_form() {
    let grid = attack_grid();
    for c in &grid.cells {
        println!(
            "{} {} w={} eps={}: gap {:.4e} envelope [{:.4e}, {:.4e}] se {:.2e} m {:.0} force {:.3}",
            c.protocol.label(),
            c.attack.label(),
            c.w,
            c.epsilon,
            c.mean_gap,
            c.lo,
            c.hi,
            c.se,
            c.mean_m,
            c.success,
        );
    }
    for c in &grid.cells {
        assert!(
            c.mean_gap >= c.lo - 3.0 * c.se,
            "{} {} w={}: gap {:.4e} below envelope floor {:.4e} - 3se",
            c.protocol.label(),
            c.attack.label(),
            c.w,
            c.mean_gap,
            c.lo,
        );
        assert!(
            c.mean_gap <= c.hi + 3.0 * c.se,
            "{} {} w={}: gap {:.4e} above envelope ceiling {:.4e} + 3se",
            c.protocol.label(),
            c.attack.label(),
            c.w,
            c.mean_gap,
            c.hi,
        );
    }
    println!("16 cells in {:.2?}", grid.elapsed);
    assert!(grid.elapsed < Duration::from_secs(600), "attack grid too slow: {:?}", grid.elapsed);
}

/// The adaptive attack never loses to its fixed-schedule components, and
/// output poisoning never loses to input poisoning under the same schedule.
#[test]
fn acceptance_07_attack_orderings() {
    let base = ExperimentConfig::default();
    let run = |attack: AttackKind, target: TargetSelect| {
        let mut cfg = base.clone();
        cfg.attack = Some(attack);
        cfg.target = target;
        run_experiment(&cfg).expect("experiment").mean_mse_attack
    };

    // The literal default configuration doubles as the throughput check.
    let t0 = Instant::now();
    let oaa = run(AttackKind::Oaa, base.target.clone());
    let default_elapsed = t0.elapsed();
    println!("default configuration ran in {default_elapsed:.2?}");
    assert!(
        default_elapsed < Duration::from_secs(60),
        "default configuration too slow: {default_elapsed:?}"
    );

    let iaa = run(AttackKind::Iaa, base.target.clone());
    let iua = run(AttackKind::Iua, base.target.clone());
    let oua = run(AttackKind::Oua, base.target.clone());
    let isa = run(AttackKind::Isa, base.target.clone());
    let osa = run(AttackKind::Osa, base.target.clone());
    println!("default target: iua {iua:.4e} oua {oua:.4e} isa {isa:.4e} osa {osa:.4e} iaa {iaa:.4e} oaa {oaa:.4e}");
    assert!(oaa <= iaa, "adaptive output {oaa} should not lose to adaptive input {iaa}");
    assert!(oua <= iua, "uniform output {oua} should not lose to uniform input {iua}");
    assert!(osa <= isa, "sampling output {osa} should not lose to sampling input {isa}");

    // On a constant target the uniform schedule wastes nothing, yet the
    // adaptive attack must still match or beat it.
    let uni = TargetSelect::Kind(TargetKind::Uniform);
    let iua_u = run(AttackKind::Iua, uni.clone());
    let iaa_u = run(AttackKind::Iaa, uni.clone());
    let oua_u = run(AttackKind::Oua, uni.clone());
    let oaa_u = run(AttackKind::Oaa, uni);
    println!("uniform target: iua {iua_u:.4e} iaa {iaa_u:.4e} oua {oua_u:.4e} oaa {oaa_u:.4e}");
    assert!(iaa_u <= iua_u, "adaptive input {iaa_u} lost to uniform input {iua_u}");
    assert!(oaa_u <= oua_u, "adaptive output {oaa_u} lost to uniform output {oua_u}");

    // On a spiky target the sampling schedule is the natural heuristic,
    // and the adaptive attack must match or beat that too.
    let pulse = TargetSelect::Kind(TargetKind::Pulse);
    let isa_p = run(AttackKind::Isa, pulse.clone());
    let iaa_p = run(AttackKind::Iaa, pulse.clone());
    let osa_p = run(AttackKind::Osa, pulse.clone());
    let oaa_p = run(AttackKind::Oaa, pulse);
    println!("pulse target: isa {isa_p:.4e} iaa {iaa_p:.4e} osa {osa_p:.4e} oaa {oaa_p:.4e}");
    assert!(iaa_p <= isa_p, "adaptive input {iaa_p} lost to sampling input {isa_p}");
    assert!(oaa_p <= osa_p, "adaptive output {oaa_p} lost to sampling output {osa_p}");
}

/// Every attacked trace of the closed-form grid still satisfies the
/// sliding-window resource invariant: fake reports can steer the strategy
/// choice but never push spending past the window budget.
#[test]
fn acceptance_08_window_budget_audit() {
    let grid = attack_grid();
    let mut checked = 0;
    for (kind, epsilon, n_total, w, trace) in &grid.traces {
        assert!(
            window_budget_audit(*kind, *epsilon, *n_total, *w, trace),
            "{} eps={epsilon} w={w}: window resource invariant violated under attack",
            kind.label(),
        );
        checked += 1;
    }
    println!("{checked} attacked traces audited");
}

/// An attack tuned for the wrong protocol loses: never better than the
/// matched attack within the same division framework, strictly worse
/// across frameworks, and at least an order of magnitude worse somewhere
/// when a budget-division attack meets a population-division protocol.
#[test]
fn acceptance_09_mismatched_attacks_lose() {
    let start = Instant::now();
    let mut base = ExperimentConfig::default();
    base.seeds = (0..24).collect();
    let protos =
        [ProtocolKind::Lbd, ProtocolKind::Lba, ProtocolKind::Lpd, ProtocolKind::Lpa];
    let cells = mismatch_matrix(&protos, &[AttackKind::Oaa], &base).expect("mismatch matrix");
    let get = |actual: ProtocolKind, assumed: ProtocolKind| {
        cells
            .iter()
            .find(|c| c.actual == actual && c.assumed == assumed)
            .expect("cell exists")
            .mse_attack_mean
    };

    for &actual in &protos {
        let row: Vec<String> =
            protos.iter().map(|&a| format!("{:.3e}", get(actual, a))).collect();
        println!("actual {}: {}", actual.label(), row.join(" "));
    }

    let mut cross_blowup: f64 = 0.0;
    for &actual in &protos {
        let matched = get(actual, actual);
        for &assumed in &protos {
            if assumed == actual {
                continue;
            }
            let cell = get(actual, assumed);
            if actual.is_budget_division() == assumed.is_budget_division() {
                assert!(
                    matched <= cell,
                    "actual {} assumed {}: in-framework mismatch {cell:.4e} beat matched {matched:.4e}",
                    actual.label(),
                    assumed.label(),
                );
            } else {
                assert!(
                    cell > matched,
                    "actual {} assumed {}: cross-framework mismatch {cell:.4e} not worse than matched {matched:.4e}",
                    actual.label(),
                    assumed.label(),
                );
            }
            if assumed.is_budget_division() && !actual.is_budget_division() {
                cross_blowup = cross_blowup.max(cell / matched);
            }
        }
    }
    println!("largest budget-tuned-vs-population-protocol blowup: {cross_blowup:.1}x");
    assert!(
        cross_blowup >= 10.0,
        "expected a >= 10x penalty for budget-division attacks on population-division protocols, got {cross_blowup:.2}x"
    );
    let elapsed = start.elapsed();
    println!("mismatch matrix in {elapsed:.2?}");
    assert!(elapsed < Duration::from_secs(600), "mismatch matrix too slow: {elapsed:?}");
}

/// The subsampling defense recovers accuracy under the adaptive output
/// attack, works better the more concentrated the target is, and its
/// consistency test stays quiet on clean streams.
#[test]
fn acceptance_10_defense_accuracy_gain() {
    let start = Instant::now();
    let mut base = ExperimentConfig::default();
    base.fakes = FakeBudget::Beta(0.1);
    base.t_len = 400;
    base.defense = Some(DefenseConfig::default());
    base.seeds = (0..20).collect();

    let mut sig = base.clone();
    sig.target = TargetSelect::Kind(TargetKind::Sigmoid);
    let rec_sig = run_experiment(&sig).expect("sigmoid run");
    let ag_sig = rec_sig.mean_ag.expect("defense enabled");

    let mut uni = base.clone();
    uni.target = TargetSelect::Kind(TargetKind::Uniform);
    let rec_uni = run_experiment(&uni).expect("uniform run");
    let ag_uni = rec_uni.mean_ag.expect("defense enabled");
    println!("accuracy gain: sigmoid target {ag_sig:.4e}, uniform target {ag_uni:.4e}");

    // False positive rate of the consistency test on attack-free streams.
    let mut clean = base.clone();
    clean.attack = None;
    clean.seeds = (100..110).collect();
    let mut detected = 0u64;
    let mut decisions = 0u64;
    for &seed in &clean.seeds {
        let data = build_seed_data(&clean, seed).expect("stream generation");
        let out = simulate_seed(&clean, seed, &data, true).expect("clean simulation");
        detected += out.defense_trace.iter().filter(|r| r.detected).count() as u64;
        decisions += out.defense_trace.len() as u64;
    }
    let fpr = detected as f64 / decisions as f64;
    let alpha = base.defense.as_ref().unwrap().ks_alpha;
    println!("false positive rate {fpr:.4} over {decisions} clean decisions (alpha {alpha})");
    assert!(
        fpr <= alpha + 0.02,
        "clean-stream false positive rate {fpr} above alpha {alpha} + 0.02"
    );

    assert!(ag_sig > 0.0, "defense should recover accuracy under attack, gain was {ag_sig:.4e}");
    assert!(
        ag_sig >= ag_uni,
        "concentrated target should be at least as defensible: sigmoid {ag_sig:.4e} vs uniform {ag_uni:.4e}"
    );
    let elapsed = start.elapsed();
    println!("defense runs in {elapsed:.2?}");
    assert!(elapsed < Duration::from_secs(600), "defense check too slow: {elapsed:?}");
}

/// The attacked mean-estimation stream stays inside its predicted band,
/// and the solved fake value is exact algebra whenever it avoids the
/// domain clamp.
#[test]
fn acceptance_11_mean_attack_bound() {
    let start = Instant::now();
    let cfg = MeanExperimentConfig::default();
    let summaries = run_mean_experiment(&cfg).expect("mean experiment");
    for s in &summaries {
        println!(
            "seed {}: {} publications, avg {:.5} target {} band {:.5} unclipped {}",
            s.seed, s.publications, s.avg_published, cfg.target, s.three_sigma, s.unclipped
        );
        assert!(s.unclipped, "seed {}: the solved fake value hit the domain clamp", s.seed);
        assert!(
            s.within_bound,
            "seed {}: deviation {:.5} outside the three-sigma band {:.5}",
            s.seed, s.deviation, s.three_sigma
        );
    }

    let mut rng = substream(1111, lane::ATTACK);
    for _ in 0..200 {
        let n: f64 = rng.random_range(100.0..10_000.0f64).round();
        let mean_e = rng.random_range(-0.8..0.8);
        let target = rng.random_range(-0.8..0.8);
        let m = rng.random_range(1..1000u64);
        let z = cgm_attack(n, mean_e, target, m, (-1.0, 1.0)).unwrap();
        assert!((-1.0..=1.0).contains(&z), "fake value {z} escaped the domain");
        if z > -1.0 && z < 1.0 {
            let achieved = (n * mean_e + m as f64 * z) / (n + m as f64);
            assert!(
                (achieved - target).abs() <= 1e-12,
                "unclipped fake value should hit the target exactly: {achieved} vs {target}"
            );
        }
    }
    // A target far beyond what m fakes can reach must clamp to the domain edge.
    let z = cgm_attack(1000.0, 0.0, 0.9, 10, (-1.0, 1.0)).unwrap();
    assert_eq!(z, 1.0, "unreachable target should clamp to the domain edge");
    let elapsed = start.elapsed();
    println!("mean-stream bound check in {elapsed:.2?}");
    assert!(elapsed < Duration::from_secs(120), "mean check too slow: {elapsed:?}");
}
