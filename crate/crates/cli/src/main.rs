use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use ldpstream_core::attack_orchestrators::{write_attack_trace_csv, AttackKind};
use ldpstream_core::data_targets::SyntheticModel;
use ldpstream_core::defense::{write_defense_trace_csv, DefenseConfig};
use ldpstream_core::harness::{
    from_toml_str, mismatch_matrix, run_experiment, run_grid, run_mean_experiment, set_threads,
    write_mismatch_csv, write_results_csv, ExperimentConfig, FakeBudget, MeanExperimentConfig,
    RunRecord,
};
use ldpstream_core::mean_mech::MeanMechKind;
use ldpstream_core::stream_protocols::{write_trace_csv, ProtocolKind};

/// Simulate streaming frequency/mean estimation under local differential
/// privacy, the fine-grained manipulation attacks against the adaptive
/// protocols, and the subsampling defense.
#[derive(Parser)]
#[command(name = "ldpstream", version, arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment over its seeds and write results + traces.
    Run(RunArgs),
    /// Sweep protocols, attacks and budgets in one cartesian grid.
    Grid(GridArgs),
    /// Attack-tuning mismatch matrix: every assumed protocol vs every
    /// actual protocol.
    Mismatch(MismatchArgs),
    /// Attacked mean-estimation stream with its closed-form gap check.
    Mean(MeanArgs),
}

/// Flags shared by the experiment-driving subcommands. Flag values
/// override the config file, which overrides the built-in defaults.
#[derive(Args, Clone)]
struct Overrides {
    /// TOML experiment description ([experiment] and [defense] sections)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for the CSV files
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Run seeds 0..N instead of the configured seed list
    #[arg(long)]
    seeds: Option<u64>,
    /// Worker threads for the parallel runner (default: all cores)
    #[arg(long)]
    threads: Option<usize>,
    /// Protocol kind: lbd, lba, lpd, lpa, lbu, lpu, lsp
    #[arg(long)]
    protocol: Option<String>,
    /// Attack kind: iua, oua, isa, osa, iaa, oaa, or "none"
    #[arg(long)]
    attack: Option<String>,
    #[arg(long)]
    epsilon: Option<f64>,
    /// Sliding window length
    #[arg(long)]
    w: Option<usize>,
    /// Fake-user fraction beta = m/(m+n); "sufficient" sizing is available
    /// through the config file
    #[arg(long)]
    beta: Option<f64>,
    /// Target stream: uniform, pulse, gaussian, sigmoid, or "truth"
    #[arg(long)]
    target: Option<String>,
    /// Enable the subsampling defense (defaults; tune via the config file)
    #[arg(long)]
    defense: bool,
}

impl Overrides {
    fn build(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))?;
                from_toml_str(&text)?
            }
            None => ExperimentConfig::default(),
        };
        if let Some(n) = self.seeds {
            cfg.seeds = (0..n).collect();
        }
        if let Some(p) = &self.protocol {
            cfg.protocol = p.parse()?;
        }
        if let Some(a) = &self.attack {
            cfg.attack = if a.eq_ignore_ascii_case("none") { None } else { Some(a.parse()?) };
        }
        if let Some(e) = self.epsilon {
            cfg.epsilon = e;
        }
        if let Some(w) = self.w {
            cfg.w = w;
        }
        if let Some(b) = self.beta {
            cfg.fakes = FakeBudget::Beta(b);
        }
        if let Some(t) = &self.target {
            cfg.target = t.parse()?;
        }
        if self.defense && cfg.defense.is_none() {
            cfg.defense = Some(DefenseConfig::default());
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn prepare(&self) -> Result<()> {
        if let Some(threads) = self.threads {
            set_threads(threads)?;
        }
        fs::create_dir_all(&self.out)
            .with_context(|| format!("creating {}", self.out.display()))?;
        Ok(())
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Overrides,
}

#[derive(Args)]
struct GridArgs {
    #[command(flatten)]
    common: Overrides,
    /// Comma-separated protocol kinds to sweep (default: the configured one)
    #[arg(long)]
    protocols: Option<String>,
    /// Comma-separated attack kinds to sweep ("none" allowed)
    #[arg(long)]
    attacks: Option<String>,
    /// Comma-separated epsilon values to sweep
    #[arg(long)]
    epsilons: Option<String>,
}

#[derive(Args)]
struct MismatchArgs {
    #[command(flatten)]
    common: Overrides,
    /// Comma-separated protocol kinds forming the matrix axes
    #[arg(long, default_value = "lbd,lba,lpd,lpa")]
    protocols: String,
    /// Comma-separated attack kinds (adaptive kinds are what the matrix is
    /// about, but any kind works)
    #[arg(long, default_value = "oaa")]
    attacks: String,
}

#[derive(Args)]
struct MeanArgs {
    /// Output directory for the CSV file
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Budget-division protocol kind
    #[arg(long, default_value = "lbd")]
    protocol: String,
    /// Mean mechanism: sr, pm, hm
    #[arg(long, default_value = "hm")]
    mech: String,
    #[arg(long, default_value_t = 2.0)]
    epsilon: f64,
    #[arg(long, default_value_t = 20)]
    w: usize,
    /// Fake-user fraction; 0 disables the attack
    #[arg(long, default_value_t = 0.1)]
    beta: f64,
    #[arg(long, default_value_t = 100_000)]
    n: u64,
    #[arg(long, default_value_t = 48)]
    t_len: usize,
    /// Synthetic model: lns, sin, log, pulse
    #[arg(long, default_value = "sin")]
    model: String,
    /// Constant mean the attacker steers publications onto
    #[arg(long, default_value_t = 0.2)]
    target: f64,
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    #[arg(long)]
    threads: Option<usize>,
}

fn parse_list<T>(text: &str, what: &str) -> Result<Vec<T>>
where
    T: std::str::FromStr,
    T::Err: std::fmt::Display,
{
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|e| anyhow::anyhow!("{what} '{s}': {e}")))
        .collect()
}

fn write_records(out_dir: &Path, records: &[RunRecord]) -> Result<PathBuf> {
    let path = out_dir.join("results.csv");
    let file = fs::File::create(&path)?;
    write_results_csv(std::io::BufWriter::new(file), records)?;
    Ok(path)
}

fn write_exemplar_traces(out_dir: &Path, record: &RunRecord) -> Result<()> {
    let Some(run) = &record.exemplar else { return Ok(()) };
    write_trace_csv(fs::File::create(out_dir.join("trace.csv"))?, &run.trace)?;
    if !run.attack_trace.is_empty() {
        write_attack_trace_csv(
            fs::File::create(out_dir.join("attack_trace.csv"))?,
            &run.attack_trace,
        )?;
    }
    if !run.defense_trace.is_empty() {
        write_defense_trace_csv(
            fs::File::create(out_dir.join("defense_trace.csv"))?,
            &run.defense_trace,
        )?;
    }
    Ok(())
}

fn print_record(record: &RunRecord) {
    let cfg = &record.config;
    println!(
        "{} + {} (eps={}, w={}, {} seeds): attack MSE {:.3e}, utility MSE {:.3e}",
        cfg.protocol.label(),
        cfg.attack_label(),
        cfg.epsilon,
        cfg.w,
        cfg.seeds.len(),
        record.mean_mse_attack,
        record.mean_mse_utility,
    );
    if let Some(rate) = record.mean_dma_success_rate {
        println!("  dissimilarity manipulation success rate: {rate:.3}");
    }
    if let Some((lo, hi)) = record.bound {
        println!("  predicted gap: [{lo:.3e}, {hi:.3e}]");
    }
    if let Some(ag) = record.mean_ag {
        println!("  defense accuracy gain: {ag:.3e}");
    }
    for seed in &record.per_seed {
        if let Some(warning) = &seed.warning {
            println!("  warning (seed {}): {warning}", seed.seed);
        }
    }
}

fn cmd_run(args: &RunArgs) -> Result<()> {
    args.common.prepare()?;
    let cfg = args.common.build()?;
    let record = run_experiment(&cfg)?;
    print_record(&record);
    let path = write_records(&args.common.out, std::slice::from_ref(&record))?;
    write_exemplar_traces(&args.common.out, &record)?;
    println!("results written to {}", path.display());
    Ok(())
}

fn cmd_grid(args: &GridArgs) -> Result<()> {
    args.common.prepare()?;
    let base = args.common.build()?;
    let protocols: Vec<ProtocolKind> = match &args.protocols {
        Some(list) => parse_list(list, "protocol")?,
        None => vec![base.protocol],
    };
    let attacks: Vec<Option<AttackKind>> = match &args.attacks {
        Some(list) => list
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                if s.eq_ignore_ascii_case("none") {
                    Ok(None)
                } else {
                    s.parse::<AttackKind>().map(Some).map_err(anyhow::Error::from)
                }
            })
            .collect::<Result<_>>()?,
        None => vec![base.attack],
    };
    let epsilons: Vec<f64> = match &args.epsilons {
        Some(list) => parse_list(list, "epsilon")?,
        None => vec![base.epsilon],
    };

    let mut configs = Vec::new();
    for &protocol in &protocols {
        for attack in &attacks {
            for &epsilon in &epsilons {
                let mut cfg = base.clone();
                cfg.protocol = protocol;
                cfg.attack = *attack;
                cfg.epsilon = epsilon;
                configs.push(cfg);
            }
        }
    }
    println!("running {} configurations...", configs.len());
    let records = run_grid(&configs)?;
    for record in &records {
        print_record(record);
    }
    let path = write_records(&args.common.out, &records)?;
    println!("results written to {}", path.display());
    Ok(())
}

fn cmd_mismatch(args: &MismatchArgs) -> Result<()> {
    args.common.prepare()?;
    let base = args.common.build()?;
    let protocols: Vec<ProtocolKind> = parse_list(&args.protocols, "protocol")?;
    let attacks: Vec<AttackKind> = parse_list(&args.attacks, "attack")?;
    if attacks.is_empty() || protocols.is_empty() {
        bail!("mismatch needs at least one protocol and one attack");
    }
    let cells = mismatch_matrix(&protocols, &attacks, &base)?;

    for &attack in &attacks {
        println!("attack {} (rows: actual, columns: assumed)", attack.label());
        print!("{:>8}", "");
        for assumed in &protocols {
            print!("{:>12}", assumed.label());
        }
        println!();
        for &actual in &protocols {
            print!("{:>8}", actual.label());
            for &assumed in &protocols {
                let cell = cells
                    .iter()
                    .find(|c| c.attack == attack && c.actual == actual && c.assumed == assumed)
                    .expect("matrix is complete");
                print!("{:>12.3e}", cell.mse_attack_mean);
            }
            println!();
        }
    }

    let path = args.common.out.join("mismatch.csv");
    write_mismatch_csv(fs::File::create(&path)?, &cells)?;
    println!("matrix written to {}", path.display());
    Ok(())
}

fn cmd_mean(args: &MeanArgs) -> Result<()> {
    if let Some(threads) = args.threads {
        set_threads(threads)?;
    }
    fs::create_dir_all(&args.out)?;
    let cfg = MeanExperimentConfig {
        protocol: args.protocol.parse()?,
        mech: args.mech.parse::<MeanMechKind>()?,
        epsilon: args.epsilon,
        w: args.w,
        beta: args.beta,
        n: args.n,
        t_len: args.t_len,
        model: args.model.parse::<SyntheticModel>()?,
        target: args.target,
        seeds: (0..args.seeds).collect(),
    };
    let summaries = run_mean_experiment(&cfg)?;

    let path = args.out.join("mean_results.csv");
    let mut out = String::from("# ldpstream mean v1\n");
    out.push_str(
        "seed,publications,avg_published,target,deviation,three_sigma,within_bound,mse_vs_target,unclipped\n",
    );
    for s in &summaries {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            s.seed,
            s.publications,
            s.avg_published,
            cfg.target,
            s.deviation,
            s.three_sigma,
            s.within_bound,
            s.mse_vs_target,
            s.unclipped,
        ));
        println!(
            "seed {}: {} publications, average {:.4} vs target {:.4} (3-sigma band {:.4}{})",
            s.seed,
            s.publications,
            s.avg_published,
            cfg.target,
            s.three_sigma,
            if s.within_bound { ", within" } else { ", OUTSIDE" },
        );
    }
    fs::write(&path, out)?;
    println!("results written to {}", path.display());
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Grid(args) => cmd_grid(args),
        Command::Mismatch(args) => cmd_mismatch(args),
        Command::Mean(args) => cmd_mean(args),
    }
}
