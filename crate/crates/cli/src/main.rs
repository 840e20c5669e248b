use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rankbandit::config::{ExperimentConfig, Scenario};
use rankbandit::harness::{emit_csv, metadata, population_for, run_experiment, write_csv, RunResult};
use rankbandit::inference::{brute_force_opt, greedy_ranking};
use rankbandit::properties::{verify_family, CheckMetric, CheckReport, FamilyParams};
use rankbandit::{DocTree, Error};

#[derive(Parser)]
#[command(name = "rankbandit", version, about = "Ranked bandits over tree metric spaces")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run algorithms against a scenario and write per-round CSV.
    Simulate(Box<SimulateArgs>),
    /// Check the correlation and continuity guarantees exactly on random small instances.
    VerifyProperties(VerifyArgs),
    /// Print the greedy ranking and the brute-force optimum for a scenario.
    Oracle(OracleArgs),
    /// Write a balanced ε-exponential tree in the plain-text tree format.
    Tree(TreeArgs),
}

/// Every flag mirrors a key of the `key = value` config file and overrides it.
#[derive(Args)]
struct SimulateArgs {
    /// Config file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// two-peak, crp, small-two-peak, discussion3 or file:<descriptor>.
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long)]
    docs_log2: Option<String>,
    #[arg(long)]
    epsilon: Option<String>,
    #[arg(long)]
    mu0: Option<String>,
    #[arg(long)]
    crp_n: Option<String>,
    #[arg(long)]
    crp_theta: Option<String>,
    #[arg(long)]
    slots: Option<String>,
    #[arg(long)]
    rounds: Option<String>,
    /// Comma-separated algorithm names.
    #[arg(long)]
    algos: Option<String>,
    /// Number of runs per algorithm.
    #[arg(long)]
    seeds: Option<String>,
    /// Master seed.
    #[arg(long)]
    seed: Option<String>,
    /// Write a CSV row every this many rounds.
    #[arg(long)]
    snapshot: Option<String>,
    /// CSV path; a `.meta` file is written next to it. Stdout if omitted.
    #[arg(long)]
    out: Option<String>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    dedup: Option<String>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    anytime: Option<String>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    grid_replay: Option<String>,
    #[arg(long)]
    exp3_gamma: Option<String>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    contextual_caps: Option<String>,
}

impl SimulateArgs {
    fn overrides(&self) -> [(&'static str, &Option<String>); 18] {
        [
            ("scenario", &self.scenario),
            ("docs-log2", &self.docs_log2),
            ("epsilon", &self.epsilon),
            ("mu0", &self.mu0),
            ("crp-n", &self.crp_n),
            ("crp-theta", &self.crp_theta),
            ("slots", &self.slots),
            ("rounds", &self.rounds),
            ("algos", &self.algos),
            ("seeds", &self.seeds),
            ("seed", &self.seed),
            ("snapshot", &self.snapshot),
            ("out", &self.out),
            ("dedup", &self.dedup),
            ("anytime", &self.anytime),
            ("grid-replay", &self.grid_replay),
            ("exp3-gamma", &self.exp3_gamma),
            ("contextual-caps", &self.contextual_caps),
        ]
    }

    fn resolve(&self) -> anyhow::Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        for (key, value) in self.overrides() {
            if let Some(v) = value {
                cfg.set(key, v).with_context(|| format!("--{key}"))?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Family {
    /// Up to 10 leaves, edge weights in [0.02, 0.3].
    Small,
    /// Up to 10 leaves, edge weights in [0.001, 0.5].
    Harsh,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Path,
    Certified,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, value_enum, default_value = "small")]
    family: Family,
    #[arg(long, default_value_t = 100)]
    instances: usize,
    /// Metric for the correlation and continuity checks.
    #[arg(long, value_enum, default_value = "path")]
    metric: MetricArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long, default_value = "discussion3")]
    scenario: String,
    #[arg(long, default_value_t = 2)]
    k: usize,
    /// Seed index of the population to build.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TreeArgs {
    #[arg(long, default_value_t = 2)]
    branching: usize,
    #[arg(long)]
    depth: usize,
    #[arg(long, default_value_t = 0.837)]
    epsilon: f64,
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Simulate(args) => simulate(&args.resolve()?),
        Command::VerifyProperties(args) => verify(&args),
        Command::Oracle(args) => oracle(&args),
        Command::Tree(args) => tree(&args),
    }
}

fn simulate(cfg: &ExperimentConfig) -> anyhow::Result<ExitCode> {
    let results = run_experiment(cfg)?;
    match &cfg.out {
        Some(path) => {
            emit_csv(&results, path)?;
            let meta = meta_path(path);
            fs::write(&meta, metadata(cfg)?).with_context(|| format!("writing {}", meta.display()))?;
            summarize(&results, &mut io::stdout().lock())?;
        }
        None => {
            write_csv(&results, io::stdout().lock())?;
            summarize(&results, &mut io::stderr().lock())?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn meta_path(csv: &Path) -> PathBuf {
    let mut name = csv.file_name().unwrap_or_default().to_os_string();
    name.push(".meta");
    csv.with_file_name(name)
}

fn summarize(results: &[RunResult], out: &mut dyn Write) -> io::Result<()> {
    writeln!(
        out,
        "{:<28} {:>6} {:>10} {:>10} {:>10}",
        "algorithm", "runs", "final", "mean", "clicks/t"
    )?;
    let mut names: Vec<&str> = results.iter().map(|r| r.algorithm.as_str()).collect();
    names.dedup();
    for name in names {
        let runs: Vec<&RunResult> = results.iter().filter(|r| r.algorithm == name).collect();
        let avg = |f: &dyn Fn(&RunResult) -> f64| runs.iter().map(|r| f(r)).sum::<f64>() / runs.len() as f64;
        writeln!(
            out,
            "{name:<28} {:>6} {:>10.4} {:>10.4} {:>10.4}",
            runs.len(),
            avg(&|r| r.final_exact()),
            avg(&|r| r.mean_exact()),
            avg(&|r| r.empirical_perf()),
        )?;
    }
    Ok(())
}

fn verify(args: &VerifyArgs) -> anyhow::Result<ExitCode> {
    let params = match args.family {
        Family::Small => FamilyParams::default(),
        Family::Harsh => FamilyParams {
            min_weight: 0.001,
            max_weight: 0.5,
            ..FamilyParams::default()
        },
    };
    let metric = match args.metric {
        MetricArg::Path => CheckMetric::Path,
        MetricArg::Certified => CheckMetric::Certified,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let report = verify_family(&mut rng, &params, args.instances, metric)?;
    let line = |name: &str, r: &CheckReport| {
        println!(
            "{name:<20} {:<4} checks {:>9}  violations {:>4}  worst ratio {:.4}",
            if r.passed() { "ok" } else { "FAIL" },
            r.checked,
            r.violations.len(),
            r.worst_ratio
        );
        for v in r.violations.iter().take(5) {
            println!("    {v:?}");
        }
    };
    println!("{} instances", report.instances);
    line("scaled correlation", &report.scaled_correlation);
    line("correlation", &report.correlation);
    line("context continuity", &report.context_continuity);
    line("mixture continuity", &report.mixture_continuity);
    println!(
        "mixtures skipped (a component is not Lipschitz): {}",
        report.mixtures_skipped
    );
    Ok(if report.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn oracle(args: &OracleArgs) -> anyhow::Result<ExitCode> {
    let cfg = ExperimentConfig {
        scenario: args.scenario.parse::<Scenario>()?,
        slots: args.k,
        ..ExperimentConfig::default()
    };
    let dist = population_for(&cfg, args.seed)?;
    let docs = dist.tree().leaves().to_vec();
    if args.k == 0 || args.k > docs.len() {
        bail!("k = {} with {} documents", args.k, docs.len());
    }
    let (greedy, g) = greedy_ranking(&dist, &docs, args.k)?;
    println!("documents {}", docs.len());
    println!("greedy  {:.12}  {}", g, slate_string(&dist, &greedy));
    match brute_force_opt(&dist, &docs, args.k) {
        Ok((opt, v)) => {
            println!("optimum {:.12}  {}", v, slate_string(&dist, &opt));
            println!("ratio   {:.12}", g / v);
        }
        Err(Error::TooManySubsets(n)) => println!("optimum skipped: {n} subsets"),
        Err(e) => return Err(e.into()),
    }
    Ok(ExitCode::SUCCESS)
}

/// Slate as 1-based leaf positions.
fn slate_string(dist: &rankbandit::UserDistribution, slate: &[rankbandit::NodeId]) -> String {
    let t = dist.tree();
    let pos: Vec<String> = slate
        .iter()
        .map(|&x| format!("x{}", t.leaf_position(x).expect("leaf") + 1))
        .collect();
    format!("[{}]", pos.join(", "))
}

fn tree(args: &TreeArgs) -> anyhow::Result<ExitCode> {
    let t = DocTree::balanced(args.branching, args.depth, args.epsilon)?.with_scale(args.scale)?;
    match &args.out {
        Some(path) => t
            .write_text(fs::File::create(path).with_context(|| format!("creating {}", path.display()))?)
            .with_context(|| format!("writing {}", path.display()))?,
        None => t.write_text(io::stdout().lock())?,
    }
    Ok(ExitCode::SUCCESS)
}
