use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use duelcluster::harness::{
    mean_stderr, run_experiment_with, write_csv, write_summary_csv, Algo, Artifacts, EnvSpec,
    ExperimentConfig,
};
use duelcluster::Error;

#[derive(Parser)]
#[command(name = "duelcluster", version, about = "Clustered dueling bandit experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run seeded trials and write the per-round regret CSV.
    Run(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON file mirroring the experiment config; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// One algorithm or a comma-separated list (coldb, condb, ldb_ind, ndb_ind).
    #[arg(long, value_delimiter = ',')]
    algo: Vec<String>,
    /// linear, square or file:PATH.
    #[arg(long)]
    env: Option<String>,
    #[arg(long)]
    users: Option<usize>,
    #[arg(long)]
    clusters: Option<usize>,
    #[arg(long)]
    arms: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    /// Per-round regret CSV.
    #[arg(long)]
    out: PathBuf,
    /// Also write mean and standard error across seeds next to the output.
    #[arg(long)]
    summary: bool,
    /// Multiplies the exploration width of every algorithm.
    #[arg(long)]
    explore_scale: Option<f64>,
    /// Multiplies the edge-deletion thresholds.
    #[arg(long)]
    threshold_scale: Option<f64>,
    /// Network width for the neural algorithms.
    #[arg(long)]
    width: Option<usize>,
    /// Network depth for the neural algorithms.
    #[arg(long)]
    depth: Option<usize>,
    /// Run linear algorithms on non-linear rewards.
    #[arg(long)]
    allow_misspecified: bool,
    /// Directory for snapshots, deletion logs and network checkpoints.
    #[arg(long)]
    artifacts: Option<PathBuf>,
}

fn build_configs(args: &RunArgs) -> Result<Vec<ExperimentConfig>, Error> {
    let mut base = match &args.config {
        Some(p) => ExperimentConfig::from_json_file(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(e) = &args.env {
        base.env = e.parse::<EnvSpec>()?;
    }
    macro_rules! set {
        ($($field:ident),*) => { $( if let Some(v) = args.$field { base.$field = v; } )* };
    }
    set!(users, clusters, arms, dim, gamma, horizon);
    if !args.seeds.is_empty() {
        base.seeds = args.seeds.clone();
    }
    if let Some(s) = args.explore_scale {
        base.coldb.explore_scale = s;
        base.condb.explore_scale = s;
    }
    if let Some(s) = args.threshold_scale {
        base.coldb.threshold_scale = s;
        base.condb.threshold_scale = s;
    }
    if let Some(w) = args.width {
        base.condb.nn.width = w;
    }
    if let Some(d) = args.depth {
        base.condb.nn.depth = d;
    }
    base.allow_misspecified |= args.allow_misspecified;

    let algos: Vec<Algo> = if args.algo.is_empty() {
        vec![base.algo]
    } else {
        args.algo.iter().map(|a| a.parse()).collect::<Result<_, _>>()?
    };
    algos
        .into_iter()
        .map(|algo| {
            let cfg = ExperimentConfig {
                algo,
                ..base.clone()
            };
            cfg.validate()?;
            Ok(cfg)
        })
        .collect()
}

fn summary_path(out: &std::path::Path) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("regret");
    out.with_file_name(format!("{stem}_summary.csv"))
}

fn run(args: RunArgs) -> Result<bool, Error> {
    let configs = build_configs(&args)?;
    let artifacts = Artifacts {
        dir: args.artifacts.clone(),
    };
    let mut traces = Vec::new();
    let mut all_ok = true;
    for cfg in &configs {
        let result = run_experiment_with(cfg, &artifacts)?;
        for f in result.failures() {
            eprintln!("{}: trial failed: {f}", cfg.algo);
            all_ok = false;
        }
        let finals: Vec<f64> = result.reports().map(|r| r.trace.final_regret()).collect();
        let (mean, se) = mean_stderr(&finals);
        let exact = result.reports().filter(|r| r.exact_recovery).count();
        let rand: Vec<f64> = result.reports().map(|r| r.rand_index).collect();
        let violations: usize = result.reports().map(|r| r.invariants.violations()).sum();
        println!(
            "{}: final regret {mean:.3} ± {se:.3} over {} trials; exact clustering {exact}/{}; mean Rand index {:.3}; invariant violations {violations}",
            cfg.algo,
            finals.len(),
            finals.len(),
            rand.iter().sum::<f64>() / rand.len().max(1) as f64,
        );
        traces.extend(result.traces());
    }
    write_csv(&traces, &args.out)?;
    if args.summary {
        write_summary_csv(&traces, summary_path(&args.out))?;
    }
    Ok(all_ok)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let Command::Run(args) = cli.command;
    match run(args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 3 })
        }
    }
}
