//! Seeded multi-trial experiments: environment construction, the round loop, regret
//! traces, invariant monitoring, clustering diagnostics and CSV output.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coldb::{ClusterMode, Coldb, ColdbConfig};
use crate::condb::{Condb, CondbConfig};
use crate::env::{
    generate_clustered_users_with, load_feature_file, regret_from_rewards,
    sample_preference_from_rewards, Assignment, ArmSet, GroundTruth, RewardKind,
};
use crate::error::{Error, Result};

/// Tolerance for the information-matrix floor `lambda / kappa_mu`.
pub const PSD_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algo {
    Coldb,
    Condb,
    LdbInd,
    NdbInd,
}

impl Algo {
    pub fn name(self) -> &'static str {
        match self {
            Algo::Coldb => "coldb",
            Algo::Condb => "condb",
            Algo::LdbInd => "ldb_ind",
            Algo::NdbInd => "ndb_ind",
        }
    }

    pub fn is_neural(self) -> bool {
        matches!(self, Algo::Condb | Algo::NdbInd)
    }

    fn mode(self) -> ClusterMode {
        match self {
            Algo::Coldb | Algo::Condb => ClusterMode::Clustered,
            Algo::LdbInd | Algo::NdbInd => ClusterMode::Independent,
        }
    }
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "coldb" => Ok(Algo::Coldb),
            "condb" => Ok(Algo::Condb),
            "ldb_ind" => Ok(Algo::LdbInd),
            "ndb_ind" => Ok(Algo::NdbInd),
            other => Err(Error::Config(format!(
                "unknown algorithm '{other}' (expected coldb, condb, ldb_ind or ndb_ind)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum EnvSpec {
    Linear,
    Square,
    File(PathBuf),
}

impl FromStr for EnvSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(EnvSpec::Linear),
            "square" => Ok(EnvSpec::Square),
            _ => match s.strip_prefix("file:") {
                Some(p) if !p.is_empty() => Ok(EnvSpec::File(PathBuf::from(p))),
                _ => Err(Error::Config(format!(
                    "unknown environment '{s}' (expected linear, square or file:PATH)"
                ))),
            },
        }
    }
}

impl TryFrom<String> for EnvSpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<EnvSpec> for String {
    fn from(e: EnvSpec) -> String {
        match e {
            EnvSpec::Linear => "linear".into(),
            EnvSpec::Square => "square".into(),
            EnvSpec::File(p) => format!("file:{}", p.display()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub algo: Algo,
    pub env: EnvSpec,
    pub users: usize,
    pub clusters: usize,
    pub arms: usize,
    pub dim: usize,
    pub gamma: f64,
    pub horizon: usize,
    pub seeds: Vec<u64>,
    pub assignment: Assignment,
    /// `users` and `dim` are overridden from the experiment.
    pub coldb: ColdbConfig,
    /// `users` and `dim` are overridden from the experiment.
    pub condb: CondbConfig,
    /// Permits the linear algorithms on non-linear rewards.
    pub allow_misspecified: bool,
    /// Track the invariant suite every round.
    pub monitor: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            algo: Algo::Coldb,
            env: EnvSpec::Linear,
            users: 50,
            clusters: 2,
            arms: 10,
            dim: 10,
            gamma: 0.8,
            horizon: 5000,
            seeds: vec![0, 1, 2],
            assignment: Assignment::RoundRobin,
            coldb: ColdbConfig::default(),
            condb: CondbConfig::default(),
            allow_misspecified: false,
            monitor: true,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("reading {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be >= 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.arms < 2 {
            return Err(Error::Config(format!("need at least 2 arms, got {}", self.arms)));
        }
        let misspecified = match &self.env {
            EnvSpec::Square => true,
            EnvSpec::File(_) | EnvSpec::Linear => false,
        };
        if misspecified && !self.algo.is_neural() && !self.allow_misspecified {
            return Err(Error::Config(format!(
                "{} assumes linear rewards; pass allow_misspecified to run it on the square environment",
                self.algo
            )));
        }
        Ok(())
    }

    /// Trial-specific copy with the population fields copied into the model configs.
    fn resolved(&self, gt: &GroundTruth) -> Self {
        let mut c = self.clone();
        c.users = gt.users;
        c.dim = gt.dim();
        c.coldb.users = gt.users;
        c.coldb.dim = gt.dim();
        c.condb.users = gt.users;
        c.condb.dim = gt.dim();
        c
    }
}

/// Independent random streams of one trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Environment = 0,
    Context = 1,
    Feedback = 2,
    Algorithm = 3,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream as u64);
    r
}

pub fn build_environment(cfg: &ExperimentConfig, seed: u64) -> Result<GroundTruth> {
    let gt = match &cfg.env {
        EnvSpec::File(path) => load_feature_file(path)?,
        EnvSpec::Linear | EnvSpec::Square => {
            let kind = if cfg.env == EnvSpec::Linear {
                RewardKind::Linear
            } else {
                RewardKind::Square
            };
            let mut rng = stream_rng(seed, Stream::Environment);
            generate_clustered_users_with(
                &mut rng,
                cfg.users,
                cfg.clusters,
                cfg.dim,
                cfg.gamma,
                kind,
                cfg.assignment,
            )?
        }
    };
    if gt.is_table() && !cfg.algo.is_neural() && !cfg.allow_misspecified {
        return Err(Error::Config(format!(
            "{} assumes linear rewards; reward tables need allow_misspecified",
            cfg.algo
        )));
    }
    Ok(gt)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretTrace {
    pub algo: String,
    pub seed: u64,
    pub inst: Vec<f64>,
    pub cum: Vec<f64>,
}

impl RegretTrace {
    pub fn new(algo: impl Into<String>, seed: u64) -> Self {
        Self {
            algo: algo.into(),
            seed,
            inst: Vec::new(),
            cum: Vec::new(),
        }
    }

    pub fn push(&mut self, r: f64) {
        let prev = self.cum.last().copied().unwrap_or(0.0);
        self.inst.push(r);
        self.cum.push(prev + r);
    }

    pub fn len(&self) -> usize {
        self.inst.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inst.is_empty()
    }

    pub fn final_regret(&self) -> f64 {
        self.cum.last().copied().unwrap_or(0.0)
    }

    /// Cumulative regret after round `t` (1-based).
    pub fn at(&self, t: usize) -> Option<f64> {
        t.checked_sub(1).and_then(|i| self.cum.get(i).copied())
    }
}

/// Violation counters of the per-round invariant suite.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InvariantReport {
    pub rounds_checked: usize,
    /// Information matrix below the `lambda / kappa_mu` floor.
    pub psd_violations: usize,
    /// `V^{-1}` quadratic form outside `[0, |z|^2 kappa / lambda]`.
    pub quadratic_violations: usize,
    pub component_merges: usize,
    pub negative_regret: usize,
    pub non_served_updates: usize,
    /// Smallest observed `floor - lambda / kappa_mu`.
    pub min_floor_margin: f64,
}

impl InvariantReport {
    pub fn violations(&self) -> usize {
        self.psd_violations
            + self.quadratic_violations
            + self.component_merges
            + self.negative_regret
            + self.non_served_updates
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialReport {
    pub trace: RegretTrace,
    pub invariants: InvariantReport,
    /// Inferred cluster label of every user after the last round.
    pub components: Vec<usize>,
    pub truth: Vec<usize>,
    pub rand_index: f64,
    pub exact_recovery: bool,
    /// First round after which the inferred partition equals the truth for good.
    pub recovered_at: Option<usize>,
    pub deletions: usize,
    /// User served in each round.
    pub served: Vec<usize>,
    /// Best reward in each round's arm set.
    pub best_rewards: Vec<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialFailure {
    pub seed: u64,
    pub message: String,
}

impl fmt::Display for TrialFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "seed {}: {}", self.seed, self.message)
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    /// One entry per seed, in seed order.
    pub trials: Vec<std::result::Result<TrialReport, TrialFailure>>,
}

impl ExperimentResult {
    pub fn reports(&self) -> impl Iterator<Item = &TrialReport> {
        self.trials.iter().filter_map(|t| t.as_ref().ok())
    }

    pub fn failures(&self) -> impl Iterator<Item = &TrialFailure> {
        self.trials.iter().filter_map(|t| t.as_ref().err())
    }

    pub fn traces(&self) -> Vec<RegretTrace> {
        self.reports().map(|r| r.trace.clone()).collect()
    }

    pub fn mean_final_regret(&self) -> f64 {
        let finals: Vec<f64> = self.reports().map(|r| r.trace.final_regret()).collect();
        finals.iter().sum::<f64>() / finals.len() as f64
    }
}

/// Rand index between two labelings and whether they define the same partition.
pub fn clustering_accuracy(inferred: &[usize], truth: &[usize]) -> (f64, bool) {
    let n = inferred.len().min(truth.len());
    let mut agree = 0usize;
    let mut pairs = 0usize;
    for i in 0..n {
        for j in (i + 1)..n {
            pairs += 1;
            if (inferred[i] == inferred[j]) == (truth[i] == truth[j]) {
                agree += 1;
            }
        }
    }
    if pairs == 0 {
        return (1.0, true);
    }
    (agree as f64 / pairs as f64, agree == pairs)
}

enum Learner {
    Linear(Coldb),
    Neural(Condb),
}

struct Step {
    first: usize,
    second: usize,
    /// Information-matrix floor and its required value.
    floor: f64,
    ridge: f64,
    quadratics_ok: bool,
}

impl Learner {
    fn new(cfg: &ExperimentConfig, seed: u64) -> Result<Self> {
        let mode = cfg.algo.mode();
        if cfg.algo.is_neural() {
            let mut rng = stream_rng(seed, Stream::Algorithm);
            Ok(Learner::Neural(Condb::with_mode(cfg.condb, mode, &mut rng)?))
        } else {
            Ok(Learner::Linear(Coldb::with_mode(
                cfg.coldb,
                mode,
                crate::coldb::FeatureMap::identity(),
            )?))
        }
    }

    fn step(
        &mut self,
        user: usize,
        arms: &ArmSet,
        feedback: impl FnMut(usize, usize) -> bool,
    ) -> Result<Step> {
        match self {
            Learner::Linear(s) => {
                let out = s.round_step(user, arms, feedback)?;
                Ok(Step {
                    first: out.first,
                    second: out.second,
                    floor: out.v_min_eigenvalue,
                    ridge: s.config().v0(),
                    quadratics_ok: true,
                })
            }
            Learner::Neural(s) => {
                let out = s.round_step(user, arms, feedback)?;
                let ridge = s.config().v0();
                let quadratics_ok = out
                    .raw_quadratics
                    .iter()
                    .zip(&out.diff_sq_norms)
                    .all(|(q, z)| {
                        let cap = z / ridge;
                        *q >= -PSD_TOLERANCE * cap.max(1.0) && *q <= cap * (1.0 + 1e-12) + 1e-15
                    });
                Ok(Step {
                    first: out.first,
                    second: out.second,
                    floor: out.info_floor,
                    ridge,
                    quadratics_ok,
                })
            }
        }
    }

    fn estimates(&self) -> &[Vec<f64>] {
        match self {
            Learner::Linear(s) => s.estimates(),
            Learner::Neural(s) => s.estimates(),
        }
    }

    fn component_ids(&mut self) -> Vec<usize> {
        match self {
            Learner::Linear(s) => s.component_ids(),
            Learner::Neural(s) => s.component_ids(),
        }
    }

    fn deletions(&self) -> usize {
        match self {
            Learner::Linear(s) => s.graph().deletions().len(),
            Learner::Neural(s) => s.graph().deletions().len(),
        }
    }
}

fn count_components(ids: &[usize]) -> usize {
    ids.iter().enumerate().filter(|(i, c)| i == *c).count()
}

/// Optional per-trial artifacts written after the last round.
#[derive(Debug, Clone, Default)]
pub struct Artifacts {
    pub dir: Option<PathBuf>,
}

/// Runs one seed of the experiment.
pub fn run_trial(cfg: &ExperimentConfig, seed: u64) -> Result<TrialReport> {
    run_trial_with(cfg, seed, &Artifacts::default())
}

pub fn run_trial_with(cfg: &ExperimentConfig, seed: u64, artifacts: &Artifacts) -> Result<TrialReport> {
    let start = Instant::now();
    cfg.validate()?;
    let gt = build_environment(cfg, seed)?;
    let cfg = cfg.resolved(&gt);
    let mut learner = Learner::new(&cfg, seed)?;
    let mut ctx = stream_rng(seed, Stream::Context);
    let mut fb = stream_rng(seed, Stream::Feedback);

    let mut trace = RegretTrace::new(cfg.algo.name(), seed);
    let mut inv = InvariantReport {
        min_floor_margin: f64::INFINITY,
        ..InvariantReport::default()
    };
    let mut components = count_components(&learner.component_ids());
    let mut recovered_at = None;
    let mut served = Vec::with_capacity(cfg.horizon);
    let mut best_rewards = Vec::with_capacity(cfg.horizon);

    for t in 1..=cfg.horizon {
        let user = gt.sample_user(&mut ctx);
        served.push(user);
        let arms = gt.sample_arm_set(&mut ctx, cfg.arms)?;
        let rewards = gt.arm_rewards(user, &arms)?;
        best_rewards.push(rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max));
        let before = cfg.monitor.then(|| learner.estimates().to_vec());

        let step = learner.step(user, &arms, |a, b| {
            sample_preference_from_rewards(&mut fb, rewards[a], rewards[b])
        })?;
        let r = regret_from_rewards(&rewards, step.first, step.second)?;
        trace.push(r);

        let ids = learner.component_ids();
        let (_, exact) = clustering_accuracy(&ids, &gt.assignment);
        match (exact, recovered_at) {
            (true, None) => recovered_at = Some(t),
            (false, Some(_)) => recovered_at = None,
            _ => {}
        }
        if let Some(before) = before {
            inv.rounds_checked += 1;
            let margin = step.floor - step.ridge;
            inv.min_floor_margin = inv.min_floor_margin.min(margin);
            if margin < -PSD_TOLERANCE * step.ridge.max(1.0) {
                inv.psd_violations += 1;
            }
            if !step.quadratics_ok {
                inv.quadratic_violations += 1;
            }
            if r < 0.0 {
                inv.negative_regret += 1;
            }
            let now = count_components(&ids);
            if now < components {
                inv.component_merges += 1;
            }
            components = now;
            let changed = before
                .iter()
                .zip(learner.estimates())
                .enumerate()
                .any(|(i, (a, b))| i != user && a != b);
            if changed {
                inv.non_served_updates += 1;
            }
        }
    }

    let ids = learner.component_ids();
    let (rand_index, exact_recovery) = clustering_accuracy(&ids, &gt.assignment);
    if let Some(dir) = &artifacts.dir {
        write_artifacts(dir, &cfg, seed, &gt, &mut learner)?;
    }
    Ok(TrialReport {
        trace,
        invariants: inv,
        components: ids,
        truth: gt.assignment.clone(),
        rand_index,
        exact_recovery,
        recovered_at,
        deletions: learner.deletions(),
        served,
        best_rewards,
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn write_artifacts(
    dir: &Path,
    cfg: &ExperimentConfig,
    seed: u64,
    gt: &GroundTruth,
    learner: &mut Learner,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let stem = format!("{}_seed{seed}", cfg.algo);
    let env_path = dir.join(format!("{stem}_env.json"));
    let env_json = serde_json::to_string_pretty(gt)
        .map_err(|e| Error::Config(format!("serializing environment: {e}")))?;
    std::fs::write(&env_path, env_json)
        .map_err(|e| Error::io(format!("writing {}", env_path.display()), e))?;
    let snap_path = dir.join(format!("{stem}_snapshot.json"));
    let json = match learner {
        Learner::Linear(s) => serde_json::to_string_pretty(&s.snapshot()),
        Learner::Neural(s) => serde_json::to_string_pretty(&s.snapshot()),
    }
    .map_err(|e| Error::Config(format!("serializing snapshot: {e}")))?;
    std::fs::write(&snap_path, json)
        .map_err(|e| Error::io(format!("writing {}", snap_path.display()), e))?;
    let del_path = dir.join(format!("{stem}_deletions.csv"));
    match learner {
        Learner::Linear(s) => s.graph().write_deletions_csv(&del_path)?,
        Learner::Neural(s) => {
            s.graph().write_deletions_csv(&del_path)?;
            for u in 0..s.config().users {
                s.save_user_checkpoint(u, dir.join(format!("{stem}_user{u}.nn")))?;
            }
        }
    }
    Ok(())
}

/// Runs every seed (in parallel); a failing trial is recorded without stopping the rest.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    run_experiment_with(cfg, &Artifacts::default())
}

pub fn run_experiment_with(cfg: &ExperimentConfig, artifacts: &Artifacts) -> Result<ExperimentResult> {
    cfg.validate()?;
    // Environment problems are configuration errors shared by every trial.
    build_environment(cfg, cfg.seeds[0])?;
    let trials = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            run_trial_with(cfg, seed, artifacts).map_err(|e| TrialFailure {
                seed,
                message: e.to_string(),
            })
        })
        .collect();
    Ok(ExperimentResult {
        config: cfg.clone(),
        trials,
    })
}

fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_csv_to(traces: &[RegretTrace], mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "algo,seed,t,inst_regret,cum_regret")?;
    for tr in traces {
        for (i, (r, c)) in tr.inst.iter().zip(&tr.cum).enumerate() {
            writeln!(w, "{},{},{},{},{}", tr.algo, tr.seed, i + 1, fmt17(*r), fmt17(*c))?;
        }
    }
    Ok(())
}

pub fn write_csv(traces: &[RegretTrace], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let ctx = || format!("writing {}", path.display());
    let f = std::fs::File::create(path).map_err(|e| Error::io(ctx(), e))?;
    let mut w = std::io::BufWriter::new(f);
    write_csv_to(traces, &mut w).map_err(|e| Error::io(ctx(), e))?;
    w.flush().map_err(|e| Error::io(ctx(), e))
}

/// Per-round mean and standard error of cumulative regret across seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub algo: String,
    pub t: usize,
    pub mean: f64,
    pub stderr: f64,
    pub trials: usize,
}

pub fn summarize(traces: &[RegretTrace]) -> Vec<SummaryRow> {
    let mut algos: Vec<&str> = Vec::new();
    for tr in traces {
        if !algos.contains(&tr.algo.as_str()) {
            algos.push(&tr.algo);
        }
    }
    let mut rows = Vec::new();
    for algo in algos {
        let group: Vec<&RegretTrace> = traces.iter().filter(|t| t.algo == algo).collect();
        let len = group.iter().map(|t| t.len()).min().unwrap_or(0);
        for i in 0..len {
            let vals: Vec<f64> = group.iter().map(|t| t.cum[i]).collect();
            let (mean, stderr) = mean_stderr(&vals);
            rows.push(SummaryRow {
                algo: algo.to_string(),
                t: i + 1,
                mean,
                stderr,
                trials: vals.len(),
            });
        }
    }
    rows
}

/// Sample mean and standard error (`sd / sqrt(n)`, 0 for a single value).
pub fn mean_stderr(vals: &[f64]) -> (f64, f64) {
    let n = vals.len() as f64;
    if vals.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = vals.iter().sum::<f64>() / n;
    if vals.len() < 2 {
        return (mean, 0.0);
    }
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn write_summary_csv(traces: &[RegretTrace], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let ctx = || format!("writing {}", path.display());
    let f = std::fs::File::create(path).map_err(|e| Error::io(ctx(), e))?;
    let mut w = std::io::BufWriter::new(f);
    let mut body = || -> std::io::Result<()> {
        writeln!(w, "algo,t,mean_cum_regret,stderr_cum_regret,trials")?;
        for r in summarize(traces) {
            writeln!(w, "{},{},{},{},{}", r.algo, r.t, fmt17(r.mean), fmt17(r.stderr), r.trials)?;
        }
        w.flush()
    };
    body().map_err(|e| Error::io(ctx(), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rand_index_examples() {
        assert_eq!(clustering_accuracy(&[0, 0, 2, 2], &[1, 1, 0, 0]), (1.0, true));
        let (ri, exact) = clustering_accuracy(&[0, 0, 0, 0], &[0, 0, 1, 1]);
        assert!((ri - 1.0 / 3.0).abs() < 1e-15);
        assert!(!exact);
        assert_eq!(clustering_accuracy(&[0, 1, 2], &[5, 3, 1]), (1.0, true));
        assert_eq!(clustering_accuracy(&[0], &[0]), (1.0, true));
    }

    #[test]
    fn trace_accumulates() {
        let mut t = RegretTrace::new("x", 1);
        t.push(0.5);
        t.push(0.25);
        assert_eq!(t.cum, vec![0.5, 0.75]);
        assert_eq!(t.at(1), Some(0.5));
        assert_eq!(t.at(0), None);
        assert_eq!(t.final_regret(), 0.75);
    }

    #[test]
    fn parsing_names() {
        assert_eq!("ldb_ind".parse::<Algo>().unwrap(), Algo::LdbInd);
        assert!("ucb".parse::<Algo>().unwrap_err().is_config());
        assert_eq!("file:/a/b.env".parse::<EnvSpec>().unwrap(), EnvSpec::File("/a/b.env".into()));
        assert!("file:".parse::<EnvSpec>().is_err());
        let json = serde_json::to_string(&EnvSpec::File("x.env".into())).unwrap();
        assert_eq!(json, "\"file:x.env\"");
    }

    #[test]
    fn mean_and_stderr() {
        let (m, s) = mean_stderr(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - (1.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_stderr(&[4.0]), (4.0, 0.0));
    }

    #[test]
    fn csv_has_one_row_per_round() {
        let mut t = RegretTrace::new("coldb", 3);
        t.push(0.1);
        t.push(0.2);
        let mut buf = Vec::new();
        write_csv_to(&[t.clone()], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], "algo,seed,t,inst_regret,cum_regret");
        let cum: f64 = lines[2].split(',').nth(4).unwrap().parse().unwrap();
        assert_eq!(cum, t.cum[1]);
    }

    #[test]
    fn square_env_rejects_linear_algorithms() {
        let cfg = ExperimentConfig {
            env: EnvSpec::Square,
            ..ExperimentConfig::default()
        };
        assert!(cfg.validate().unwrap_err().is_config());
        let ok = ExperimentConfig {
            allow_misspecified: true,
            ..cfg.clone()
        };
        assert!(ok.validate().is_ok());
        let neural = ExperimentConfig {
            algo: Algo::Condb,
            ..cfg
        };
        assert!(neural.validate().is_ok());
    }

    #[test]
    fn streams_are_independent() {
        use rand::Rng;
        let mut a = stream_rng(7, Stream::Context);
        let mut b = stream_rng(7, Stream::Feedback);
        let mut c = stream_rng(7, Stream::Context);
        let x: u64 = a.random();
        assert_ne!(x, b.random::<u64>());
        assert_eq!(x, c.random::<u64>());
    }
}
