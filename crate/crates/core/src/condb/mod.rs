//! Clustering of neural dueling bandits: NN-greedy first arm, NTK-UCB second arm,
//! per-user network refits and graph pruning on `sqrt(m) |theta_i - theta_l|`.

mod kernel;

use std::collections::HashMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use kernel::{GramFactor, GramStore};

use crate::coldb::ClusterMode;
use crate::env::{ArmSet, PreferenceRecord};
use crate::error::{Error, Result};
use crate::graph::{threshold_neural, ClusterGraph, ThresholdConfig};
use crate::neural::{
    augment_input, effective_dimension, forward_many, init_params, ntk_feature, save_checkpoint,
    train, NnConfig, NnParams, OuterProductAccumulator, PairDataset,
};

/// How the running effective dimension is accumulated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DtildeMode {
    /// Outer products of the played pair's feature difference.
    #[default]
    ObservedPairs,
    /// Outer products of every pairwise difference within each round's arm set.
    AllPairs,
}

/// Feature map behind the exploration bonus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UcbFeatures {
    /// `g(x; theta_0) / sqrt(m)`.
    #[default]
    Ntk,
    /// The augmented input itself (a linear kernel).
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CondbConfig {
    pub users: usize,
    /// Raw arm dimension; the network sees `2 * dim` after augmentation.
    pub dim: usize,
    /// Width, depth, step size and iteration count; `input_dim` and `lambda` are
    /// overridden from this config.
    pub nn: NnConfig,
    pub lambda: f64,
    pub delta: f64,
    pub kappa_mu: f64,
    /// Norm bound `B` in the exploration width.
    pub b_norm: f64,
    pub lambda_x_tilde: f64,
    pub threshold_scale: f64,
    /// Multiplies the exploration width.
    pub explore_scale: f64,
    pub retrain_every: usize,
    pub dtilde_every: usize,
    pub dtilde_mode: DtildeMode,
    pub ucb_features: UcbFeatures,
}

impl Default for CondbConfig {
    fn default() -> Self {
        Self {
            users: 20,
            dim: 10,
            nn: NnConfig::default(),
            lambda: 1.0,
            delta: 0.1,
            kappa_mu: crate::DEFAULT_KAPPA_MU,
            b_norm: 1.0,
            lambda_x_tilde: 0.5,
            threshold_scale: 1.0,
            explore_scale: 1.0,
            retrain_every: 1,
            dtilde_every: 25,
            dtilde_mode: DtildeMode::default(),
            ucb_features: UcbFeatures::default(),
        }
    }
}

impl CondbConfig {
    pub fn validate(&self) -> Result<()> {
        if self.users == 0 || self.dim == 0 {
            return Err(Error::Config("users and dim must be positive".into()));
        }
        for (name, v) in [
            ("lambda", self.lambda),
            ("kappa_mu", self.kappa_mu),
            ("lambda_x_tilde", self.lambda_x_tilde),
            ("threshold_scale", self.threshold_scale),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Config(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        if !(self.b_norm >= 0.0) || !(self.explore_scale >= 0.0) {
            return Err(Error::Config("b_norm and explore_scale must be non-negative".into()));
        }
        if self.retrain_every == 0 || self.dtilde_every == 0 {
            return Err(Error::Config("retrain_every and dtilde_every must be >= 1".into()));
        }
        self.nn_config().validate()
    }

    pub fn nn_config(&self) -> NnConfig {
        NnConfig {
            input_dim: 2 * self.dim,
            lambda: self.lambda,
            ..self.nn
        }
    }

    pub fn threshold(&self) -> ThresholdConfig {
        ThresholdConfig {
            lambda: self.lambda,
            kappa_mu: self.kappa_mu,
            delta: self.delta,
            dim: self.nn_config().param_count() as f64,
            users: self.users,
            lambda_x_tilde: self.lambda_x_tilde,
            scale: self.threshold_scale,
            kappa_exponent: -1.0,
        }
    }

    /// Ridge `lambda / kappa_mu` of the information matrix.
    pub fn v0(&self) -> f64 {
        self.lambda / self.kappa_mu
    }
}

/// `beta_T = sqrt(d_tilde + 2 log(u / delta)) / kappa_mu`.
pub fn beta_neural(d_tilde: f64, cfg: &CondbConfig) -> f64 {
    let inner = d_tilde + 2.0 * (cfg.users as f64 / cfg.delta).ln();
    inner.max(0.0).sqrt() / cfg.kappa_mu
}

/// `nu_T = beta_T + B sqrt(lambda / kappa_mu) + 1`.
pub fn nu_t(beta: f64, cfg: &CondbConfig) -> f64 {
    beta + cfg.b_norm * (cfg.lambda / cfg.kappa_mu).sqrt() + 1.0
}

#[derive(Debug, Clone)]
pub struct CondbOutcome {
    pub record: PreferenceRecord,
    pub first: usize,
    pub second: usize,
    pub cluster: Vec<usize>,
    pub removed: Vec<(usize, usize)>,
    /// Network scores `h(x; theta_bar)` of every arm.
    pub scores: Vec<f64>,
    /// Exploration bonus of every arm; exactly 0 for the first arm.
    pub bonuses: Vec<f64>,
    /// Squared `V^{-1}` norms of `phi(x) - phi(x_1)` before clamping at 0.
    pub raw_quadratics: Vec<f64>,
    /// Squared norms `|phi(x) - phi(x_1)|^2`, the upper envelope times `lambda / kappa`.
    pub diff_sq_norms: Vec<f64>,
    /// Smallest Cholesky pivot of the cluster's kernel information matrix.
    pub info_floor: f64,
    pub d_tilde: f64,
    pub nu: f64,
    pub train_diverged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CondbSnapshot {
    pub round: usize,
    pub counts: Vec<usize>,
    pub component_ids: Vec<usize>,
    pub d_tilde: f64,
    /// `|theta_i - theta_0|` for every user.
    pub drift: Vec<f64>,
}

struct ClusterCache {
    members: Vec<usize>,
    params: NnParams,
    trained_at: usize,
}

pub struct Condb {
    config: CondbConfig,
    nn: NnConfig,
    mode: ClusterMode,
    graph: ClusterGraph,
    params0: NnParams,
    history: Vec<PreferenceRecord>,
    /// Augmented inputs of every history row.
    pairs: Vec<(Vec<f64>, Vec<f64>, bool)>,
    user_data: Vec<PairDataset>,
    estimates: Vec<Vec<f64>>,
    counts: Vec<usize>,
    cluster_params: HashMap<usize, ClusterCache>,
    store: GramStore,
    factors: HashMap<usize, GramFactor>,
    global: GramFactor,
    all_pairs: Option<OuterProductAccumulator>,
    d_tilde: f64,
    round: usize,
}

impl std::fmt::Debug for Condb {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Condb")
            .field("config", &self.config)
            .field("mode", &self.mode)
            .field("round", &self.round)
            .finish_non_exhaustive()
    }
}

impl Condb {
    pub fn new<R: Rng + ?Sized>(config: CondbConfig, rng: &mut R) -> Result<Self> {
        Self::with_mode(config, ClusterMode::Clustered, rng)
    }

    /// The independent per-user baseline.
    pub fn ndb_ind<R: Rng + ?Sized>(config: CondbConfig, rng: &mut R) -> Result<Self> {
        Self::with_mode(config, ClusterMode::Independent, rng)
    }

    pub fn with_mode<R: Rng + ?Sized>(
        config: CondbConfig,
        mode: ClusterMode,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let nn = config.nn_config();
        let params0 = init_params(rng, &nn)?;
        let flat0 = params0.flatten();
        let u = config.users;
        let all_pairs = (config.dtilde_mode == DtildeMode::AllPairs)
            .then(|| OuterProductAccumulator::new(feature_len(&config)));
        Ok(Self {
            nn,
            mode,
            graph: ClusterGraph::complete(u),
            history: Vec::new(),
            pairs: Vec::new(),
            user_data: (0..u).map(|_| PairDataset::new(nn.input_dim)).collect(),
            estimates: vec![flat0; u],
            counts: vec![0; u],
            cluster_params: HashMap::new(),
            store: GramStore::new(),
            factors: HashMap::new(),
            global: GramFactor::new(1.0, config.kappa_mu / config.lambda),
            all_pairs,
            d_tilde: 0.0,
            round: 0,
            params0,
            config,
        })
    }

    pub fn set_graph(&mut self, graph: ClusterGraph) -> Result<()> {
        if graph.users() != self.config.users {
            return Err(Error::DimensionMismatch {
                expected: self.config.users,
                got: graph.users(),
            });
        }
        self.graph = graph;
        Ok(())
    }

    pub fn config(&self) -> &CondbConfig {
        &self.config
    }

    pub fn mode(&self) -> ClusterMode {
        self.mode
    }

    pub fn graph(&self) -> &ClusterGraph {
        &self.graph
    }

    pub fn graph_mut(&mut self) -> &mut ClusterGraph {
        &mut self.graph
    }

    /// The frozen initialization `theta_0`.
    pub fn params0(&self) -> &NnParams {
        &self.params0
    }

    pub fn history(&self) -> &[PreferenceRecord] {
        &self.history
    }

    /// Flattened per-user parameters.
    pub fn estimates(&self) -> &[Vec<f64>] {
        &self.estimates
    }

    pub fn user_params(&self, user: usize) -> Result<NnParams> {
        let flat = self.estimates.get(user).ok_or(Error::UnknownUser(user))?;
        NnParams::unflatten(self.nn.input_dim, self.nn.width, self.nn.depth, flat)
    }

    pub fn save_user_checkpoint(&self, user: usize, path: impl AsRef<Path>) -> Result<()> {
        save_checkpoint(&self.user_params(user)?, path)
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn d_tilde(&self) -> f64 {
        self.d_tilde
    }

    pub fn component_ids(&mut self) -> Vec<usize> {
        match self.mode {
            ClusterMode::Clustered => self.graph.component_ids(),
            ClusterMode::Independent => (0..self.config.users).collect(),
        }
    }

    pub fn cluster_of(&mut self, user: usize) -> Vec<usize> {
        match self.mode {
            ClusterMode::Clustered => self.graph.connected_component(user),
            ClusterMode::Independent => vec![user],
        }
    }

    pub fn snapshot(&mut self) -> CondbSnapshot {
        let flat0 = self.params0.flatten();
        let drift = self
            .estimates
            .iter()
            .map(|e| {
                e.iter()
                    .zip(&flat0)
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect();
        CondbSnapshot {
            round: self.round,
            counts: self.counts.clone(),
            component_ids: self.component_ids(),
            d_tilde: self.d_tilde,
            drift,
        }
    }

    fn features(&self, x_aug: &[f64]) -> Result<Vec<f64>> {
        match self.config.ucb_features {
            UcbFeatures::Ntk => ntk_feature(&self.params0, x_aug),
            UcbFeatures::Raw => Ok(x_aug.to_vec()),
        }
    }

    fn pooled(&self, member: &[bool]) -> Result<PairDataset> {
        let mut data = PairDataset::new(self.nn.input_dim);
        for ((x1, x2, y), rec) in self.pairs.iter().zip(&self.history) {
            if member[rec.user] {
                data.push(x1, x2, *y)?;
            }
        }
        Ok(data)
    }

    /// Network trained on the cluster's pooled history, reusing the cached one between
    /// retraining rounds.
    fn cluster_network(&mut self, cluster: &[usize], member: &[bool]) -> Result<(NnParams, bool)> {
        let key = cluster[0];
        let t = self.round;
        if let Some(c) = self.cluster_params.get(&key) {
            let fresh = (t - c.trained_at) < self.config.retrain_every;
            if c.members == cluster && fresh {
                return Ok((c.params.clone(), false));
            }
        }
        let data = self.pooled(member)?;
        let warm = self.cluster_params.get(&key).map(|c| &c.params);
        let out = train(&self.params0, &data, &self.nn, warm)?;
        self.cluster_params.insert(
            key,
            ClusterCache {
                members: cluster.to_vec(),
                params: out.params.clone(),
                trained_at: t,
            },
        );
        Ok((out.params, out.diverged))
    }

    fn cluster_factor(&mut self, cluster: &[usize], member: &[bool]) -> Result<()> {
        let key = cluster[0];
        let stale = match self.factors.get(&key) {
            Some(f) => {
                // Fresh iff it holds exactly the members' rows.
                let expected = self.history.iter().filter(|r| member[r.user]).count();
                f.len() != expected || f.rows().iter().any(|&r| !member[self.history[r].user])
            }
            None => true,
        };
        if stale {
            let rows: Vec<usize> = (0..self.history.len())
                .filter(|&r| member[self.history[r].user])
                .collect();
            let f = GramFactor::from_rows(self.config.v0(), 1.0, &self.store, &rows)?;
            self.factors.insert(key, f);
        }
        Ok(())
    }

    fn refresh_d_tilde(&mut self) -> Result<()> {
        self.d_tilde = match &self.all_pairs {
            Some(acc) => {
                effective_dimension(acc.matrix(), self.config.kappa_mu, self.config.lambda)?
            }
            None => self.global.logdet(),
        };
        if !self.d_tilde.is_finite() {
            return Err(Error::NonFinite("effective dimension"));
        }
        Ok(())
    }

    /// One round for `user`. `feedback(first, second)` returns true iff the first arm won.
    pub fn round_step(
        &mut self,
        user: usize,
        arms: &ArmSet,
        mut feedback: impl FnMut(usize, usize) -> bool,
    ) -> Result<CondbOutcome> {
        if user >= self.config.users {
            return Err(Error::UnknownUser(user));
        }
        if arms.is_empty() {
            return Err(Error::Config("empty arm set".into()));
        }
        if let Some(bad) = arms.arms.iter().find(|x| x.len() != self.config.dim) {
            return Err(Error::DimensionMismatch {
                expected: self.config.dim,
                got: bad.len(),
            });
        }
        let augmented: Vec<Vec<f64>> = arms
            .arms
            .iter()
            .map(|x| augment_input(x))
            .collect::<Result<_>>()?;
        self.round += 1;
        let t = self.round;
        if (t - 1) % self.config.dtilde_every == 0 {
            self.refresh_d_tilde()?;
        }

        let cluster = self.cluster_of(user);
        let mut member = vec![false; self.config.users];
        for &i in &cluster {
            member[i] = true;
        }
        let pooled_rows = self.history.iter().filter(|r| member[r.user]).count();
        let (theta_bar, train_diverged) = self.cluster_network(&cluster, &member)?;
        // With no data the network is exactly theta_0, whose output is identically 0.
        let scores = if pooled_rows == 0 {
            vec![0.0; augmented.len()]
        } else {
            forward_many(&theta_bar, &augmented)?
        };
        let first = argmax(&scores);

        let phis: Vec<Vec<f64>> = augmented
            .iter()
            .map(|x| self.features(x))
            .collect::<Result<_>>()?;
        self.cluster_factor(&cluster, &member)?;
        let factor = &self.factors[&cluster[0]];
        let projections: Vec<Vec<f64>> = phis.iter().map(|p| factor.project(&self.store, p)).collect();

        let beta = beta_neural(self.d_tilde, &self.config);
        let nu = self.config.explore_scale * nu_t(beta, &self.config);
        let k = augmented.len();
        let mut bonuses = vec![0.0; k];
        let mut raw_quadratics = vec![0.0; k];
        let mut diff_sq_norms = vec![0.0; k];
        for a in 0..k {
            if a == first {
                continue;
            }
            let z_sq: f64 = phis[a]
                .iter()
                .zip(&phis[first])
                .map(|(x, y)| (x - y).powi(2))
                .sum();
            let b: Vec<f64> = projections[a]
                .iter()
                .zip(&projections[first])
                .map(|(x, y)| x - y)
                .collect();
            let q = factor.inverse_quadratic(&b, z_sq);
            raw_quadratics[a] = q;
            diff_sq_norms[a] = z_sq;
            bonuses[a] = nu * q.max(0.0).sqrt();
        }
        let ucb: Vec<f64> = scores.iter().zip(&bonuses).map(|(s, b)| s + b).collect();
        let second = argmax(&ucb);
        let info_floor = factor.min_pivot();

        let y = feedback(first, second);
        let record = PreferenceRecord {
            round: t,
            user,
            x1: arms.arms[first].clone(),
            x2: arms.arms[second].clone(),
            y,
        };
        let z: Vec<f64> = phis[first].iter().zip(&phis[second]).map(|(a, b)| a - b).collect();
        if let Some(acc) = &mut self.all_pairs {
            acc.add_all_pairs(&phis);
        }
        let row = self.store.push(z);
        self.factors
            .get_mut(&cluster[0])
            .expect("factor prepared above")
            .push(&self.store, row)?;
        if self.all_pairs.is_none() {
            self.global.push(&self.store, row)?;
        }
        self.pairs.push((augmented[first].clone(), augmented[second].clone(), y));
        self.user_data[user].push(&augmented[first], &augmented[second], y)?;
        self.history.push(record.clone());
        self.counts[user] += 1;

        let warm = self.user_params(user)?;
        let fit = train(&self.params0, &self.user_data[user], &self.nn, Some(&warm))?;
        self.estimates[user] = fit.params.flatten();

        let removed = match self.mode {
            ClusterMode::Clustered => {
                let tcfg = self.config.threshold();
                let b = self.config.b_norm;
                let scale = (self.nn.width as f64).sqrt();
                self.graph.maybe_disconnect(
                    user,
                    &self.estimates,
                    &self.counts,
                    |n| threshold_neural(n, &tcfg, beta, b),
                    scale,
                    t,
                )
            }
            ClusterMode::Independent => Vec::new(),
        };

        Ok(CondbOutcome {
            record,
            first,
            second,
            cluster,
            removed,
            scores,
            bonuses,
            raw_quadratics,
            diff_sq_norms,
            info_floor,
            d_tilde: self.d_tilde,
            nu,
            train_diverged: train_diverged || fit.diverged,
        })
    }
}

fn feature_len(cfg: &CondbConfig) -> usize {
    match cfg.ucb_features {
        UcbFeatures::Ntk => cfg.nn_config().param_count(),
        UcbFeatures::Raw => 2 * cfg.dim,
    }
}

/// First index of the maximum.
fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// One CONDB round.
pub fn condb_round(
    state: &mut Condb,
    user: usize,
    arms: &ArmSet,
    feedback: impl FnMut(usize, usize) -> bool,
) -> Result<CondbOutcome> {
    state.round_step(user, arms, feedback)
}

/// One round of the independent neural baseline; `state` must be built with
/// [`Condb::ndb_ind`].
pub fn ndb_ind_round(
    state: &mut Condb,
    user: usize,
    arms: &ArmSet,
    feedback: impl FnMut(usize, usize) -> bool,
) -> Result<CondbOutcome> {
    if state.mode != ClusterMode::Independent {
        return Err(Error::Config("ndb_ind_round needs an independent-mode state".into()));
    }
    state.round_step(user, arms, feedback)
}
