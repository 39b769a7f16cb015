//! Clustering of linear dueling bandits, and the per-user independent baseline.
//!
//! Each round: find the served user's connected component, fit a pooled preference
//! vector and information matrix over the component's history, pick a greedy first
//! arm and an optimistic second arm, observe the duel, refit the served user alone
//! and prune edges to users whose estimates are now too far away.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::env::{ArmSet, PreferenceRecord};
use crate::error::{Error, Result};
use crate::glm::{fit_mle, MleConfig, PreferenceDataset};
use crate::graph::{threshold_linear, ClusterGraph, ThresholdConfig};

/// Arm feature map `phi`. Defaults to the identity.
#[derive(Clone)]
pub struct FeatureMap {
    out_dim: Option<usize>,
    map: Option<Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>>,
}

impl FeatureMap {
    pub fn identity() -> Self {
        Self {
            out_dim: None,
            map: None,
        }
    }

    pub fn custom(out_dim: usize, f: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static) -> Self {
        Self {
            out_dim: Some(out_dim),
            map: Some(Arc::new(f)),
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        match &self.map {
            Some(f) => f(x),
            None => x.to_vec(),
        }
    }

    pub fn out_dim(&self, in_dim: usize) -> usize {
        self.out_dim.unwrap_or(in_dim)
    }
}

impl Default for FeatureMap {
    fn default() -> Self {
        Self::identity()
    }
}

impl fmt::Debug for FeatureMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.map {
            None => f.write_str("FeatureMap::Identity"),
            Some(_) => write!(f, "FeatureMap::Custom(dim={:?})", self.out_dim),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColdbConfig {
    pub users: usize,
    /// Feature dimension after `phi`.
    pub dim: usize,
    pub lambda: f64,
    pub delta: f64,
    pub kappa_mu: f64,
    /// Norm bound `L` on difference features inside `beta_t`.
    pub feature_norm_bound: f64,
    /// Multiplier on the exploration width `beta_t / kappa_mu`.
    pub explore_scale: f64,
    pub lambda_x_tilde: f64,
    pub threshold_scale: f64,
    pub kappa_exponent: f64,
    pub mle_tol: f64,
    pub mle_max_iters: usize,
}

impl Default for ColdbConfig {
    fn default() -> Self {
        Self {
            users: 1,
            dim: 10,
            lambda: 1.0,
            delta: 0.1,
            kappa_mu: crate::DEFAULT_KAPPA_MU,
            feature_norm_bound: 2.0,
            explore_scale: 1.0,
            lambda_x_tilde: 0.5,
            threshold_scale: 1.0,
            kappa_exponent: -1.0,
            mle_tol: 1e-6,
            mle_max_iters: 100,
        }
    }
}

impl ColdbConfig {
    pub fn validate(&self) -> Result<()> {
        if self.users == 0 || self.dim == 0 {
            return Err(Error::Config("users and dim must be >= 1".into()));
        }
        if !(self.explore_scale >= 0.0) || !(self.feature_norm_bound > 0.0) {
            return Err(Error::Config(
                "explore_scale must be >= 0 and feature_norm_bound > 0".into(),
            ));
        }
        self.mle().validate()?;
        self.threshold().validate()
    }

    pub fn mle(&self) -> MleConfig {
        MleConfig {
            lambda: self.lambda,
            tol: self.mle_tol,
            max_iters: self.mle_max_iters,
        }
    }

    pub fn threshold(&self) -> ThresholdConfig {
        ThresholdConfig {
            lambda: self.lambda,
            kappa_mu: self.kappa_mu,
            delta: self.delta,
            dim: self.dim as f64,
            users: self.users,
            lambda_x_tilde: self.lambda_x_tilde,
            scale: self.threshold_scale,
            kappa_exponent: self.kappa_exponent,
        }
    }

    /// `V_0 = (lambda / kappa_mu) I`.
    pub fn v0(&self) -> f64 {
        self.lambda / self.kappa_mu
    }
}

/// Confidence width `sqrt(2 log(1/delta) + d log(1 + t L^2 kappa / (d lambda)))`.
pub fn beta_t(t: usize, cfg: &ColdbConfig) -> f64 {
    let d = cfg.dim as f64;
    let l2 = cfg.feature_norm_bound * cfg.feature_norm_bound;
    (2.0 * (1.0 / cfg.delta).ln()
        + d * (1.0 + t as f64 * l2 * cfg.kappa_mu / (d * cfg.lambda)).ln())
    .max(0.0)
    .sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Greedy arm: largest `theta . phi(x)`, lowest index on ties.
pub fn select_first_arm(theta_bar: &[f64], features: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (k, x) in features.iter().enumerate() {
        let s = dot(theta_bar, x);
        if s > best_score {
            best_score = s;
            best = k;
        }
    }
    best
}

/// Optimistic arm maximizing `theta . (phi(x) - phi(x1)) + width * |phi(x) - phi(x1)|_{V^-1}`
/// with `width = beta / kappa_mu`. Returns the index and its objective value.
pub fn select_second_arm(
    theta_bar: &[f64],
    v: &DMatrix<f64>,
    first: usize,
    features: &[Vec<f64>],
    beta: f64,
    kappa_mu: f64,
) -> Result<(usize, f64)> {
    let chol = v
        .clone()
        .cholesky()
        .ok_or(Error::NotPositiveDefinite("cluster information matrix"))?;
    let x1 = features.get(first).ok_or(Error::ArmNotInSet {
        index: first,
        len: features.len(),
    })?;
    let width = beta / kappa_mu;
    let mut best = first;
    let mut best_score = f64::NEG_INFINITY;
    for (k, x) in features.iter().enumerate() {
        let z: Vec<f64> = x.iter().zip(x1).map(|(a, b)| a - b).collect();
        let mean = dot(theta_bar, &z);
        let bonus = if z.iter().all(|&c| c == 0.0) {
            0.0
        } else {
            let zv = DVector::from_column_slice(&z);
            let w = chol.l().solve_lower_triangular(&zv).ok_or(Error::NotPositiveDefinite(
                "cluster information matrix",
            ))?;
            w.norm()
        };
        let s = mean + width * bonus;
        if s > best_score {
            best_score = s;
            best = k;
        }
    }
    Ok((best, best_score))
}

/// Cluster-pooled statistics for one round.
#[derive(Debug, Clone)]
pub struct ClusterStats {
    pub theta_bar: Vec<f64>,
    pub v: DMatrix<f64>,
    pub rows: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterMode {
    /// Connected components of the maintained graph.
    Clustered,
    /// Every user is its own cluster and the graph is never touched.
    Independent,
}

#[derive(Debug, Clone)]
pub struct RoundOutcome {
    pub record: PreferenceRecord,
    pub first: usize,
    pub second: usize,
    pub cluster: Vec<usize>,
    pub removed: Vec<(usize, usize)>,
    /// Smallest eigenvalue of the information matrix used for the second arm.
    pub v_min_eigenvalue: f64,
    pub mle_converged: bool,
}

/// State snapshot for debugging and clustering diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub round: usize,
    pub counts: Vec<usize>,
    pub component_ids: Vec<usize>,
    pub estimates: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct Coldb {
    config: ColdbConfig,
    mode: ClusterMode,
    features: FeatureMap,
    graph: ClusterGraph,
    history: Vec<PreferenceRecord>,
    /// Difference features of every history row, in round order.
    deltas: PreferenceDataset,
    user_data: Vec<PreferenceDataset>,
    estimates: Vec<Vec<f64>>,
    counts: Vec<usize>,
    cluster_warm: HashMap<usize, Vec<f64>>,
    round: usize,
}

impl Coldb {
    pub fn new(config: ColdbConfig) -> Result<Self> {
        Self::with_mode(config, ClusterMode::Clustered, FeatureMap::identity())
    }

    /// The independent per-user baseline.
    pub fn ldb_ind(config: ColdbConfig) -> Result<Self> {
        Self::with_mode(config, ClusterMode::Independent, FeatureMap::identity())
    }

    pub fn with_mode(config: ColdbConfig, mode: ClusterMode, features: FeatureMap) -> Result<Self> {
        config.validate()?;
        let d = config.dim;
        let u = config.users;
        Ok(Self {
            config,
            mode,
            features,
            graph: ClusterGraph::complete(u),
            history: Vec::new(),
            deltas: PreferenceDataset::new(d),
            user_data: (0..u).map(|_| PreferenceDataset::new(d)).collect(),
            estimates: vec![vec![0.0; d]; u],
            counts: vec![0; u],
            cluster_warm: HashMap::new(),
            round: 0,
        })
    }

    /// Replaces the user graph (e.g. a pre-pruned one in tests).
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

    pub fn config(&self) -> &ColdbConfig {
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

    pub fn history(&self) -> &[PreferenceRecord] {
        &self.history
    }

    pub fn estimates(&self) -> &[Vec<f64>] {
        &self.estimates
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn round(&self) -> usize {
        self.round
    }

    /// Inferred cluster of every user, labelled by its smallest member.
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

    pub fn snapshot(&mut self) -> Snapshot {
        Snapshot {
            round: self.round,
            counts: self.counts.clone(),
            component_ids: self.component_ids(),
            estimates: self.estimates.clone(),
        }
    }

    /// Pooled MLE and information matrix over every history row served to `cluster`.
    pub fn aggregate_cluster(&self, cluster: &[usize]) -> Result<ClusterStats> {
        if cluster.is_empty() {
            return Err(Error::Config("cluster must be nonempty".into()));
        }
        let d = self.config.dim;
        let mut member = vec![false; self.config.users];
        for &i in cluster {
            *member.get_mut(i).ok_or(Error::UnknownUser(i))? = true;
        }
        let mut pooled = PreferenceDataset::new(d);
        for (k, rec) in self.history.iter().enumerate() {
            if member[rec.user] {
                let (delta, y) = self.deltas.row(k);
                pooled.push(delta, y)?;
            }
        }
        let key = cluster[0];
        let warm = self.cluster_warm.get(&key).map(Vec::as_slice);
        let fit = fit_mle(&pooled, &self.config.mle(), warm)?;
        let v = pooled.outer_product_sum(self.config.v0());
        Ok(ClusterStats {
            theta_bar: fit.theta,
            v,
            rows: pooled.len(),
            converged: fit.converged,
        })
    }

    /// One round for `user`. `feedback(first, second)` returns true iff the first arm won.
    pub fn round_step(
        &mut self,
        user: usize,
        arms: &ArmSet,
        mut feedback: impl FnMut(usize, usize) -> bool,
    ) -> Result<RoundOutcome> {
        if user >= self.config.users {
            return Err(Error::UnknownUser(user));
        }
        if arms.is_empty() {
            return Err(Error::Config("empty arm set".into()));
        }
        self.round += 1;
        let t = self.round;
        let features: Vec<Vec<f64>> = arms.arms.iter().map(|x| self.features.apply(x)).collect();
        if let Some(bad) = features.iter().find(|f| f.len() != self.config.dim) {
            return Err(Error::DimensionMismatch {
                expected: self.config.dim,
                got: bad.len(),
            });
        }

        let cluster = self.cluster_of(user);
        let stats = self.aggregate_cluster(&cluster)?;
        self.cluster_warm.insert(cluster[0], stats.theta_bar.clone());

        let first = select_first_arm(&stats.theta_bar, &features);
        let beta = self.config.explore_scale * beta_t(t, &self.config);
        let (second, _) = select_second_arm(
            &stats.theta_bar,
            &stats.v,
            first,
            &features,
            beta,
            self.config.kappa_mu,
        )?;
        let v_min_eigenvalue = stats.v.clone().symmetric_eigenvalues().min();

        let y = feedback(first, second);
        let record = PreferenceRecord {
            round: t,
            user,
            x1: arms.arms[first].clone(),
            x2: arms.arms[second].clone(),
            y,
        };
        self.deltas.push_pair(&features[first], &features[second], y)?;
        self.user_data[user].push_pair(&features[first], &features[second], y)?;
        self.history.push(record.clone());
        self.counts[user] += 1;

        let fit = fit_mle(
            &self.user_data[user],
            &self.config.mle(),
            Some(&self.estimates[user]),
        )?;
        self.estimates[user] = fit.theta;

        let removed = match self.mode {
            ClusterMode::Clustered => {
                let tcfg = self.config.threshold();
                self.graph.maybe_disconnect(
                    user,
                    &self.estimates,
                    &self.counts,
                    |n| threshold_linear(n, &tcfg),
                    1.0,
                    t,
                )
            }
            ClusterMode::Independent => Vec::new(),
        };

        Ok(RoundOutcome {
            record,
            first,
            second,
            cluster,
            removed,
            v_min_eigenvalue,
            mle_converged: stats.converged && fit.converged,
        })
    }
}

/// One COLDB round.
pub fn coldb_round(
    state: &mut Coldb,
    user: usize,
    arms: &ArmSet,
    feedback: impl FnMut(usize, usize) -> bool,
) -> Result<RoundOutcome> {
    state.round_step(user, arms, feedback)
}

/// One round of the independent per-user baseline; `state` must be built with
/// [`Coldb::ldb_ind`].
pub fn ldb_ind_round(
    state: &mut Coldb,
    user: usize,
    arms: &ArmSet,
    feedback: impl FnMut(usize, usize) -> bool,
) -> Result<RoundOutcome> {
    if state.mode != ClusterMode::Independent {
        return Err(Error::Config("ldb_ind_round needs an independent-mode state".into()));
    }
    state.round_step(user, arms, feedback)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{sample_arm_set, sample_preference_from_rewards};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg(users: usize, dim: usize) -> ColdbConfig {
        ColdbConfig {
            users,
            dim,
            ..ColdbConfig::default()
        }
    }

    #[test]
    fn beta_values() {
        let c = ColdbConfig {
            dim: 20,
            delta: 0.1,
            kappa_mu: 0.1,
            lambda: 1.0,
            ..ColdbConfig::default()
        };
        // sqrt(2 ln 10 + 20 ln(1 + 1000 * 4 * 0.1 / 20)), 30-digit evaluation.
        assert!((beta_t(1000, &c) - 8.092_936_360_830_755).abs() < 1e-12);
        let mut prev = 0.0;
        for t in 1..2000 {
            let b = beta_t(t, &c);
            assert!(b >= prev);
            prev = b;
        }
        let limit = ColdbConfig {
            delta: 1.0 - 1e-12,
            ..c
        };
        assert!(beta_t(0, &limit) < 1e-5);
    }

    #[test]
    fn first_arm_selection() {
        let arms = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        assert_eq!(select_first_arm(&[0.0, 0.0], &arms), 0);
        assert_eq!(select_first_arm(&[1.0, 0.0], &arms), 1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let a = sample_arm_set(&mut rng, 7, 3).unwrap().arms;
            let theta: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let scores: Vec<f64> = a.iter().map(|x| dot(&theta, x)).collect();
            let brute = (0..7).fold(0, |b, k| if scores[k] > scores[b] { k } else { b });
            assert_eq!(select_first_arm(&theta, &a), brute);
            // Positive rescaling never changes the argmax.
            let scaled: Vec<f64> = theta.iter().map(|t| t * 3.7).collect();
            assert_eq!(select_first_arm(&scaled, &a), brute);
        }
    }

    #[test]
    fn second_arm_selection() {
        let v = DMatrix::identity(2, 2) * 10.0;
        let single = vec![vec![0.6, 0.8]];
        assert_eq!(select_second_arm(&[1.0, 0.0], &v, 0, &single, 5.0, 0.1).unwrap(), (0, 0.0));

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let a = sample_arm_set(&mut rng, 5, 3).unwrap().arms;
            let theta: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut m = DMatrix::identity(3, 3) * 2.0;
            for _ in 0..4 {
                let z = DVector::from_iterator(3, (0..3).map(|_| rng.random_range(-1.0..1.0)));
                m.ger(1.0, &z, &z, 1.0);
            }
            let first = select_first_arm(&theta, &a);
            let beta = rng.random_range(0.0..3.0);
            // Oracle: explicit dense inverse.
            let inv = m.clone().try_inverse().unwrap();
            let obj = |k: usize| {
                let z = DVector::from_iterator(3, (0..3).map(|c| a[k][c] - a[first][c]));
                let mean: f64 = (0..3).map(|c| theta[c] * z[c]).sum();
                mean + beta / 0.2 * (z.transpose() * &inv * &z)[(0, 0)].max(0.0).sqrt()
            };
            let brute = (0..5).fold(0, |b, k| if obj(k) > obj(b) + 1e-12 { k } else { b });
            let (got, score) = select_second_arm(&theta, &m, first, &a, beta, 0.2).unwrap();
            assert_eq!(got, brute);
            assert!((score - obj(brute)).abs() < 1e-9);

            // No exploration: greedy on the same offsets, i.e. the first arm's argmax.
            let (greedy, _) = select_second_arm(&theta, &m, first, &a, 0.0, 0.2).unwrap();
            assert_eq!(greedy, first);
        }
    }

    #[test]
    fn singular_v_is_reported() {
        let v = DMatrix::zeros(2, 2);
        let arms = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        assert!(matches!(
            select_second_arm(&[0.0, 0.0], &v, 0, &arms, 1.0, 0.1),
            Err(Error::NotPositiveDefinite(_))
        ));
    }

    #[test]
    fn aggregation_of_empty_and_single_records() {
        let c = cfg(3, 2);
        let mut s = Coldb::new(c).unwrap();
        let st = s.aggregate_cluster(&[0, 1, 2]).unwrap();
        assert_eq!(st.theta_bar, vec![0.0, 0.0]);
        assert_eq!(st.v, DMatrix::identity(2, 2) * c.v0());

        let arms = ArmSet::from_arms(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let out = s.round_step(1, &arms, |_, _| true).unwrap();
        let delta: Vec<f64> = out.record.x1.iter().zip(&out.record.x2).map(|(a, b)| a - b).collect();
        let st = s.aggregate_cluster(&[0, 1, 2]).unwrap();
        for r in 0..2 {
            for col in 0..2 {
                let expected = if r == col { c.v0() } else { 0.0 } + delta[r] * delta[col];
                assert_eq!(st.v[(r, col)], expected);
            }
        }
        // User 0 alone has no data.
        assert_eq!(s.aggregate_cluster(&[0]).unwrap().rows, 0);
    }

    #[test]
    fn cold_start_round() {
        let c = cfg(2, 2);
        let mut s = Coldb::new(c).unwrap();
        let arms = ArmSet::from_arms(vec![vec![1.0, 0.0], vec![0.6, 0.8], vec![-1.0, 0.0]]);
        let out = s.round_step(0, &arms, |_, _| false).unwrap();
        assert_eq!(out.first, 0);
        // Pure exploration against V_0: the farthest arm from x1.
        assert_eq!(out.second, 2);
        assert_eq!(out.cluster, vec![0, 1]);
        assert_eq!(s.counts(), &[1, 0]);
    }

    fn run_pair(
        mut a: Coldb,
        mut b: Coldb,
        users: usize,
        rounds: usize,
        seed: u64,
    ) -> (Vec<(usize, usize)>, Vec<(usize, usize)>) {
        let mut ctx = ChaCha8Rng::seed_from_u64(seed);
        let mut fb_a = ChaCha8Rng::seed_from_u64(seed + 1);
        let mut fb_b = ChaCha8Rng::seed_from_u64(seed + 1);
        let theta = [0.6, -0.8, 0.0];
        let (mut pa, mut pb) = (Vec::new(), Vec::new());
        for _ in 0..rounds {
            let user = ctx.random_range(0..users);
            let arms = sample_arm_set(&mut ctx, 5, 3).unwrap();
            let f: Vec<f64> = arms.arms.iter().map(|x| dot(&theta, x)).collect();
            let oa = a
                .round_step(user, &arms, |i, j| sample_preference_from_rewards(&mut fb_a, f[i], f[j]))
                .unwrap();
            let ob = b
                .round_step(user, &arms, |i, j| sample_preference_from_rewards(&mut fb_b, f[i], f[j]))
                .unwrap();
            pa.push((oa.first, oa.second));
            pb.push((ob.first, ob.second));
        }
        (pa, pb)
    }

    #[test]
    fn independent_equals_pre_pruned_clustered() {
        let c = ColdbConfig {
            threshold_scale: 1e-12,
            ..cfg(4, 3)
        };
        let ind = Coldb::ldb_ind(c).unwrap();
        let mut pruned = Coldb::new(c).unwrap();
        pruned.set_graph(ClusterGraph::edgeless(4)).unwrap();
        let (a, b) = run_pair(ind, pruned, 4, 60, 10);
        assert_eq!(a, b);
    }

    #[test]
    fn single_user_traces_coincide() {
        let c = cfg(1, 3);
        let (a, b) = run_pair(Coldb::new(c).unwrap(), Coldb::ldb_ind(c).unwrap(), 1, 80, 20);
        assert_eq!(a, b);
    }

    #[test]
    fn only_the_served_user_is_refit() {
        let c = ColdbConfig {
            threshold_scale: 0.05,
            ..cfg(5, 3)
        };
        let mut s = Coldb::new(c).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        for _ in 0..100 {
            let user = rng.random_range(0..5);
            let arms = sample_arm_set(&mut rng, 4, 3).unwrap();
            let before = s.estimates().to_vec();
            let y = rng.random_bool(0.5);
            s.round_step(user, &arms, |_, _| y).unwrap();
            for l in (0..5).filter(|&l| l != user) {
                assert_eq!(before[l], s.estimates()[l]);
            }
            let n = s.history().iter().filter(|r| r.user == user).count();
            assert_eq!(s.counts()[user], n);
        }
    }

    #[test]
    fn independent_users_are_isolated() {
        // User 0 sees the same arms and feedback with and without user 1's interleaved rounds.
        let c = cfg(2, 3);
        let mut solo = Coldb::ldb_ind(c).unwrap();
        let mut mixed = Coldb::ldb_ind(c).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        for _ in 0..40 {
            let arms = sample_arm_set(&mut rng, 4, 3).unwrap();
            let y = rng.random_bool(0.7);
            let a = solo.round_step(0, &arms, |_, _| y).unwrap();
            let b = mixed.round_step(0, &arms, |_, _| y).unwrap();
            assert_eq!((a.first, a.second), (b.first, b.second));
            assert_eq!(solo.estimates()[0], mixed.estimates()[0]);
            let other = sample_arm_set(&mut rng, 4, 3).unwrap();
            let y2 = rng.random_bool(0.5);
            mixed.round_step(1, &other, |_, _| y2).unwrap();
        }
    }

    #[test]
    fn ldb_round_rejects_clustered_state() {
        let mut s = Coldb::new(cfg(2, 2)).unwrap();
        let arms = ArmSet::from_arms(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert!(ldb_ind_round(&mut s, 0, &arms, |_, _| true).is_err());
        assert!(matches!(s.round_step(5, &arms, |_, _| true), Err(Error::UnknownUser(5))));
    }

    #[test]
    fn snapshot_serializes() {
        let mut s = Coldb::new(cfg(3, 2)).unwrap();
        let arms = ArmSet::from_arms(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        s.round_step(2, &arms, |_, _| true).unwrap();
        let snap = s.snapshot();
        let json = serde_json::to_string(&snap).unwrap();
        let back: Snapshot = serde_json::from_str(&json).unwrap();
        assert_eq!(back, snap);
        assert_eq!(back.counts, vec![0, 0, 1]);
        assert_eq!(back.component_ids, vec![0, 0, 0]);
    }

    #[test]
    fn custom_feature_map() {
        let map = FeatureMap::custom(3, |x: &[f64]| vec![x[0] * x[0], x[0] * x[1], x[1] * x[1]]);
        let c = cfg(1, 3);
        let mut s = Coldb::with_mode(c, ClusterMode::Clustered, map).unwrap();
        let arms = ArmSet::from_arms(vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.6, 0.8]]);
        let out = s.round_step(0, &arms, |_, _| true).unwrap();
        assert_eq!(out.record.x1.len(), 2);
        assert_eq!(s.estimates()[0].len(), 3);
    }
}
