//! Clustered user populations with Bradley-Terry-Luce preference feedback.

mod file;

pub use file::{load_feature_file, parse_feature_file};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glm::logistic;

/// Rejection-sampling budget for separated cluster parameters.
pub const MAX_SEPARATION_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardKind {
    Linear,
    Square,
}

/// Reward function shared by every user of one cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RewardModel {
    /// `f(x) = theta . x`
    Linear(Vec<f64>),
    /// `f(x) = (theta . x)^2`
    Square(Vec<f64>),
    /// Reward per catalog item.
    Table(Vec<f64>),
}

impl RewardModel {
    pub fn parameter(&self) -> Option<&[f64]> {
        match self {
            RewardModel::Linear(t) | RewardModel::Square(t) => Some(t),
            RewardModel::Table(_) => None,
        }
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        let theta = self.parameter().ok_or_else(|| {
            Error::Feature("table rewards are defined per item, not per feature vector".into())
        })?;
        if theta.len() != x.len() {
            return Err(Error::DimensionMismatch {
                expected: theta.len(),
                got: x.len(),
            });
        }
        let z: f64 = theta.iter().zip(x).map(|(a, b)| a * b).sum();
        Ok(match self {
            RewardModel::Linear(_) => z,
            RewardModel::Square(_) => z * z,
            RewardModel::Table(_) => unreachable!(),
        })
    }
}

/// How arm sets are drawn each round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ArmLaw {
    /// Independent uniform draws on the unit sphere.
    Sphere { dim: usize },
    /// Distinct items drawn uniformly from a fixed catalog.
    Catalog { items: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Assignment {
    #[default]
    RoundRobin,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub users: usize,
    pub clusters: usize,
    /// Cluster index of every user.
    pub assignment: Vec<usize>,
    pub models: Vec<RewardModel>,
    /// Smallest pairwise distance between cluster parameters.
    pub gamma: f64,
    pub arm_law: ArmLaw,
}

impl GroundTruth {
    pub fn dim(&self) -> usize {
        match &self.arm_law {
            ArmLaw::Sphere { dim } => *dim,
            ArmLaw::Catalog { items } => items.first().map_or(0, Vec::len),
        }
    }

    pub fn model_of(&self, user: usize) -> Result<&RewardModel> {
        let j = *self.assignment.get(user).ok_or(Error::UnknownUser(user))?;
        Ok(&self.models[j])
    }

    pub fn is_table(&self) -> bool {
        self.models.iter().any(|m| matches!(m, RewardModel::Table(_)))
    }

    pub fn sample_user<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        sample_user(rng, self.users)
    }

    pub fn sample_arm_set<R: Rng + ?Sized>(&self, rng: &mut R, k: usize) -> Result<ArmSet> {
        match &self.arm_law {
            ArmLaw::Sphere { dim } => sample_arm_set(rng, k, *dim),
            ArmLaw::Catalog { items } => {
                if k > items.len() {
                    return Err(Error::Config(format!(
                        "{k} arms requested from a catalog of {} items",
                        items.len()
                    )));
                }
                let mut picked = rand::seq::index::sample(rng, items.len(), k).into_vec();
                picked.sort_unstable();
                Ok(ArmSet {
                    arms: picked.iter().map(|&i| items[i].clone()).collect(),
                    items: Some(picked),
                })
            }
        }
    }

    /// Ground-truth reward of every arm in the set for `user`.
    pub fn arm_rewards(&self, user: usize, arms: &ArmSet) -> Result<Vec<f64>> {
        let model = self.model_of(user)?;
        match model {
            RewardModel::Table(rewards) => {
                let items = arms.items.as_ref().ok_or_else(|| {
                    Error::Feature("table rewards need catalog item ids on the arm set".into())
                })?;
                items
                    .iter()
                    .map(|&i| {
                        rewards.get(i).copied().ok_or(Error::ArmNotInSet {
                            index: i,
                            len: rewards.len(),
                        })
                    })
                    .collect()
            }
            _ => arms.arms.iter().map(|x| model.eval(x)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSet {
    pub arms: Vec<Vec<f64>>,
    /// Catalog indices when arms come from a fixed item list.
    pub items: Option<Vec<usize>>,
}

impl ArmSet {
    pub fn from_arms(arms: Vec<Vec<f64>>) -> Self {
        Self { arms, items: None }
    }

    pub fn len(&self) -> usize {
        self.arms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arms.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.arms.first().map_or(0, Vec::len)
    }
}

/// One interaction: the served user, the chosen pair and whether `x1` won.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceRecord {
    pub round: usize,
    pub user: usize,
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    pub y: bool,
}

fn unit_gaussian<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

pub(crate) fn min_pairwise_distance(vs: &[&[f64]]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..vs.len() {
        for j in (i + 1)..vs.len() {
            best = best.min(distance(vs[i], vs[j]));
        }
    }
    best
}

/// Clustered population with round-robin user assignment.
pub fn generate_clustered_users<R: Rng + ?Sized>(
    rng: &mut R,
    users: usize,
    clusters: usize,
    dim: usize,
    gamma: f64,
    kind: RewardKind,
) -> Result<GroundTruth> {
    generate_clustered_users_with(rng, users, clusters, dim, gamma, kind, Assignment::RoundRobin)
}

pub fn generate_clustered_users_with<R: Rng + ?Sized>(
    rng: &mut R,
    users: usize,
    clusters: usize,
    dim: usize,
    gamma: f64,
    kind: RewardKind,
    assignment: Assignment,
) -> Result<GroundTruth> {
    if clusters == 0 || users < clusters {
        return Err(Error::Config(format!(
            "need users >= clusters >= 1, got users={users} clusters={clusters}"
        )));
    }
    if dim == 0 {
        return Err(Error::Config("dimension must be >= 1".into()));
    }
    if !(0.0..2.0).contains(&gamma) {
        return Err(Error::Config(format!("gamma must lie in [0, 2), got {gamma}")));
    }

    // Sequential rejection: each new centre must clear every accepted one.
    let mut thetas: Vec<Vec<f64>> = Vec::with_capacity(clusters);
    let mut attempts = 0;
    while thetas.len() < clusters {
        if attempts >= MAX_SEPARATION_ATTEMPTS {
            return Err(Error::InfeasibleSeparation {
                clusters,
                dim,
                gamma,
                attempts,
            });
        }
        attempts += 1;
        let cand = unit_gaussian(rng, dim);
        if thetas.iter().all(|t| distance(t, &cand) >= gamma) {
            thetas.push(cand);
        }
    }

    let assignment = match assignment {
        Assignment::RoundRobin => (0..users).map(|i| i % clusters).collect(),
        Assignment::Random => {
            // Every cluster keeps at least one member.
            let mut a: Vec<usize> = (0..users)
                .map(|i| if i < clusters { i } else { rng.random_range(0..clusters) })
                .collect();
            use rand::seq::SliceRandom;
            a.shuffle(rng);
            a
        }
    };

    let gamma_actual = {
        let refs: Vec<&[f64]> = thetas.iter().map(Vec::as_slice).collect();
        min_pairwise_distance(&refs)
    };
    let models = thetas
        .into_iter()
        .map(|t| match kind {
            RewardKind::Linear => RewardModel::Linear(t),
            RewardKind::Square => RewardModel::Square(t),
        })
        .collect();

    Ok(GroundTruth {
        users,
        clusters,
        assignment,
        models,
        gamma: gamma_actual,
        arm_law: ArmLaw::Sphere { dim },
    })
}

/// `k` independent uniform draws from the unit sphere in `R^dim`.
pub fn sample_arm_set<R: Rng + ?Sized>(rng: &mut R, k: usize, dim: usize) -> Result<ArmSet> {
    if k < 2 {
        return Err(Error::Config(format!("arm sets need at least 2 arms, got {k}")));
    }
    if dim == 0 {
        return Err(Error::Config("dimension must be >= 1".into()));
    }
    Ok(ArmSet::from_arms((0..k).map(|_| unit_gaussian(rng, dim)).collect()))
}

pub fn true_reward(gt: &GroundTruth, user: usize, x: &[f64]) -> Result<f64> {
    gt.model_of(user)?.eval(x)
}

/// `P(x1 beats x2) = mu(f(x1) - f(x2))`.
pub fn preference_probability(f1: f64, f2: f64) -> f64 {
    logistic(f1 - f2)
}

pub fn sample_preference_from_rewards<R: Rng + ?Sized>(rng: &mut R, f1: f64, f2: f64) -> bool {
    rng.random::<f64>() < preference_probability(f1, f2)
}

pub fn sample_preference<R: Rng + ?Sized>(
    rng: &mut R,
    gt: &GroundTruth,
    user: usize,
    x1: &[f64],
    x2: &[f64],
) -> Result<bool> {
    let model = gt.model_of(user)?;
    let (f1, f2) = (model.eval(x1)?, model.eval(x2)?);
    Ok(sample_preference_from_rewards(rng, f1, f2))
}

/// `2 max f - f(x1) - f(x2)` from precomputed arm rewards.
pub fn regret_from_rewards(rewards: &[f64], first: usize, second: usize) -> Result<f64> {
    let len = rewards.len();
    let get = |i: usize| rewards.get(i).copied().ok_or(Error::ArmNotInSet { index: i, len });
    let (f1, f2) = (get(first)?, get(second)?);
    let best = rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    // Both terms are non-negative; summing them separately keeps the result >= 0.
    Ok((best - f1) + (best - f2))
}

pub fn instantaneous_regret(
    gt: &GroundTruth,
    user: usize,
    arms: &ArmSet,
    first: usize,
    second: usize,
) -> Result<f64> {
    let rewards = gt.arm_rewards(user, arms)?;
    regret_from_rewards(&rewards, first, second)
}

pub fn sample_user<R: Rng + ?Sized>(rng: &mut R, users: usize) -> usize {
    if users <= 1 {
        0
    } else {
        rng.random_range(0..users)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn single_cluster_population() {
        let gt = generate_clustered_users(&mut rng(1), 4, 1, 3, 0.5, RewardKind::Linear).unwrap();
        assert_eq!(gt.assignment, vec![0; 4]);
        assert_eq!(gt.models.len(), 1);
        assert!(gt.gamma.is_infinite());
    }

    #[test]
    fn large_population_is_balanced() {
        let gt = generate_clustered_users(&mut rng(2), 200, 5, 20, 0.5, RewardKind::Linear).unwrap();
        for j in 0..5 {
            assert_eq!(gt.assignment.iter().filter(|&&a| a == j).count(), 40);
        }
    }

    #[test]
    fn wide_gap_in_the_plane() {
        let gt = generate_clustered_users(&mut rng(3), 6, 2, 2, 1.9, RewardKind::Linear).unwrap();
        let a = gt.models[0].parameter().unwrap();
        let b = gt.models[1].parameter().unwrap();
        assert!(distance(a, b) >= 1.9);
    }

    #[test]
    fn infeasible_gap_is_a_config_error() {
        let err = generate_clustered_users(&mut rng(4), 10, 5, 1, 1.0, RewardKind::Linear).unwrap_err();
        assert!(matches!(err, Error::InfeasibleSeparation { .. }));
        assert!(err.is_config());
        assert!(generate_clustered_users(&mut rng(4), 2, 3, 2, 0.1, RewardKind::Linear).is_err());
        assert!(generate_clustered_users(&mut rng(4), 2, 1, 2, 2.0, RewardKind::Linear).is_err());
    }

    #[test]
    fn random_assignment_covers_every_cluster() {
        let gt = generate_clustered_users_with(
            &mut rng(9),
            12,
            4,
            3,
            0.2,
            RewardKind::Linear,
            Assignment::Random,
        )
        .unwrap();
        for j in 0..4 {
            assert!(gt.assignment.contains(&j));
        }
    }

    #[test]
    fn arm_sets() {
        let arms = sample_arm_set(&mut rng(5), 20, 20).unwrap();
        assert_eq!(arms.len(), 20);
        for x in &arms.arms {
            let n: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-12);
        }
        let line = sample_arm_set(&mut rng(6), 2, 1).unwrap();
        for x in &line.arms {
            assert!(x[0] == 1.0 || x[0] == -1.0);
        }
        assert!(sample_arm_set(&mut rng(6), 1, 3).is_err());
    }

    #[test]
    fn sphere_second_moment() {
        let mut r = rng(7);
        let n = 100_000;
        let mut m = [[0.0; 3]; 3];
        for _ in 0..n {
            let x = unit_gaussian(&mut r, 3);
            for a in 0..3 {
                for b in 0..3 {
                    m[a][b] += x[a] * x[b];
                }
            }
        }
        for a in 0..3 {
            for b in 0..3 {
                let target = if a == b { 1.0 / 3.0 } else { 0.0 };
                assert!((m[a][b] / n as f64 - target).abs() < 0.02);
            }
        }
    }

    fn gt_with(model: RewardModel) -> GroundTruth {
        GroundTruth {
            users: 1,
            clusters: 1,
            assignment: vec![0],
            models: vec![model],
            gamma: f64::INFINITY,
            arm_law: ArmLaw::Sphere { dim: 2 },
        }
    }

    #[test]
    fn reward_values() {
        let lin = gt_with(RewardModel::Linear(vec![1.0, 0.0]));
        assert_eq!(true_reward(&lin, 0, &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(true_reward(&lin, 0, &[0.0, 1.0]).unwrap(), 0.0);
        assert!(matches!(true_reward(&lin, 3, &[0.0, 1.0]), Err(Error::UnknownUser(3))));
        let sq = gt_with(RewardModel::Square(vec![0.6, 0.8]));
        assert!((true_reward(&sq, 0, &[0.8, 0.6]).unwrap() - 0.9216).abs() < 1e-15);
    }

    #[test]
    fn preference_probabilities() {
        assert_eq!(preference_probability(0.3, 0.3), 0.5);
        assert!((preference_probability(3f64.ln(), 0.0) - 0.75).abs() < 1e-15);
        let mut r = rng(8);
        let n = 100_000;
        let wins = (0..n).filter(|_| sample_preference_from_rewards(&mut r, 0.7, 0.3)).count();
        assert!((wins as f64 / n as f64 - logistic(0.4)).abs() < 0.01);
    }

    #[test]
    fn regret_values() {
        let rewards = [1.0, 0.8, 0.6];
        assert_eq!(regret_from_rewards(&rewards, 0, 0).unwrap(), 0.0);
        assert!((regret_from_rewards(&rewards, 1, 2).unwrap() - 0.6).abs() < 1e-15);
        assert!(matches!(
            regret_from_rewards(&rewards, 1, 3),
            Err(Error::ArmNotInSet { index: 3, len: 3 })
        ));
    }

    #[test]
    fn regret_matches_brute_force() {
        let mut r = rng(10);
        let gt = generate_clustered_users(&mut r, 3, 3, 4, 0.3, RewardKind::Square).unwrap();
        for _ in 0..50 {
            let arms = sample_arm_set(&mut r, 6, 4).unwrap();
            let user = sample_user(&mut r, 3);
            let (i, j) = (r.random_range(0..6), r.random_range(0..6));
            let theta = gt.models[gt.assignment[user]].parameter().unwrap();
            let f = |x: &[f64]| theta.iter().zip(x).map(|(a, b)| a * b).sum::<f64>().powi(2);
            let mut best = f64::NEG_INFINITY;
            for x in &arms.arms {
                best = best.max(f(x));
            }
            let expected = 2.0 * best - f(&arms.arms[i]) - f(&arms.arms[j]);
            let got = instantaneous_regret(&gt, user, &arms, i, j).unwrap();
            assert!((got - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn user_sampling() {
        let mut r = rng(12);
        assert!((0..100).all(|_| sample_user(&mut r, 1) == 0));
        let n = 100_000;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            counts[sample_user(&mut r, 4)] += 1;
        }
        for c in counts {
            assert!((c as f64 / n as f64 - 0.25).abs() < 0.01);
        }
        assert!(sample_user(&mut r, 200) < 200);
    }

    #[test]
    fn same_seed_same_environment() {
        let a = generate_clustered_users(&mut rng(13), 10, 3, 5, 0.4, RewardKind::Linear).unwrap();
        let b = generate_clustered_users(&mut rng(13), 10, 3, 5, 0.4, RewardKind::Linear).unwrap();
        assert_eq!(a, b);
        let x = sample_arm_set(&mut rng(14), 5, 5).unwrap();
        let y = sample_arm_set(&mut rng(14), 5, 5).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn catalog_arm_sets() {
        let gt = GroundTruth {
            users: 1,
            clusters: 1,
            assignment: vec![0],
            models: vec![RewardModel::Table(vec![0.1, 0.2, 0.3, 0.4])],
            gamma: f64::INFINITY,
            arm_law: ArmLaw::Catalog {
                items: vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, 0.0], vec![0.0, -1.0]],
            },
        };
        let arms = gt.sample_arm_set(&mut rng(15), 3).unwrap();
        let items = arms.items.clone().unwrap();
        let rewards = gt.arm_rewards(0, &arms).unwrap();
        for (k, &i) in items.iter().enumerate() {
            assert_eq!(rewards[k], [0.1, 0.2, 0.3, 0.4][i]);
        }
        assert!(gt.sample_arm_set(&mut rng(15), 5).is_err());
        assert!(true_reward(&gt, 0, &[1.0, 0.0]).is_err());
    }

    proptest! {
        #[test]
        fn generated_parameters_respect_invariants(seed in 0u64..500, m in 1usize..5, d in 2usize..8) {
            let gamma = 0.5;
            let gt = generate_clustered_users(&mut rng(seed), 2 * m, m, d, gamma, RewardKind::Linear).unwrap();
            for model in &gt.models {
                let t = model.parameter().unwrap();
                let n: f64 = t.iter().map(|v| v * v).sum::<f64>().sqrt();
                prop_assert!((n - 1.0).abs() < 1e-12);
            }
            for a in 0..m {
                for b in (a + 1)..m {
                    prop_assert!(distance(gt.models[a].parameter().unwrap(), gt.models[b].parameter().unwrap()) >= gamma);
                }
            }
        }

        #[test]
        fn preference_antisymmetry(f1 in -1.0f64..1.0, f2 in -1.0f64..1.0) {
            let s = preference_probability(f1, f2) + preference_probability(f2, f1);
            prop_assert!((s - 1.0).abs() < 1e-15);
        }

        #[test]
        fn regret_is_nonnegative(seed in 0u64..500) {
            let mut r = rng(seed);
            let gt = generate_clustered_users(&mut r, 2, 2, 3, 0.3, RewardKind::Linear).unwrap();
            let arms = sample_arm_set(&mut r, 5, 3).unwrap();
            let rewards = gt.arm_rewards(1, &arms).unwrap();
            let best = rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            for i in 0..5 {
                for j in 0..5 {
                    let reg = regret_from_rewards(&rewards, i, j).unwrap();
                    prop_assert!(reg >= 0.0);
                    prop_assert_eq!(reg == 0.0, rewards[i] == best && rewards[j] == best);
                }
            }
            for x in &arms.arms {
                prop_assert!(x.iter().map(|v| v * v).sum::<f64>().sqrt() <= 1.0 + 1e-12);
            }
        }
    }
}
