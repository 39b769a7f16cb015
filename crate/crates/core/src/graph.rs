//! User graph with monotone edge deletion. Connected components are the inferred clusters.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Disjoint-set forest with path halving and union by size.
#[derive(Debug, Clone)]
struct DisjointSet {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (mut a, mut b) = (self.find(a), self.find(b));
        if a == b {
            return;
        }
        if self.size[a] < self.size[b] {
            std::mem::swap(&mut a, &mut b);
        }
        self.parent[b] = a;
        self.size[a] += self.size[b];
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Deletion {
    pub round: usize,
    pub i: usize,
    pub l: usize,
}

#[derive(Debug, Clone)]
pub struct ClusterGraph {
    users: usize,
    adjacency: Vec<Vec<bool>>,
    edge_count: usize,
    deletions: Vec<Deletion>,
    /// Canonical component id (the smallest member) per user; `None` when stale.
    labels: Option<Vec<usize>>,
}

impl ClusterGraph {
    /// Complete graph over `users` vertices.
    pub fn complete(users: usize) -> Self {
        let adjacency = (0..users)
            .map(|i| (0..users).map(|j| i != j).collect())
            .collect();
        Self {
            users,
            adjacency,
            edge_count: users * users.saturating_sub(1) / 2,
            deletions: Vec::new(),
            labels: None,
        }
    }

    /// Graph with no edges: every user is its own component.
    pub fn edgeless(users: usize) -> Self {
        Self {
            users,
            adjacency: vec![vec![false; users]; users],
            edge_count: 0,
            deletions: Vec::new(),
            labels: None,
        }
    }

    pub fn users(&self) -> usize {
        self.users
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    pub fn has_edge(&self, i: usize, l: usize) -> bool {
        self.adjacency[i][l]
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.adjacency[i]
            .iter()
            .enumerate()
            .filter_map(|(l, &e)| e.then_some(l))
    }

    pub fn deletions(&self) -> &[Deletion] {
        &self.deletions
    }

    /// Removes `(i, l)`; returns false if the edge was already absent.
    pub fn remove_edge(&mut self, i: usize, l: usize, round: usize) -> bool {
        if i == l || !self.adjacency[i][l] {
            return false;
        }
        self.adjacency[i][l] = false;
        self.adjacency[l][i] = false;
        self.edge_count -= 1;
        self.deletions.push(Deletion { round, i, l });
        self.labels = None;
        true
    }

    fn labels(&mut self) -> &[usize] {
        if self.labels.is_none() {
            let mut ds = DisjointSet::new(self.users);
            for i in 0..self.users {
                for l in (i + 1)..self.users {
                    if self.adjacency[i][l] {
                        ds.union(i, l);
                    }
                }
            }
            let mut root_min = vec![usize::MAX; self.users];
            for i in 0..self.users {
                let r = ds.find(i);
                root_min[r] = root_min[r].min(i);
            }
            let labels = (0..self.users).map(|i| root_min[ds.find(i)]).collect();
            self.labels = Some(labels);
        }
        self.labels.as_deref().unwrap()
    }

    /// Component id of every user; ids are the smallest member of each component.
    pub fn component_ids(&mut self) -> Vec<usize> {
        self.labels().to_vec()
    }

    pub fn component_id(&mut self, i: usize) -> usize {
        self.labels()[i]
    }

    /// Members of the component containing `i`, in increasing order.
    pub fn connected_component(&mut self, i: usize) -> Vec<usize> {
        let labels = self.labels();
        let target = labels[i];
        labels
            .iter()
            .enumerate()
            .filter_map(|(l, &c)| (c == target).then_some(l))
            .collect()
    }

    pub fn component_count(&mut self) -> usize {
        let labels = self.labels();
        labels.iter().enumerate().filter(|(i, &c)| *i == c).count()
    }

    /// Removes every edge `(i, l)` with `dist_scale * |theta_i - theta_l| > f(T_i) + f(T_l)`.
    ///
    /// `dist_scale` is 1 for the linear algorithm and `sqrt(width)` for the neural one.
    pub fn maybe_disconnect<E: AsRef<[f64]>>(
        &mut self,
        i: usize,
        estimates: &[E],
        counts: &[usize],
        threshold: impl Fn(usize) -> f64,
        dist_scale: f64,
        round: usize,
    ) -> Vec<(usize, usize)> {
        let fi = threshold(counts[i]);
        let mut removed = Vec::new();
        if fi.is_infinite() {
            return removed;
        }
        let theta_i = estimates[i].as_ref();
        let candidates: Vec<usize> = self.neighbors(i).collect();
        for l in candidates {
            let fl = threshold(counts[l]);
            let dist = theta_i
                .iter()
                .zip(estimates[l].as_ref())
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            if dist_scale * dist > fi + fl {
                self.remove_edge(i, l, round);
                removed.push((i, l));
            }
        }
        removed
    }

    pub fn write_deletions_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let ctx = || format!("writing {}", path.display());
        let mut f = std::io::BufWriter::new(
            std::fs::File::create(path).map_err(|e| Error::io(ctx(), e))?,
        );
        writeln!(f, "round,i,l").map_err(|e| Error::io(ctx(), e))?;
        for d in &self.deletions {
            writeln!(f, "{},{},{}", d.round, d.i, d.l).map_err(|e| Error::io(ctx(), e))?;
        }
        f.flush().map_err(|e| Error::io(ctx(), e))
    }
}

/// Constants of the edge-deletion threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ThresholdConfig {
    pub lambda: f64,
    pub kappa_mu: f64,
    pub delta: f64,
    /// Feature dimension (linear) or effective dimension (neural).
    pub dim: f64,
    pub users: usize,
    /// Instance-dependent item-regularity constant.
    pub lambda_x_tilde: f64,
    /// Multiplier applied to the whole threshold.
    pub scale: f64,
    /// Exponent `e` in the `sqrt(lambda * kappa_mu^e)` term of the linear threshold.
    pub kappa_exponent: f64,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            kappa_mu: crate::DEFAULT_KAPPA_MU,
            delta: 0.1,
            dim: 10.0,
            users: 50,
            lambda_x_tilde: 0.5,
            scale: 1.0,
            kappa_exponent: -1.0,
        }
    }
}

impl ThresholdConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lambda", self.lambda),
            ("kappa_mu", self.kappa_mu),
            ("dim", self.dim),
            ("lambda_x_tilde", self.lambda_x_tilde),
            ("scale", self.scale),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("threshold {name} must be positive, got {v}")));
            }
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Config(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        if self.users == 0 {
            return Err(Error::Config("threshold users must be >= 1".into()));
        }
        Ok(())
    }
}

/// Linear deletion threshold; `+inf` for users that were never observed.
pub fn threshold_linear(count: usize, cfg: &ThresholdConfig) -> f64 {
    if count == 0 {
        return f64::INFINITY;
    }
    let t = count as f64;
    let (lambda, kappa, d) = (cfg.lambda, cfg.kappa_mu, cfg.dim);
    let reg = (lambda * kappa.powf(cfg.kappa_exponent)).sqrt();
    let conf = (2.0 * (cfg.users as f64 / cfg.delta).ln()
        + d * (1.0 + 4.0 * t * kappa / (d * lambda)).ln())
    .sqrt();
    cfg.scale * (reg + conf) / (kappa * (2.0 * cfg.lambda_x_tilde * t).sqrt())
}

/// Neural deletion threshold `(beta_T + B sqrt(lambda/kappa) + 1) / sqrt(2 lambda_x T)`.
pub fn threshold_neural(count: usize, cfg: &ThresholdConfig, beta_t: f64, b: f64) -> f64 {
    if count == 0 {
        return f64::INFINITY;
    }
    let nu = beta_t + b * (cfg.lambda / cfg.kappa_mu).sqrt() + 1.0;
    cfg.scale * nu / (2.0 * cfg.lambda_x_tilde * count as f64).sqrt()
}
