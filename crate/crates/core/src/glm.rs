//! Regularized logistic maximum-likelihood estimation for pairwise preference data.
//!
//! Each observation is a difference feature `delta = phi(x1) - phi(x2)` and a bit `y`
//! (1 iff `x1` was preferred). The estimator minimizes
//!
//! ```text
//! -sum_s [ y_s log mu(theta . delta_s) + (1 - y_s) log mu(-theta . delta_s) ] + lambda/2 |theta|^2
//! ```
//!
//! with a damped Newton method.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Logistic link `1 / (1 + e^-z)`, evaluated without overflow for large `|z|`.
pub fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^a)`.
fn softplus(a: f64) -> f64 {
    a.max(0.0) + (-a.abs()).exp().ln_1p()
}

/// `log mu(z) = -log(1 + e^-z)`.
pub fn log_logistic(z: f64) -> f64 {
    -softplus(-z)
}

/// Derivative of the logistic link, `mu(z) (1 - mu(z))`.
pub fn logistic_derivative(z: f64) -> f64 {
    let m = logistic(z);
    m * (1.0 - m)
}

/// Lower bound on the link derivative over `[-r, r]` when `r` bounds every reward gap.
pub fn kappa_mu_bound(reward_gap_bound: f64) -> f64 {
    logistic_derivative(reward_gap_bound.abs())
}

/// Difference features with binary outcomes, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceDataset {
    dim: usize,
    deltas: Vec<f64>,
    labels: Vec<bool>,
}

impl PreferenceDataset {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            deltas: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn push(&mut self, delta: &[f64], y: bool) -> Result<()> {
        if delta.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: delta.len(),
            });
        }
        self.deltas.extend_from_slice(delta);
        self.labels.push(y);
        Ok(())
    }

    /// Appends the difference `x1 - x2` as a new row.
    pub fn push_pair(&mut self, x1: &[f64], x2: &[f64], y: bool) -> Result<()> {
        if x1.len() != x2.len() {
            return Err(Error::DimensionMismatch {
                expected: x1.len(),
                got: x2.len(),
            });
        }
        let delta: Vec<f64> = x1.iter().zip(x2).map(|(a, b)| a - b).collect();
        self.push(&delta, y)
    }

    pub fn extend_from(&mut self, other: &PreferenceDataset) -> Result<()> {
        if other.dim != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: other.dim,
            });
        }
        self.deltas.extend_from_slice(&other.deltas);
        self.labels.extend_from_slice(&other.labels);
        Ok(())
    }

    pub fn row(&self, i: usize) -> (&[f64], bool) {
        (&self.deltas[i * self.dim..(i + 1) * self.dim], self.labels[i])
    }

    pub fn rows(&self) -> impl Iterator<Item = (&[f64], bool)> + '_ {
        self.deltas
            .chunks_exact(self.dim.max(1))
            .zip(self.labels.iter().copied())
    }

    /// Regularized information matrix `v0 * I + sum delta delta^T`.
    pub fn outer_product_sum(&self, v0: f64) -> DMatrix<f64> {
        let mut v = DMatrix::identity(self.dim, self.dim) * v0;
        for (delta, _) in self.rows() {
            let d = DVector::from_column_slice(delta);
            v.ger(1.0, &d, &d, 1.0);
        }
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MleConfig {
    pub lambda: f64,
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for MleConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            tol: 1e-6,
            max_iters: 100,
        }
    }
}

impl MleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be > 0, got {}", self.lambda)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config(format!("tol must be > 0, got {}", self.tol)));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MleFit {
    pub theta: Vec<f64>,
    pub iterations: usize,
    pub grad_norm: f64,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_dim(theta: &[f64], data: &PreferenceDataset) -> Result<()> {
    if theta.len() != data.dim {
        return Err(Error::DimensionMismatch {
            expected: data.dim,
            got: theta.len(),
        });
    }
    Ok(())
}

fn loss_unchecked(theta: &[f64], data: &PreferenceDataset, lambda: f64) -> f64 {
    let mut loss = 0.5 * lambda * dot(theta, theta);
    for (delta, y) in data.rows() {
        let z = dot(theta, delta);
        loss -= if y { log_logistic(z) } else { log_logistic(-z) };
    }
    loss
}

fn gradient_unchecked(theta: &[f64], data: &PreferenceDataset, lambda: f64) -> Vec<f64> {
    let mut g: Vec<f64> = theta.iter().map(|t| lambda * t).collect();
    for (delta, y) in data.rows() {
        let r = logistic(dot(theta, delta)) - if y { 1.0 } else { 0.0 };
        for (gi, di) in g.iter_mut().zip(delta) {
            *gi += r * di;
        }
    }
    g
}

/// Negative log-likelihood plus `lambda/2 |theta|^2`.
pub fn nll_loss(theta: &[f64], data: &PreferenceDataset, lambda: f64) -> Result<f64> {
    check_dim(theta, data)?;
    Ok(loss_unchecked(theta, data, lambda))
}

/// Gradient `sum (mu(theta . delta) - y) delta + lambda theta`.
pub fn nll_gradient(theta: &[f64], data: &PreferenceDataset, lambda: f64) -> Result<Vec<f64>> {
    check_dim(theta, data)?;
    Ok(gradient_unchecked(theta, data, lambda))
}

fn hessian(theta: &[f64], data: &PreferenceDataset, lambda: f64) -> DMatrix<f64> {
    let d = data.dim;
    let mut h = DMatrix::identity(d, d) * lambda;
    for (delta, _) in data.rows() {
        let w = logistic_derivative(dot(theta, delta));
        for c in 0..d {
            let wc = w * delta[c];
            if wc == 0.0 {
                continue;
            }
            for r in c..d {
                h[(r, c)] += wc * delta[r];
            }
        }
    }
    for c in 0..d {
        for r in (c + 1)..d {
            h[(c, r)] = h[(r, c)];
        }
    }
    h
}

fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Minimizes the regularized negative log-likelihood.
///
/// The returned fit always carries the best iterate seen; `converged` is false when the
/// gradient norm is still above `tol` after `max_iters` Newton steps.
pub fn fit_mle(
    data: &PreferenceDataset,
    config: &MleConfig,
    warm_start: Option<&[f64]>,
) -> Result<MleFit> {
    config.validate()?;
    let d = data.dim;
    let mut theta = match warm_start {
        Some(w) => {
            check_dim(w, data)?;
            w.to_vec()
        }
        None => vec![0.0; d],
    };
    let lambda = config.lambda;
    let mut loss = loss_unchecked(&theta, data, lambda);
    let mut grad = gradient_unchecked(&theta, data, lambda);
    let mut gnorm = norm(&grad);

    let mut iterations = 0;
    while gnorm > config.tol && iterations < config.max_iters {
        iterations += 1;
        let h = hessian(&theta, data, lambda);
        let g = DVector::from_column_slice(&grad);
        let direction: Vec<f64> = match h.cholesky() {
            Some(chol) => (-chol.solve(&g)).as_slice().to_vec(),
            None => grad.iter().map(|x| -x).collect(),
        };
        let slope = dot(&grad, &direction);
        let (direction, slope) = if slope < 0.0 {
            (direction, slope)
        } else {
            let sd: Vec<f64> = grad.iter().map(|x| -x).collect();
            let s = -dot(&grad, &grad);
            (sd, s)
        };

        // Armijo backtracking.
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let candidate: Vec<f64> = theta
                .iter()
                .zip(&direction)
                .map(|(t, p)| t + step * p)
                .collect();
            let cand_loss = loss_unchecked(&candidate, data, lambda);
            if cand_loss <= loss + 1e-4 * step * slope {
                theta = candidate;
                loss = cand_loss;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
        grad = gradient_unchecked(&theta, data, lambda);
        gnorm = norm(&grad);
    }

    Ok(MleFit {
        theta,
        iterations,
        grad_norm: gnorm,
        converged: gnorm <= config.tol,
    })
}
