//! Information matrices `V = c I + sum_s z_s z_s^T` over high-dimensional feature
//! differences, handled through the `n x n` kernel matrix of the rows so that the
//! `p x p` matrix is never formed.

use crate::error::{Error, Result};

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Every history row with its inner products against all earlier rows.
#[derive(Debug, Clone, Default)]
pub struct GramStore {
    rows: Vec<Vec<f64>>,
    /// `gram[i][j] = <z_i, z_j>` for `j <= i`.
    gram: Vec<Vec<f64>>,
}

impl GramStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, z: Vec<f64>) -> usize {
        let mut g: Vec<f64> = self.rows.iter().map(|r| dot(r, &z)).collect();
        g.push(dot(&z, &z));
        self.rows.push(z);
        self.gram.push(g);
        self.rows.len() - 1
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i]
    }

    pub fn inner(&self, i: usize, j: usize) -> f64 {
        if j <= i {
            self.gram[i][j]
        } else {
            self.gram[j][i]
        }
    }
}

/// Lower Cholesky factor of `ridge I + scale G` for a subset of store rows, grown one
/// row at a time. Rebuilding from scratch pushes the same rows in the same order, so
/// both paths give bitwise-identical factors.
#[derive(Debug, Clone)]
pub struct GramFactor {
    ridge: f64,
    scale: f64,
    rows: Vec<usize>,
    l: Vec<Vec<f64>>,
}

impl GramFactor {
    pub fn new(ridge: f64, scale: f64) -> Self {
        Self {
            ridge,
            scale,
            rows: Vec::new(),
            l: Vec::new(),
        }
    }

    pub fn from_rows(ridge: f64, scale: f64, store: &GramStore, rows: &[usize]) -> Result<Self> {
        let mut f = Self::new(ridge, scale);
        for &r in rows {
            f.push(store, r)?;
        }
        Ok(f)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[usize] {
        &self.rows
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    pub fn push(&mut self, store: &GramStore, row: usize) -> Result<()> {
        let n = self.rows.len();
        let mut new = Vec::with_capacity(n + 1);
        for j in 0..n {
            let a = self.scale * store.inner(row, self.rows[j]);
            let lj = &self.l[j];
            let s = a - dot(&new[..j], &lj[..j]);
            new.push(s / lj[j]);
        }
        let diag = self.ridge + self.scale * store.inner(row, row) - dot(&new, &new);
        if !(diag > 0.0) || !diag.is_finite() {
            return Err(Error::NotPositiveDefinite("kernel information matrix"));
        }
        new.push(diag.sqrt());
        self.rows.push(row);
        self.l.push(new);
        Ok(())
    }

    /// `L^{-1} b`.
    pub fn solve_lower(&self, b: &[f64]) -> Vec<f64> {
        let mut x: Vec<f64> = Vec::with_capacity(b.len());
        for (i, li) in self.l.iter().enumerate() {
            let s = b[i] - dot(&x[..i], &li[..i]);
            x.push(s / li[i]);
        }
        x
    }

    pub fn logdet(&self) -> f64 {
        self.l
            .iter()
            .enumerate()
            .fold(0.0, |acc, (i, r)| acc + 2.0 * r[i].ln())
    }

    /// Smallest squared pivot; equals `ridge` when no rows are present. Every pivot of
    /// `ridge I + G` with `G` a Gram matrix is at least `ridge`.
    pub fn min_pivot(&self) -> f64 {
        self.l
            .iter()
            .enumerate()
            .map(|(i, r)| r[i] * r[i])
            .fold(self.ridge, f64::min)
    }

    /// Inner products of the factor's rows with an arbitrary vector.
    pub fn project(&self, store: &GramStore, v: &[f64]) -> Vec<f64> {
        self.rows.iter().map(|&r| dot(store.row(r), v)).collect()
    }

    /// `z^T V^{-1} z` for `V = ridge I + sum_s z_s z_s^T` (requires `scale = 1`), where
    /// `b = [<z_s, z>]_s` and `z_sq = |z|^2`.
    pub fn inverse_quadratic(&self, b: &[f64], z_sq: f64) -> f64 {
        let w = self.solve_lower(b);
        (z_sq - dot(&w, &w)) / self.ridge
    }
}
