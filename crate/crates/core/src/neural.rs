//! Fully connected ReLU network `h(x) = W_L relu(W_{L-1} ... relu(W_1 x))` without biases,
//! its parameter gradient, the symmetric initialization that makes `h(x; theta_0) = 0` on
//! augmented inputs, pairwise-preference training and the effective dimension.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glm::{log_logistic, logistic};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NnConfig {
    /// Hidden width `m_NN`; must be even.
    pub width: usize,
    /// Number of weight layers `L >= 2`.
    pub depth: usize,
    /// Input dimension after augmentation; must be even.
    pub input_dim: usize,
    pub step_size: f64,
    pub train_iters: usize,
    pub lambda: f64,
}

impl Default for NnConfig {
    fn default() -> Self {
        Self {
            width: 64,
            depth: 2,
            input_dim: 20,
            step_size: 0.01,
            train_iters: 100,
            lambda: 1.0,
        }
    }
}

impl NnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width < 2 || self.width % 2 != 0 {
            return Err(Error::Config(format!("width must be even and >= 2, got {}", self.width)));
        }
        if self.depth < 2 {
            return Err(Error::Config(format!("depth must be >= 2, got {}", self.depth)));
        }
        if self.input_dim < 2 || self.input_dim % 2 != 0 {
            return Err(Error::Config(format!(
                "input_dim must be even and >= 2, got {}",
                self.input_dim
            )));
        }
        if !(self.step_size > 0.0) || !(self.lambda > 0.0) {
            return Err(Error::Config("step_size and lambda must be positive".into()));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        param_count(self.input_dim, self.width, self.depth)
    }
}

/// Number of weights for the given layer shapes.
pub fn param_count(input_dim: usize, width: usize, depth: usize) -> usize {
    input_dim * width + width * width * depth.saturating_sub(2) + width
}

/// Weight matrices `W_1 (m x d)`, `W_l (m x m)` and `W_L (1 x m)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NnParams {
    layers: Vec<DMatrix<f64>>,
}

impl NnParams {
    pub fn from_layers(layers: Vec<DMatrix<f64>>) -> Result<Self> {
        if layers.len() < 2 {
            return Err(Error::Config("a network needs at least two layers".into()));
        }
        for w in layers.windows(2) {
            if w[1].ncols() != w[0].nrows() {
                return Err(Error::DimensionMismatch {
                    expected: w[0].nrows(),
                    got: w[1].ncols(),
                });
            }
        }
        if layers.last().unwrap().nrows() != 1 {
            return Err(Error::Config("the output layer must have one row".into()));
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[DMatrix<f64>] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].ncols()
    }

    pub fn width(&self) -> usize {
        self.layers[0].nrows()
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn len(&self) -> usize {
        self.layers.iter().map(|w| w.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Column-major `vec` of every layer, concatenated from the input layer outwards.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        for w in &self.layers {
            out.extend_from_slice(w.as_slice());
        }
        out
    }

    pub fn unflatten(input_dim: usize, width: usize, depth: usize, flat: &[f64]) -> Result<Self> {
        let p = param_count(input_dim, width, depth);
        if flat.len() != p || depth < 2 {
            return Err(Error::DimensionMismatch {
                expected: p,
                got: flat.len(),
            });
        }
        let mut shapes = vec![(width, input_dim)];
        shapes.extend(std::iter::repeat_n((width, width), depth - 2));
        shapes.push((1, width));
        let mut offset = 0;
        let layers = shapes
            .into_iter()
            .map(|(r, c)| {
                let w = DMatrix::from_column_slice(r, c, &flat[offset..offset + r * c]);
                offset += r * c;
                w
            })
            .collect();
        Ok(Self { layers })
    }

    /// Euclidean distance between two parameter vectors of the same shape.
    pub fn distance(&self, other: &NnParams) -> f64 {
        self.layers
            .iter()
            .zip(&other.layers)
            .map(|(a, b)| (a - b).norm_squared())
            .sum::<f64>()
            .sqrt()
    }

    fn sq_distance(&self, other: &NnParams) -> f64 {
        self.layers
            .iter()
            .zip(&other.layers)
            .map(|(a, b)| (a - b).norm_squared())
            .sum()
    }
}

impl AsRef<NnParams> for NnParams {
    fn as_ref(&self) -> &NnParams {
        self
    }
}

/// Normalizes `x` and stacks it twice: `(x, x) / (sqrt 2 |x|)`.
pub fn augment_input(x: &[f64]) -> Result<Vec<f64>> {
    let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::ZeroInput);
    }
    let half: Vec<f64> = x
        .iter()
        .map(|v| v / n * std::f64::consts::FRAC_1_SQRT_2)
        .collect();
    let mut out = half.clone();
    out.extend_from_slice(&half);
    Ok(out)
}

/// Block-diagonal hidden layers with `N(0, 4/m)` entries and an antisymmetric output
/// layer `(w, -w)` with `N(0, 2/m)` entries.
pub fn init_params<R: Rng + ?Sized>(rng: &mut R, cfg: &NnConfig) -> Result<NnParams> {
    cfg.validate()?;
    let m = cfg.width;
    let half = m / 2;
    let hidden = Normal::new(0.0, (4.0 / m as f64).sqrt()).expect("valid std");
    let output = Normal::new(0.0, (2.0 / m as f64).sqrt()).expect("valid std");

    let mut layers = Vec::with_capacity(cfg.depth);
    for l in 0..cfg.depth - 1 {
        let cols = if l == 0 { cfg.input_dim } else { m };
        let bc = cols / 2;
        let block = DMatrix::from_fn(half, bc, |_, _| hidden.sample(rng));
        let mut w = DMatrix::zeros(m, cols);
        w.view_mut((0, 0), (half, bc)).copy_from(&block);
        w.view_mut((half, bc), (half, bc)).copy_from(&block);
        layers.push(w);
    }
    let w: Vec<f64> = (0..half).map(|_| output.sample(rng)).collect();
    let mut out = DMatrix::zeros(1, m);
    for (j, v) in w.iter().enumerate() {
        out[(0, j)] = *v;
        out[(0, j + half)] = -*v;
    }
    layers.push(out);
    Ok(NnParams { layers })
}

struct Forward {
    /// Pre-activations of every hidden layer.
    pre: Vec<DMatrix<f64>>,
    /// Post-activations of every hidden layer.
    post: Vec<DMatrix<f64>>,
    out: DMatrix<f64>,
}

fn relu(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.map(|v| if v > 0.0 { v } else { 0.0 })
}

fn forward_batch(params: &NnParams, x: &DMatrix<f64>) -> Forward {
    let hidden = params.layers.len() - 1;
    let mut pre = Vec::with_capacity(hidden);
    let mut post: Vec<DMatrix<f64>> = Vec::with_capacity(hidden);
    for l in 0..hidden {
        let input = if l == 0 { x } else { &post[l - 1] };
        let z = &params.layers[l] * input;
        post.push(relu(&z));
        pre.push(z);
    }
    let out = &params.layers[hidden] * &post[hidden - 1];
    Forward { pre, post, out }
}

/// Gradients of `sum_c g_out[c] * h(x_c)` with respect to every layer.
fn backward_batch(
    params: &NnParams,
    x: &DMatrix<f64>,
    fwd: &Forward,
    g_out: &DMatrix<f64>,
) -> Vec<DMatrix<f64>> {
    let depth = params.layers.len();
    let mut grads = vec![DMatrix::zeros(0, 0); depth];
    grads[depth - 1] = g_out * fwd.post[depth - 2].transpose();
    let mut delta = params.layers[depth - 1].transpose() * g_out;
    for l in (0..depth - 1).rev() {
        delta.zip_apply(&fwd.pre[l], |d, z| {
            if z <= 0.0 {
                *d = 0.0;
            }
        });
        let input = if l == 0 { x } else { &fwd.post[l - 1] };
        grads[l] = &delta * input.transpose();
        if l > 0 {
            delta = params.layers[l].transpose() * &delta;
        }
    }
    grads
}

fn check_input(params: &NnParams, x: &[f64]) -> Result<()> {
    if x.len() != params.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: params.input_dim(),
            got: x.len(),
        });
    }
    Ok(())
}

pub fn forward(params: &NnParams, x: &[f64]) -> Result<f64> {
    check_input(params, x)?;
    let xm = DMatrix::from_column_slice(x.len(), 1, x);
    Ok(forward_batch(params, &xm).out[(0, 0)])
}

/// Network outputs for several inputs at once.
pub fn forward_many(params: &NnParams, xs: &[Vec<f64>]) -> Result<Vec<f64>> {
    if xs.is_empty() {
        return Ok(Vec::new());
    }
    for x in xs {
        check_input(params, x)?;
    }
    let d = params.input_dim();
    let xm = DMatrix::from_fn(d, xs.len(), |r, c| xs[c][r]);
    Ok(forward_batch(params, &xm).out.row(0).iter().copied().collect())
}

/// Gradient of `h(x; theta)` with respect to the flattened parameters.
pub fn grad_params(params: &NnParams, x: &[f64]) -> Result<Vec<f64>> {
    check_input(params, x)?;
    let xm = DMatrix::from_column_slice(x.len(), 1, x);
    let fwd = forward_batch(params, &xm);
    let grads = backward_batch(params, &xm, &fwd, &DMatrix::from_element(1, 1, 1.0));
    let mut out = Vec::with_capacity(params.len());
    for g in &grads {
        out.extend_from_slice(g.as_slice());
    }
    Ok(out)
}

/// Neural-tangent feature `g(x; theta_0) / sqrt(m)`.
pub fn ntk_feature(params0: &NnParams, x: &[f64]) -> Result<Vec<f64>> {
    let scale = 1.0 / (params0.width() as f64).sqrt();
    let mut g = grad_params(params0, x)?;
    for v in &mut g {
        *v *= scale;
    }
    Ok(g)
}

/// Pairwise preference data `(x1, x2, y)` with inputs stored as matrix columns.
#[derive(Debug, Clone)]
pub struct PairDataset {
    dim: usize,
    x1: Vec<f64>,
    x2: Vec<f64>,
    y: Vec<bool>,
}

impl PairDataset {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            x1: Vec::new(),
            x2: Vec::new(),
            y: Vec::new(),
        }
    }

    pub fn push(&mut self, x1: &[f64], x2: &[f64], y: bool) -> Result<()> {
        for x in [x1, x2] {
            if x.len() != self.dim {
                return Err(Error::DimensionMismatch {
                    expected: self.dim,
                    got: x.len(),
                });
            }
        }
        self.x1.extend_from_slice(x1);
        self.x2.extend_from_slice(x2);
        self.y.push(y);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `[X1 | X2]` as a `d x 2n` matrix.
    fn stacked(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut data = Vec::with_capacity(2 * n * self.dim);
        data.extend_from_slice(&self.x1);
        data.extend_from_slice(&self.x2);
        DMatrix::from_vec(self.dim, 2 * n, data)
    }
}

/// Minimized objective of `train`:
/// `-(1/m) sum [y log mu(h1 - h2) + (1 - y) log mu(h2 - h1)] + lambda/2 |theta - theta_0|^2`.
pub fn pair_loss(
    params: &NnParams,
    params0: &NnParams,
    data: &PairDataset,
    lambda: f64,
) -> Result<f64> {
    if data.dim != params.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: params.input_dim(),
            got: data.dim,
        });
    }
    Ok(loss_and_grad(params, params0, data, &data.stacked(), lambda, false).0)
}

fn loss_and_grad(
    params: &NnParams,
    params0: &NnParams,
    data: &PairDataset,
    stacked: &DMatrix<f64>,
    lambda: f64,
    with_grad: bool,
) -> (f64, Option<Vec<DMatrix<f64>>>) {
    let n = data.len();
    let inv_m = 1.0 / params.width() as f64;
    let reg = 0.5 * lambda * params.sq_distance(params0);
    if n == 0 {
        let grads = with_grad.then(|| {
            params
                .layers
                .iter()
                .zip(&params0.layers)
                .map(|(a, b)| (a - b) * lambda)
                .collect()
        });
        return (reg, grads);
    }
    let fwd = forward_batch(params, stacked);
    let mut nll = 0.0;
    let mut g_out = DMatrix::zeros(1, 2 * n);
    for s in 0..n {
        let z = fwd.out[(0, s)] - fwd.out[(0, n + s)];
        let y = data.y[s];
        nll -= if y { log_logistic(z) } else { log_logistic(-z) };
        let r = (logistic(z) - if y { 1.0 } else { 0.0 }) * inv_m;
        g_out[(0, s)] = r;
        g_out[(0, n + s)] = -r;
    }
    let loss = nll * inv_m + reg;
    if !with_grad {
        return (loss, None);
    }
    let mut grads = backward_batch(params, stacked, &fwd, &g_out);
    for ((g, w), w0) in grads.iter_mut().zip(&params.layers).zip(&params0.layers) {
        *g += (w - w0) * lambda;
    }
    (loss, Some(grads))
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub params: NnParams,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub steps: usize,
    /// Set when the loss rose for 10 consecutive steps and training stopped early.
    pub diverged: bool,
}

const DIVERGENCE_PATIENCE: usize = 10;

/// Full-batch gradient descent from `warm_start` (default `params0`); returns the
/// best iterate seen, so the loss never ends above its starting value.
pub fn train(
    params0: &NnParams,
    data: &PairDataset,
    cfg: &NnConfig,
    warm_start: Option<&NnParams>,
) -> Result<TrainResult> {
    cfg.validate()?;
    if data.dim != params0.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: params0.input_dim(),
            got: data.dim,
        });
    }
    if data.is_empty() {
        // The regularizer alone is minimized exactly at theta_0.
        let start = warm_start.unwrap_or(params0);
        let initial_loss = 0.5 * cfg.lambda * start.sq_distance(params0);
        return Ok(TrainResult {
            params: params0.clone(),
            initial_loss,
            final_loss: 0.0,
            steps: 0,
            diverged: false,
        });
    }
    let stacked = data.stacked();
    let mut params = warm_start.unwrap_or(params0).clone();
    let mut best = params.clone();
    let mut best_loss = f64::INFINITY;
    let mut initial_loss = f64::NAN;
    let mut prev_loss = f64::INFINITY;
    let mut rising = 0;
    let mut diverged = false;
    let mut steps = 0;

    for step in 0..=cfg.train_iters {
        let last = step == cfg.train_iters;
        let (loss, grads) = loss_and_grad(&params, params0, data, &stacked, cfg.lambda, !last);
        if step == 0 {
            initial_loss = loss;
        }
        if !loss.is_finite() {
            diverged = true;
            break;
        }
        if loss < best_loss {
            best_loss = loss;
            best.clone_from(&params);
        }
        if loss > prev_loss {
            rising += 1;
            if rising >= DIVERGENCE_PATIENCE {
                diverged = true;
                break;
            }
        } else {
            rising = 0;
        }
        prev_loss = loss;
        let Some(grads) = grads else { break };
        for (w, g) in params.layers.iter_mut().zip(&grads) {
            let eta = cfg.step_size;
            w.zip_apply(g, |a, b| *a -= eta * b);
        }
        steps += 1;
    }

    Ok(TrainResult {
        params: best,
        initial_loss,
        final_loss: best_loss,
        steps,
        diverged,
    })
}

/// `log det((kappa/lambda) H + I)` for a symmetric PSD accumulation `H`.
pub fn effective_dimension(feature_grams: &DMatrix<f64>, kappa_mu: f64, lambda: f64) -> Result<f64> {
    if feature_grams.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("feature gram matrix"));
    }
    if !feature_grams.is_square() {
        return Err(Error::DimensionMismatch {
            expected: feature_grams.nrows(),
            got: feature_grams.ncols(),
        });
    }
    let n = feature_grams.nrows();
    let a = feature_grams * (kappa_mu / lambda) + DMatrix::identity(n, n);
    let chol = a
        .cholesky()
        .ok_or(Error::NotPositiveDefinite("effective-dimension matrix"))?;
    Ok(2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>())
}

/// Running sum of outer products of feature differences.
#[derive(Debug, Clone)]
pub struct OuterProductAccumulator {
    sum: DMatrix<f64>,
}

impl OuterProductAccumulator {
    pub fn new(dim: usize) -> Self {
        Self {
            sum: DMatrix::zeros(dim, dim),
        }
    }

    pub fn add_difference(&mut self, a: &[f64], b: &[f64]) {
        let z = DVector::from_iterator(a.len(), a.iter().zip(b).map(|(x, y)| x - y));
        self.sum.ger(1.0, &z, &z, 1.0);
    }

    /// Adds every pairwise difference of `features` via
    /// `sum_{a<b} (f_a - f_b)(f_a - f_b)^T = K sum_a f_a f_a^T - s s^T`.
    pub fn add_all_pairs(&mut self, features: &[Vec<f64>]) {
        let k = features.len() as f64;
        let dim = self.sum.nrows();
        let mut s = DVector::zeros(dim);
        for f in features {
            let v = DVector::from_column_slice(f);
            self.sum.ger(k, &v, &v, 1.0);
            s += &v;
        }
        self.sum.ger(-1.0, &s, &s, 1.0);
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.sum
    }
}

const CHECKPOINT_HEADER: &str = "#duelcluster-nn v1";

/// Header line followed by the flattened parameters as little-endian f64.
pub fn checkpoint_bytes(params: &NnParams) -> Vec<u8> {
    let mut out = format!(
        "{CHECKPOINT_HEADER} d={} m={} L={}\n",
        params.input_dim(),
        params.width(),
        params.depth()
    )
    .into_bytes();
    for v in params.flatten() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn parse_checkpoint(bytes: &[u8]) -> Result<NnParams> {
    let bad = |msg: &str| Error::Feature(format!("invalid checkpoint: {msg}"));
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| bad("missing header line"))?;
    let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| bad("header is not UTF-8"))?;
    let rest = header
        .strip_prefix(CHECKPOINT_HEADER)
        .ok_or_else(|| bad("unexpected header"))?;
    let mut dims = [None; 3];
    for tok in rest.split_whitespace() {
        let (k, v) = tok.split_once('=').ok_or_else(|| bad("malformed header field"))?;
        let v: usize = v.parse().map_err(|_| bad("malformed header value"))?;
        match k {
            "d" => dims[0] = Some(v),
            "m" => dims[1] = Some(v),
            "L" => dims[2] = Some(v),
            _ => return Err(bad("unknown header field")),
        }
    }
    let [Some(d), Some(m), Some(l)] = dims else {
        return Err(bad("header must give d, m and L"));
    };
    let body = &bytes[nl + 1..];
    let p = param_count(d, m, l);
    if l < 2 || body.len() != p * 8 {
        return Err(bad("payload length does not match the header"));
    }
    let flat: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    NnParams::unflatten(d, m, l, &flat)
}

pub fn save_checkpoint(params: &NnParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::fs::File::create(path)
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    f.write_all(&checkpoint_bytes(params))
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<NnParams> {
    let path = path.as_ref();
    let bytes =
        std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    parse_checkpoint(&bytes)
}
