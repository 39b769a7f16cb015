//! Python bindings for the `duelcluster` core crate.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use duelcluster::coldb::{Coldb as CoreColdb, ColdbConfig};
use duelcluster::condb::{Condb as CoreCondb, CondbConfig};
use duelcluster::env::{self, ArmSet, RewardKind};
use duelcluster::glm::{self, MleConfig, PreferenceDataset};
use duelcluster::harness::{self, ExperimentConfig};
use duelcluster::neural;
use duelcluster::Error;

fn to_py(e: Error) -> PyErr {
    let bad_input = matches!(
        e,
        Error::DimensionMismatch { .. }
            | Error::UnknownUser(_)
            | Error::ArmNotInSet { .. }
            | Error::ZeroInput
    );
    if e.is_config() || bad_input {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

/// Calls `feedback(first, second)` from Python, remembering the first error.
fn python_feedback<'a>(
    py: Python<'a>,
    feedback: &'a Bound<'a, PyAny>,
    err: &'a mut Option<PyErr>,
) -> impl FnMut(usize, usize) -> bool + 'a {
    let _ = py;
    move |a, b| match feedback.call1((a, b)).and_then(|v| v.is_truthy()) {
        Ok(y) => y,
        Err(e) => {
            err.get_or_insert(e);
            false
        }
    }
}

#[pyfunction]
fn logistic(r: f64) -> f64 {
    glm::logistic(r)
}

/// Regularized logistic MLE on difference rows; returns `(theta, converged)`.
#[pyfunction]
#[pyo3(signature = (deltas, labels, lam = 1.0))]
fn fit_mle(deltas: Vec<Vec<f64>>, labels: Vec<bool>, lam: f64) -> PyResult<(Vec<f64>, bool)> {
    let dim = deltas.first().map_or(0, Vec::len);
    if dim == 0 {
        return Err(PyValueError::new_err("need at least one non-empty row"));
    }
    if deltas.len() != labels.len() {
        return Err(PyValueError::new_err("deltas and labels differ in length"));
    }
    let mut data = PreferenceDataset::new(dim);
    for (d, y) in deltas.iter().zip(labels) {
        data.push(d, y).map_err(to_py)?;
    }
    let cfg = MleConfig {
        lambda: lam,
        ..MleConfig::default()
    };
    let fit = glm::fit_mle(&data, &cfg, None).map_err(to_py)?;
    Ok((fit.theta, fit.converged))
}

#[pyfunction]
fn augment_input(x: Vec<f64>) -> PyResult<Vec<f64>> {
    neural::augment_input(&x).map_err(to_py)
}

/// Synthetic clustered population.
#[pyclass(module = "pyduelcluster")]
struct GroundTruth {
    inner: env::GroundTruth,
}

#[pymethods]
impl GroundTruth {
    #[new]
    #[pyo3(signature = (users, clusters, dim, gamma, kind = "linear", seed = 0))]
    fn new(users: usize, clusters: usize, dim: usize, gamma: f64, kind: &str, seed: u64) -> PyResult<Self> {
        let kind = match kind {
            "linear" => RewardKind::Linear,
            "square" => RewardKind::Square,
            other => return Err(PyValueError::new_err(format!("unknown reward kind '{other}'"))),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inner = env::generate_clustered_users(&mut rng, users, clusters, dim, gamma, kind)
            .map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_file(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: env::load_feature_file(path).map_err(to_py)?,
        })
    }

    #[getter]
    fn users(&self) -> usize {
        self.inner.users
    }

    #[getter]
    fn assignment(&self) -> Vec<usize> {
        self.inner.assignment.clone()
    }

    #[getter]
    fn gamma(&self) -> f64 {
        self.inner.gamma
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn rewards(&self, user: usize, arms: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        self.inner
            .arm_rewards(user, &ArmSet::from_arms(arms))
            .map_err(to_py)
    }
}

/// Linear clustering of dueling bandits, or its independent baseline.
#[pyclass(module = "pyduelcluster")]
struct Coldb {
    inner: CoreColdb,
}

#[pymethods]
impl Coldb {
    #[new]
    #[pyo3(signature = (users, dim, independent = false, explore_scale = 1.0, threshold_scale = 1.0, lam = 1.0))]
    fn new(
        users: usize,
        dim: usize,
        independent: bool,
        explore_scale: f64,
        threshold_scale: f64,
        lam: f64,
    ) -> PyResult<Self> {
        let cfg = ColdbConfig {
            users,
            dim,
            explore_scale,
            threshold_scale,
            lambda: lam,
            ..ColdbConfig::default()
        };
        let inner = if independent {
            CoreColdb::ldb_ind(cfg)
        } else {
            CoreColdb::new(cfg)
        }
        .map_err(to_py)?;
        Ok(Self { inner })
    }

    /// Plays one round; `feedback(first, second)` returns True iff the first arm wins.
    fn step(
        &mut self,
        py: Python<'_>,
        user: usize,
        arms: Vec<Vec<f64>>,
        feedback: Bound<'_, PyAny>,
    ) -> PyResult<(usize, usize, bool)> {
        let mut err = None;
        let out = self
            .inner
            .round_step(user, &ArmSet::from_arms(arms), python_feedback(py, &feedback, &mut err))
            .map_err(to_py)?;
        if let Some(e) = err {
            return Err(e);
        }
        Ok((out.first, out.second, out.record.y))
    }

    fn estimates(&self) -> Vec<Vec<f64>> {
        self.inner.estimates().to_vec()
    }

    fn component_ids(&mut self) -> Vec<usize> {
        self.inner.component_ids()
    }

    #[getter]
    fn round(&self) -> usize {
        self.inner.round()
    }
}

/// Neural clustering of dueling bandits, or its independent baseline.
#[pyclass(module = "pyduelcluster")]
struct Condb {
    inner: CoreCondb,
}

#[pymethods]
impl Condb {
    #[new]
    #[pyo3(signature = (users, dim, seed = 0, independent = false, width = 64, depth = 2, explore_scale = 1.0, threshold_scale = 1.0))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        users: usize,
        dim: usize,
        seed: u64,
        independent: bool,
        width: usize,
        depth: usize,
        explore_scale: f64,
        threshold_scale: f64,
    ) -> PyResult<Self> {
        let base = CondbConfig::default();
        let cfg = CondbConfig {
            users,
            dim,
            nn: neural::NnConfig {
                width,
                depth,
                ..base.nn
            },
            explore_scale,
            threshold_scale,
            ..base
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inner = if independent {
            CoreCondb::ndb_ind(cfg, &mut rng)
        } else {
            CoreCondb::new(cfg, &mut rng)
        }
        .map_err(to_py)?;
        Ok(Self { inner })
    }

    fn step(
        &mut self,
        py: Python<'_>,
        user: usize,
        arms: Vec<Vec<f64>>,
        feedback: Bound<'_, PyAny>,
    ) -> PyResult<(usize, usize, bool)> {
        let mut err = None;
        let out = self
            .inner
            .round_step(user, &ArmSet::from_arms(arms), python_feedback(py, &feedback, &mut err))
            .map_err(to_py)?;
        if let Some(e) = err {
            return Err(e);
        }
        Ok((out.first, out.second, out.record.y))
    }

    fn component_ids(&mut self) -> Vec<usize> {
        self.inner.component_ids()
    }

    #[getter]
    fn d_tilde(&self) -> f64 {
        self.inner.d_tilde()
    }

    #[getter]
    fn round(&self) -> usize {
        self.inner.round()
    }

    fn save_checkpoint(&self, user: usize, path: &str) -> PyResult<()> {
        self.inner.save_user_checkpoint(user, path).map_err(to_py)
    }
}

/// Runs an experiment from a JSON config and returns one dict per successful trial.
#[pyfunction]
fn run_experiment(py: Python<'_>, config_json: &str) -> PyResult<Vec<Py<pyo3::types::PyDict>>> {
    let cfg: ExperimentConfig = serde_json::from_str(config_json)
        .map_err(|e| PyValueError::new_err(format!("invalid config: {e}")))?;
    let result = py
        .detach(|| harness::run_experiment(&cfg))
        .map_err(to_py)?;
    if let Some(f) = result.failures().next() {
        return Err(PyRuntimeError::new_err(f.to_string()));
    }
    result
        .reports()
        .map(|r| {
            let d = pyo3::types::PyDict::new(py);
            d.set_item("algo", &r.trace.algo)?;
            d.set_item("seed", r.trace.seed)?;
            d.set_item("inst_regret", &r.trace.inst)?;
            d.set_item("cum_regret", &r.trace.cum)?;
            d.set_item("rand_index", r.rand_index)?;
            d.set_item("exact_recovery", r.exact_recovery)?;
            d.set_item("invariant_violations", r.invariants.violations())?;
            Ok(d.unbind())
        })
        .collect()
}

#[pymodule]
fn pyduelcluster(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(logistic, m)?)?;
    m.add_function(wrap_pyfunction!(fit_mle, m)?)?;
    m.add_function(wrap_pyfunction!(augment_input, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_class::<GroundTruth>()?;
    m.add_class::<Coldb>()?;
    m.add_class::<Condb>()?;
    Ok(())
}
