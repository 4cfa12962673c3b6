//! Python bindings: run configuration, training and baseline runs, the
//! class-correlation matrix, losses and metrics.

use std::path::PathBuf;

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use ala_core::controller::apply_pair_action;
use ala_core::losses::{self, ClassCorrelation as CoreCorrelation};
use ala_core::metrics;
use ala_core::orchestrator::{self, BaselineMode, RunOutcome, TrainRunConfig};
use ala_core::tensor::Matrix;
use ala_core::AlaError;

fn py_err(e: AlaError) -> PyErr {
    match e {
        AlaError::Io { .. } => PyOSError::new_err(e.to_string()),
        AlaError::NonFinite(_) | AlaError::Undefined(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// A run configuration; missing JSON fields take their defaults.
#[pyclass(name = "Config")]
#[derive(Clone)]
struct PyConfig {
    inner: TrainRunConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (json = None))]
    fn new(json: Option<&str>) -> PyResult<Self> {
        let inner = match json {
            Some(s) => TrainRunConfig::from_json(s).map_err(py_err)?,
            None => TrainRunConfig::default(),
        };
        Ok(PyConfig { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyConfig {
            inner: TrainRunConfig::load(&path).map_err(py_err)?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(py_err)
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }
    #[setter]
    fn set_seed(&mut self, v: u64) {
        self.inner.seed = v;
    }
    #[getter]
    fn children(&self) -> usize {
        self.inner.children
    }
    #[setter]
    fn set_children(&mut self, v: usize) {
        self.inner.children = v;
    }
    #[getter]
    fn steps(&self) -> usize {
        self.inner.steps
    }
    #[setter]
    fn set_steps(&mut self, v: usize) {
        self.inner.steps = v;
    }
    #[getter]
    fn k(&self) -> usize {
        self.inner.k
    }
    #[setter]
    fn set_k(&mut self, v: usize) {
        self.inner.k = v;
    }
    #[getter]
    fn beta(&self) -> f64 {
        self.inner.beta
    }
    #[setter]
    fn set_beta(&mut self, v: f64) {
        self.inner.beta = v;
    }

    fn __repr__(&self) -> String {
        format!(
            "Config(seed={}, children={}, steps={}, k={})",
            self.inner.seed, self.inner.children, self.inner.steps, self.inner.k
        )
    }
}

/// Outcome of one run: per-step records, Φ trajectory and invariant checks.
#[pyclass(name = "RunResult")]
struct PyRunResult {
    inner: RunOutcome,
}

#[pymethods]
impl PyRunResult {
    #[getter]
    fn mode(&self) -> String {
        self.inner.report.mode.clone()
    }

    /// Mean and standard deviation of the final test metric over children.
    fn final_test(&self) -> (f64, f64) {
        self.inner.report.final_test_metric()
    }

    fn final_test_values(&self) -> Vec<f64> {
        self.inner.report.final_test_values()
    }

    #[getter]
    fn checks_clean(&self) -> bool {
        self.inner.report.checks.is_clean()
    }

    #[getter]
    fn violations(&self) -> Vec<String> {
        self.inner.report.checks.violations.clone()
    }

    fn records<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        self.inner
            .report
            .records
            .iter()
            .map(|r| {
                let d = PyDict::new(py);
                d.set_item("step", r.step)?;
                d.set_item("child", r.child)?;
                d.set_item("train_loss", r.train_loss)?;
                d.set_item("val_loss", r.val_loss)?;
                d.set_item("val_metric", r.val_metric)?;
                d.set_item("test_metric", r.test_metric)?;
                d.set_item("reward", r.reward)?;
                Ok(d)
            })
            .collect()
    }

    /// `(child, step, parameter_id, value)` rows.
    fn phi(&self) -> Vec<(usize, usize, usize, f64)> {
        self.inner
            .report
            .phi
            .iter()
            .map(|r| (r.child, r.step, r.parameter_id, r.value))
            .collect()
    }

    fn write(&self, dir: PathBuf) -> PyResult<()> {
        self.inner.write(&dir).map_err(py_err)
    }
}

#[pyfunction]
fn train(py: Python<'_>, config: &PyConfig) -> PyResult<PyRunResult> {
    let cfg = config.inner.clone();
    let inner = py.allow_threads(|| orchestrator::run_training(&cfg)).map_err(py_err)?;
    Ok(PyRunResult { inner })
}

/// `mode` is one of fixed, random-phi, confusion-phi, bandit.
#[pyfunction]
fn baseline(py: Python<'_>, config: &PyConfig, mode: &str) -> PyResult<PyRunResult> {
    let mode = BaselineMode::parse(mode).map_err(py_err)?;
    let cfg = config.inner.clone();
    let inner = py.allow_threads(|| orchestrator::run_baseline(&cfg, mode)).map_err(py_err)?;
    Ok(PyRunResult { inner })
}

#[pyfunction]
#[pyo3(signature = (config, policy, finetune = false))]
fn transfer(py: Python<'_>, config: &PyConfig, policy: PathBuf, finetune: bool) -> PyResult<PyRunResult> {
    let cfg = config.inner.clone();
    let inner = py
        .allow_threads(|| orchestrator::run_transfer(&cfg, &policy, finetune))
        .map_err(py_err)?;
    Ok(PyRunResult { inner })
}

/// Symmetric class-correlation matrix Φ with unit diagonal.
#[pyclass(name = "ClassCorrelation")]
#[derive(Clone)]
struct PyClassCorrelation {
    inner: CoreCorrelation,
}

#[pymethods]
impl PyClassCorrelation {
    #[staticmethod]
    fn identity(classes: usize) -> Self {
        PyClassCorrelation {
            inner: CoreCorrelation::identity(classes),
        }
    }

    #[staticmethod]
    fn from_rows(rows: Vec<Vec<f64>>) -> PyResult<Self> {
        Ok(PyClassCorrelation {
            inner: CoreCorrelation::from_rows(&rows).map_err(py_err)?,
        })
    }

    #[getter]
    fn classes(&self) -> usize {
        self.inner.classes()
    }

    fn get(&self, i: usize, j: usize) -> PyResult<f64> {
        let c = self.inner.classes();
        if i >= c || j >= c {
            return Err(PyValueError::new_err(format!("({i}, {j}) out of range for {c} classes")));
        }
        Ok(self.inner.get(i, j))
    }

    fn set_pair(&mut self, i: usize, j: usize, value: f64) -> PyResult<()> {
        self.inner.set_pair(i, j, value).map_err(py_err)
    }

    /// Adds `delta` to the pair, symmetrically, clipped to [-1, 1].
    fn apply_action(&mut self, i: usize, j: usize, delta: f64) -> PyResult<()> {
        apply_pair_action(&mut self.inner, i, j, delta).map_err(py_err)
    }

    fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.inner.classes()).map(|i| self.inner.row(i).to_vec()).collect()
    }

    fn pairs(&self) -> Vec<(usize, usize)> {
        self.inner.pairs()
    }
}

fn one_hot(classes: usize, label: usize) -> PyResult<Vec<f64>> {
    if label >= classes {
        return Err(PyValueError::new_err(format!("label {label} out of range for {classes} classes")));
    }
    let mut y = vec![0.0; classes];
    y[label] = 1.0;
    Ok(y)
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<Matrix> {
    Matrix::from_rows(rows).map_err(py_err)
}

/// `−σ(yᵀ Φ log p)` for one sample.
#[pyfunction]
fn classification_loss(probs: Vec<f64>, label: usize, phi: &PyClassCorrelation) -> PyResult<f64> {
    let y = one_hot(probs.len(), label)?;
    losses::ala_classification_loss(&probs, &y, &phi.inner).map_err(py_err)
}

#[pyfunction]
fn cross_entropy(probs: Vec<f64>, label: usize) -> PyResult<f64> {
    let y = one_hot(probs.len(), label)?;
    losses::cross_entropy_loss(&probs, &y).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (d_plus, d_minus, margin = 0.2))]
fn triplet_loss(d_plus: f64, d_minus: f64, margin: f64) -> PyResult<f64> {
    losses::triplet_loss(d_plus, d_minus, margin).map_err(py_err)
}

#[pyfunction]
fn distance_mixture_loss(d_plus: f64, d_minus: f64, weights: [f64; 10]) -> f64 {
    losses::distance_mixture_loss(d_plus, d_minus, &weights).value
}

#[pyfunction]
#[pyo3(signature = (d_plus, d_minus, scales, offset = 1.0))]
fn focal_weighting_loss(d_plus: Vec<f64>, d_minus: Vec<f64>, scales: [f64; 2], offset: f64) -> f64 {
    losses::focal_weighting_loss(&d_plus, &d_minus, scales, offset)
}

#[pyfunction]
fn classification_error(probs: Vec<Vec<f64>>, labels: Vec<usize>) -> PyResult<f64> {
    metrics::classification_error(&matrix(&probs)?, &labels).map_err(py_err)
}

#[pyfunction]
fn aucpr(scores: Vec<f64>, labels: Vec<bool>) -> PyResult<f64> {
    metrics::aucpr(&scores, &labels).map_err(py_err)
}

#[pyfunction]
fn recall_at_k(embeddings: Vec<Vec<f64>>, labels: Vec<usize>, k: usize) -> PyResult<f64> {
    metrics::recall_at_k(&matrix(&embeddings)?, &labels, k).map_err(py_err)
}

#[pyfunction]
fn verification_accuracy(distances: Vec<f64>, same: Vec<bool>) -> PyResult<f64> {
    metrics::verification_accuracy(&distances, &same).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (series, gamma = 0.9))]
fn discounted_metric(series: Vec<f64>, gamma: f64) -> PyResult<f64> {
    metrics::discounted_metric(&series, gamma).map_err(py_err)
}

/// Sign of the drop in a lower-is-better discounted metric.
#[pyfunction]
fn reward(previous: f64, current: f64) -> f64 {
    metrics::reward(previous, current)
}

#[pymodule]
fn ala_rs(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyRunResult>()?;
    m.add_class::<PyClassCorrelation>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(baseline, m)?)?;
    m.add_function(wrap_pyfunction!(transfer, m)?)?;
    m.add_function(wrap_pyfunction!(classification_loss, m)?)?;
    m.add_function(wrap_pyfunction!(cross_entropy, m)?)?;
    m.add_function(wrap_pyfunction!(triplet_loss, m)?)?;
    m.add_function(wrap_pyfunction!(distance_mixture_loss, m)?)?;
    m.add_function(wrap_pyfunction!(focal_weighting_loss, m)?)?;
    m.add_function(wrap_pyfunction!(classification_error, m)?)?;
    m.add_function(wrap_pyfunction!(aucpr, m)?)?;
    m.add_function(wrap_pyfunction!(recall_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(verification_accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(discounted_metric, m)?)?;
    m.add_function(wrap_pyfunction!(reward, m)?)?;
    Ok(())
}
