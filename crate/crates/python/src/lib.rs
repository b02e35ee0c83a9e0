//! Python bindings: losses, metrics, Platt scaling, the scoring network and
//! the synthetic verification tools. Arrays cross the boundary as lists.

use std::collections::BTreeMap;

use calirank::calibrate::{fit_platt, PlattModel, PlattOptions};
use calirank::experiment::dominance_flags;
use calirank::letor::parse_letor_str;
use calirank::losses::{LossKind, LossSpec, Transformation};
use calirank::metrics;
use calirank::net::{ScorerNetwork, DEFAULT_DROPOUT, DEFAULT_HIDDEN};
use calirank::oracle::{self, FixedPointOptions, SyntheticWorld};
use calirank::Error;
use ndarray::Array2;
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn loss_spec(kind: &str, alpha: Option<f64>, transformation: Option<&str>) -> PyResult<LossSpec> {
    let t = transformation
        .map(str::parse::<Transformation>)
        .transpose()
        .map_err(py_err)?;
    let kind = match kind {
        "sigmoid_ce" => LossKind::SigmoidCe,
        "pairwise_logistic" => LossKind::PairwiseLogistic,
        "softmax_ce" => LossKind::SoftmaxCe,
        "list_ce" => LossKind::ListCe,
        "sigmoid_ce_plus_softmax_ce" | "multi_objective" => LossKind::SigmoidCePlusSoftmaxCe,
        "sigmoid_ce_plus_list_ce" | "rcr" => LossKind::SigmoidCePlusListCe,
        other => return Err(PyValueError::new_err(format!("unknown loss {other:?}"))),
    };
    let t = match kind {
        LossKind::ListCe | LossKind::SigmoidCePlusListCe => Some(t.unwrap_or(Transformation::Sigmoid)),
        _ => t,
    };
    LossSpec::new(kind, t, alpha).map_err(py_err)
}

fn check_pair(scores: &[f64], labels: &[f64]) -> PyResult<()> {
    if scores.len() != labels.len() {
        return Err(PyValueError::new_err(format!(
            "scores and labels differ in length: {} vs {}",
            scores.len(),
            labels.len()
        )));
    }
    Ok(())
}

/// Loss and score gradient of one query. `kind` is one of sigmoid_ce,
/// pairwise_logistic, softmax_ce, list_ce, multi_objective, rcr.
#[pyfunction]
#[pyo3(signature = (kind, scores, labels, alpha=None, transformation=None))]
fn query_loss(
    kind: &str,
    scores: Vec<f64>,
    labels: Vec<f64>,
    alpha: Option<f64>,
    transformation: Option<&str>,
) -> PyResult<(f64, Vec<f64>)> {
    check_pair(&scores, &labels)?;
    let spec = loss_spec(kind, alpha, transformation)?;
    let r = spec.evaluate(&scores, &labels);
    Ok((r.loss, r.grad))
}

#[pyfunction]
#[pyo3(signature = (scores, labels, k=10))]
fn ndcg_at_k(scores: Vec<f64>, labels: Vec<f64>, k: usize) -> PyResult<Option<f64>> {
    check_pair(&scores, &labels)?;
    Ok(metrics::ndcg_at_k(&scores, &labels, k))
}

#[pyfunction]
fn dcg_at_k(scores: Vec<f64>, labels: Vec<f64>, k: usize) -> PyResult<f64> {
    check_pair(&scores, &labels)?;
    Ok(metrics::dcg_at_k(&scores, &labels, k))
}

#[pyfunction]
fn logloss(predictions: Vec<f64>, labels: Vec<f64>) -> PyResult<f64> {
    check_pair(&predictions, &labels)?;
    Ok(metrics::logloss(&predictions, &labels))
}

/// Per-query equal-frequency ECE averaged over queries.
#[pyfunction]
#[pyo3(signature = (predictions, labels, bins=metrics::DEFAULT_ECE_BINS))]
fn ece(predictions: Vec<Vec<f64>>, labels: Vec<Vec<f64>>, bins: usize) -> PyResult<f64> {
    if predictions.len() != labels.len() || bins == 0 {
        return Err(PyValueError::new_err("need one label list per query and bins >= 1"));
    }
    for (p, y) in predictions.iter().zip(&labels) {
        check_pair(p, y)?;
    }
    Ok(metrics::ece(&predictions, &labels, bins))
}

#[pyfunction]
fn aucpr(predictions: Vec<f64>, labels: Vec<f64>) -> PyResult<f64> {
    check_pair(&predictions, &labels)?;
    metrics::aucpr(&predictions, &labels).map_err(py_err)
}

#[pyclass(name = "PlattModel", frozen)]
struct PyPlattModel {
    inner: PlattModel,
}

#[pymethods]
impl PyPlattModel {
    #[new]
    fn new(scale: f64, offset: f64) -> Self {
        Self {
            inner: PlattModel { scale, offset },
        }
    }

    #[getter]
    fn scale(&self) -> f64 {
        self.inner.scale
    }

    #[getter]
    fn offset(&self) -> f64 {
        self.inner.offset
    }

    fn apply(&self, scores: Vec<f64>) -> Vec<f64> {
        self.inner.apply(&scores)
    }

    fn __repr__(&self) -> String {
        format!("PlattModel(scale={}, offset={})", self.inner.scale, self.inner.offset)
    }
}

#[pyfunction]
#[pyo3(name = "fit_platt", signature = (scores, labels, max_iters=100, tol=1e-10))]
fn py_fit_platt(scores: Vec<f64>, labels: Vec<f64>, max_iters: usize, tol: f64) -> PyResult<PyPlattModel> {
    check_pair(&scores, &labels)?;
    let inner = fit_platt(&scores, &labels, PlattOptions { max_iters, tol }).map_err(py_err)?;
    Ok(PyPlattModel { inner })
}

fn matrix(rows: Vec<Vec<f64>>, cols: usize) -> PyResult<Array2<f64>> {
    let n = rows.len();
    if rows.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err(format!("every row needs {cols} features")));
    }
    Array2::from_shape_vec((n, cols), rows.concat()).map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pyclass(name = "ScorerNetwork")]
struct PyScorerNetwork {
    inner: ScorerNetwork,
}

#[pymethods]
impl PyScorerNetwork {
    #[new]
    #[pyo3(signature = (feature_count, hidden=None, dropout=DEFAULT_DROPOUT, seed=0))]
    fn new(feature_count: usize, hidden: Option<Vec<usize>>, dropout: f64, seed: u64) -> PyResult<Self> {
        let hidden = hidden.unwrap_or_else(|| DEFAULT_HIDDEN.to_vec());
        let inner = ScorerNetwork::init(feature_count, &hidden, dropout, seed).map_err(py_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn layer_dims(&self) -> Vec<usize> {
        self.inner.layer_dims()
    }

    #[getter]
    fn parameter_count(&self) -> usize {
        self.inner.params.len()
    }

    /// Eval-mode scores for a list of feature rows.
    fn predict(&self, features: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        let x = matrix(features, self.inner.feature_count())?;
        self.inner.predict(x.view()).map_err(py_err)
    }

    #[pyo3(signature = (path, platt=None))]
    fn save(&self, path: &str, platt: Option<PyRef<'_, PyPlattModel>>) -> PyResult<()> {
        self.inner
            .save(path, platt.as_ref().map(|p| &p.inner))
            .map_err(py_err)
    }

    /// Returns `(network, platt_model_or_None)`.
    #[staticmethod]
    fn load(path: &str) -> PyResult<(Self, Option<PyPlattModel>)> {
        let (inner, platt) = ScorerNetwork::load(path).map_err(py_err)?;
        Ok((Self { inner }, platt.map(|inner| PyPlattModel { inner })))
    }

    fn __repr__(&self) -> String {
        format!("ScorerNetwork(layer_dims={:?})", self.inner.layer_dims())
    }
}

type LetorRow = (u32, String, BTreeMap<u32, f64>);

/// Parses LETOR text into `(label, qid, {feature_id: value})` tuples.
#[pyfunction]
fn parse_letor(text: &str) -> PyResult<Vec<LetorRow>> {
    let examples = parse_letor_str(text).map_err(py_err)?;
    Ok(examples
        .into_iter()
        .map(|e| (e.label, e.query_id, e.features))
        .collect())
}

/// Per-query true probabilities of a seeded synthetic world.
#[pyfunction]
fn make_world(num_queries: usize, list_size: usize, seed: u64) -> PyResult<Vec<Vec<f64>>> {
    let world = oracle::make_world(num_queries, list_size, seed).map_err(py_err)?;
    Ok(world.groups.into_iter().map(|g| g.probabilities).collect())
}

#[pyclass(name = "FixedPointReport", frozen)]
struct PyFixedPointReport {
    #[pyo3(get)]
    loss: String,
    #[pyo3(get)]
    max_calibration_error: f64,
    #[pyo3(get)]
    max_ratio_error: f64,
    #[pyo3(get)]
    all_converged: bool,
    #[pyo3(get)]
    any_diverged: bool,
    #[pyo3(get)]
    scores: Vec<Vec<f64>>,
}

/// Gradient descent on free scores against expected labels `probabilities`.
#[pyfunction]
#[pyo3(signature = (kind, probabilities, alpha=None, transformation=None, learning_rate=0.1, max_steps=100_000, tol=1e-9))]
#[allow(clippy::too_many_arguments)]
fn verify_fixed_point(
    kind: &str,
    probabilities: Vec<Vec<f64>>,
    alpha: Option<f64>,
    transformation: Option<&str>,
    learning_rate: f64,
    max_steps: usize,
    tol: f64,
) -> PyResult<PyFixedPointReport> {
    let spec = loss_spec(kind, alpha, transformation)?;
    let world = SyntheticWorld::from_probabilities(probabilities, 0).map_err(py_err)?;
    let opts = FixedPointOptions {
        learning_rate,
        max_steps,
        tol,
        ..Default::default()
    };
    let r = oracle::verify_fixed_point(&spec, &world, &opts).map_err(py_err)?;
    Ok(PyFixedPointReport {
        loss: r.loss,
        max_calibration_error: r.max_calibration_error,
        max_ratio_error: r.max_ratio_error,
        all_converged: r.all_converged,
        any_diverged: r.any_diverged,
        scores: r.groups.into_iter().map(|g| g.scores).collect(),
    })
}

/// Runs the standard verification checks; returns `(all_passed, report_text)`.
#[pyfunction]
#[pyo3(signature = (seed=0))]
fn verify_suite(seed: u64) -> PyResult<(bool, String)> {
    let r = oracle::verify_suite(seed).map_err(py_err)?;
    Ok((r.all_passed(), r.to_text()))
}

/// Indices of non-dominated `(x, y)` points, larger being better on both.
#[pyfunction]
fn pareto_frontier(points: Vec<(f64, f64)>) -> Vec<usize> {
    let mut idx: Vec<usize> = dominance_flags(&points)
        .into_iter()
        .enumerate()
        .filter(|(_, d)| !d)
        .map(|(i, _)| i)
        .collect();
    idx.sort_by(|&a, &b| points[a].0.total_cmp(&points[b].0).then(points[a].1.total_cmp(&points[b].1)));
    idx
}

#[pymodule]
#[pyo3(name = "calirank")]
fn calirank_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(query_loss, m)?)?;
    m.add_function(wrap_pyfunction!(ndcg_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(dcg_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(logloss, m)?)?;
    m.add_function(wrap_pyfunction!(ece, m)?)?;
    m.add_function(wrap_pyfunction!(aucpr, m)?)?;
    m.add_function(wrap_pyfunction!(py_fit_platt, m)?)?;
    m.add_function(wrap_pyfunction!(parse_letor, m)?)?;
    m.add_function(wrap_pyfunction!(make_world, m)?)?;
    m.add_function(wrap_pyfunction!(verify_fixed_point, m)?)?;
    m.add_function(wrap_pyfunction!(verify_suite, m)?)?;
    m.add_function(wrap_pyfunction!(pareto_frontier, m)?)?;
    m.add_class::<PyPlattModel>()?;
    m.add_class::<PyScorerNetwork>()?;
    m.add_class::<PyFixedPointReport>()?;
    Ok(())
}
