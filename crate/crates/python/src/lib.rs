//! Python bindings: sample blocks, the dCov family of estimators, the
//! subgroup metrics and tests, scoring rules, and network training.

use fairdcov::dcov;
use fairdcov::fairness::{self, BinningSpec, SubgroupKey};
use fairdcov::model::{
    self, Batch, EarlyStopping, NetworkSpec, ObjectiveSpec, OptimiserConfig, RegulariserKind, Task,
};
use fairdcov::pipeline::{planted_bias as planted_table, planted_bias_schema, preprocess};
use fairdcov::scoring::{self, DiscreteForecast, PairedScores};
use fairdcov::SampleBlock;
use ndarray::Array2;
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;

create_exception!(fairdcov_py, FairdcovError, PyException);

fn err(e: fairdcov::Error) -> PyErr {
    FairdcovError::new_err(e.to_string())
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<Array2<f64>> {
    let p = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != p) {
        return Err(FairdcovError::new_err("rows must all have the same length"));
    }
    Array2::from_shape_vec((rows.len(), p), rows.concat())
        .map_err(|e| FairdcovError::new_err(e.to_string()))
}

/// An `n x p` block of observations. Build from a list of rows or, with
/// `Sample.column`, from a flat list.
#[pyclass(module = "fairdcov_py", frozen, from_py_object)]
#[derive(Clone)]
struct Sample {
    inner: SampleBlock,
}

#[pymethods]
impl Sample {
    #[new]
    fn new(rows: Vec<Vec<f64>>) -> PyResult<Self> {
        let inner = SampleBlock::new(matrix(&rows)?).map_err(err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn column(values: Vec<f64>) -> PyResult<Self> {
        let inner = SampleBlock::from_column(&values).map_err(err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn p(&self) -> usize {
        self.inner.p()
    }

    fn rows(&self) -> Vec<Vec<f64>> {
        self.inner
            .values()
            .rows()
            .into_iter()
            .map(|r| r.to_vec())
            .collect()
    }

    fn __repr__(&self) -> String {
        format!("Sample(n={}, p={})", self.inner.n(), self.inner.p())
    }
}

fn blocks(samples: &[Sample]) -> Vec<SampleBlock> {
    samples.iter().map(|s| s.inner.clone()).collect()
}

/// Unbiased squared distance covariance.
#[pyfunction]
fn dcov2(x: &Sample, y: &Sample) -> PyResult<f64> {
    dcov::dcov2_unbiased(&x.inner, &y.inner).map_err(err)
}

/// The same quantity from the expanded pairwise-sum formula.
#[pyfunction]
fn dcov2_expanded(x: &Sample, y: &Sample) -> PyResult<f64> {
    dcov::dcov2_expanded(&x.inner, &y.inner).map_err(err)
}

#[pyfunction]
fn ccdcov(y: &Sample, attrs: Vec<Sample>) -> PyResult<f64> {
    dcov::ccdcov(&y.inner, &blocks(&attrs)).map_err(err)
}

/// `{"marginal_terms": [...], "eta": float, "total": float}`.
#[pyfunction]
fn ccdcov_decompose<'py>(
    py: Python<'py>,
    y: &Sample,
    attrs: Vec<Sample>,
) -> PyResult<Bound<'py, PyDict>> {
    let d = dcov::ccdcov_decompose(&y.inner, &blocks(&attrs)).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("marginal_terms", d.marginal_terms)?;
    out.set_item("eta", d.eta)?;
    out.set_item("total", d.total)?;
    Ok(out)
}

/// Joint distance covariance of the blocks; the first is the prediction.
#[pyfunction]
fn jdcov2(samples: Vec<Sample>) -> PyResult<f64> {
    dcov::jdcov2(&blocks(&samples)).map_err(err)
}

#[pyfunction]
fn jdcov_decompose<'py>(py: Python<'py>, samples: Vec<Sample>) -> PyResult<Bound<'py, PyDict>> {
    let d = dcov::jdcov_decompose(&blocks(&samples)).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("pred_attr_terms", d.pred_attr_terms)?;
    out.set_item("attr_attr_terms", d.attr_attr_terms)?;
    out.set_item("zeta", d.zeta)?;
    out.set_item("total", d.total)?;
    Ok(out)
}

fn keys(labels: Vec<Vec<u32>>) -> PyResult<Vec<SubgroupKey>> {
    SubgroupKey::zip(&labels).map_err(err)
}

/// Proportion-weighted divergence of each subgroup prediction histogram
/// from the pooled one.
/// `labels` holds one list of integer labels per protected attribute.
#[pyfunction]
#[pyo3(signature = (yhat, labels, bins = 20))]
fn js_divergence(yhat: Vec<f64>, labels: Vec<Vec<u32>>, bins: usize) -> PyResult<f64> {
    let spec = BinningSpec {
        histogram_bins: bins,
        ..BinningSpec::default()
    };
    fairness::js_divergence(&yhat, &keys(labels)?, &spec).map_err(err)
}

/// Between-subgroup share of the prediction variance.
#[pyfunction]
fn uf_metric(yhat: Vec<f64>, labels: Vec<Vec<u32>>) -> PyResult<f64> {
    fairness::uf_metric(&yhat, &keys(labels)?).map_err(err)
}

fn test_dict<'py>(py: Python<'py>, r: fairness::TestResult) -> PyResult<Bound<'py, PyDict>> {
    let out = PyDict::new(py);
    out.set_item("statistic", r.statistic)?;
    out.set_item("p_value", r.p_value)?;
    out.set_item("replicates", r.replicates)?;
    out.set_item("degenerate", r.degenerate)?;
    Ok(out)
}

/// Asymptotic independence test of predictions against all attributes.
#[pyfunction]
fn chi2_test<'py>(
    py: Python<'py>,
    yhat: &Sample,
    attrs: Vec<Sample>,
) -> PyResult<Bound<'py, PyDict>> {
    let joined = SampleBlock::concat(&blocks(&attrs)).map_err(err)?;
    let r = fairness::chi2_independence_test(&yhat.inner, &joined).map_err(err)?;
    test_dict(py, r)
}

/// Permutation test that shuffles the prediction against the attributes.
#[pyfunction]
#[pyo3(signature = (yhat, attrs, replicates = 199, seed = 0))]
fn permutation_test<'py>(
    py: Python<'py>,
    yhat: &Sample,
    attrs: Vec<Sample>,
    replicates: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let r = fairness::permutation_test_joint(&yhat.inner, &blocks(&attrs), replicates, seed)
        .map_err(err)?;
    test_dict(py, r)
}

/// Ranked probability score of a forecast over ordered categories.
#[pyfunction]
fn rps(forecast: Vec<f64>, observed: usize) -> PyResult<f64> {
    let f = DiscreteForecast::new(forecast).map_err(err)?;
    scoring::rps(&f, observed).map_err(err)
}

/// One-sided signed-rank test that `regularised` scores exceed `baseline`.
#[pyfunction]
fn wilcoxon<'py>(
    py: Python<'py>,
    baseline: Vec<f64>,
    regularised: Vec<f64>,
) -> PyResult<Bound<'py, PyDict>> {
    let scores = PairedScores::new(baseline, regularised).map_err(err)?;
    let r = scoring::wilcoxon_one_sided(&scores);
    let out = PyDict::new(py);
    out.set_item("w_plus", r.w_plus)?;
    out.set_item("z", r.z)?;
    out.set_item("p_value", r.p_value)?;
    out.set_item("n_used", r.n_used)?;
    out.set_item("no_evidence", r.no_evidence)?;
    Ok(out)
}

/// Encoded synthetic data with planted subgroup bias: a dict with the
/// feature rows `x`, labels `y` and the two protected labels `a`, `b`.
#[pyfunction]
fn planted_bias<'py>(py: Python<'py>, n: usize, seed: u64) -> PyResult<Bound<'py, PyDict>> {
    let (data, _) = preprocess(&planted_table(n, seed), &planted_bias_schema()).map_err(err)?;
    let out = PyDict::new(py);
    let x: Vec<Vec<f64>> = data.x.rows().into_iter().map(|r| r.to_vec()).collect();
    out.set_item("x", x)?;
    out.set_item("y", data.y)?;
    for p in data.protected {
        out.set_item(p.name, p.labels)?;
    }
    Ok(out)
}

fn parse_task(task: &str) -> PyResult<Task> {
    match task {
        "binary" => Ok(Task::Binary),
        "poisson" => Ok(Task::Poisson),
        other => Err(FairdcovError::new_err(format!("unknown task {other:?}"))),
    }
}

fn batch(
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    attrs: Vec<Sample>,
    exposure: Option<Vec<f64>>,
) -> PyResult<Batch> {
    Batch::new(matrix(&x)?, y, exposure, blocks(&attrs)).map_err(err)
}

/// A trained feed-forward network.
#[pyclass(module = "fairdcov_py", frozen)]
struct Model {
    inner: model::TrainedModel,
    epochs: usize,
}

#[pymethods]
impl Model {
    /// Trains with AdaHessian and early stopping on the validation split.
    #[staticmethod]
    #[pyo3(signature = (
        x, y, attrs, x_val, y_val, attrs_val, *,
        task = "binary", regulariser = "ccdcov", lam = 0.0,
        hidden_layers = 2, width = 32, lr = 0.01, batch_size = 256,
        max_epochs = 50, patience = 10, seed = 0,
        exposure = None, exposure_val = None,
    ))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        py: Python<'_>,
        x: Vec<Vec<f64>>,
        y: Vec<f64>,
        attrs: Vec<Sample>,
        x_val: Vec<Vec<f64>>,
        y_val: Vec<f64>,
        attrs_val: Vec<Sample>,
        task: &str,
        regulariser: &str,
        lam: f64,
        hidden_layers: usize,
        width: usize,
        lr: f64,
        batch_size: usize,
        max_epochs: usize,
        patience: usize,
        seed: u64,
        exposure: Option<Vec<f64>>,
        exposure_val: Option<Vec<f64>>,
    ) -> PyResult<Self> {
        let task = parse_task(task)?;
        let kind: RegulariserKind = regulariser.parse().map_err(err)?;
        let sub = batch(x, y, attrs, exposure)?;
        let val = batch(x_val, y_val, attrs_val, exposure_val)?;
        let spec = NetworkSpec::new(sub.x.ncols(), hidden_layers, width, task.head());
        let objective = ObjectiveSpec::new(task, kind, lam);
        let opt = OptimiserConfig {
            lr,
            batch_size: Some(batch_size),
            max_epochs,
            ..OptimiserConfig::default()
        };
        let stopping = EarlyStopping {
            patience,
            min_delta: 0.0,
        };
        let outcome = py
            .detach(|| model::train(&sub, &val, &spec, &objective, &opt, &stopping, seed))
            .map_err(err)?;
        Ok(Self {
            epochs: outcome.history.epochs.len(),
            inner: outcome.model,
        })
    }

    #[pyo3(signature = (x, exposure = None))]
    fn predict(&self, x: Vec<Vec<f64>>, exposure: Option<Vec<f64>>) -> PyResult<Vec<f64>> {
        self.inner
            .forward(&matrix(&x)?, exposure.as_deref())
            .map_err(err)
    }

    /// Epochs run before early stopping.
    #[getter]
    fn epochs(&self) -> usize {
        self.epochs
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(err)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner = model::TrainedModel::from_json(text).map_err(err)?;
        Ok(Self { inner, epochs: 0 })
    }
}

#[pymodule]
fn fairdcov_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("FairdcovError", m.py().get_type::<FairdcovError>())?;
    m.add_class::<Sample>()?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(dcov2, m)?)?;
    m.add_function(wrap_pyfunction!(dcov2_expanded, m)?)?;
    m.add_function(wrap_pyfunction!(ccdcov, m)?)?;
    m.add_function(wrap_pyfunction!(ccdcov_decompose, m)?)?;
    m.add_function(wrap_pyfunction!(jdcov2, m)?)?;
    m.add_function(wrap_pyfunction!(jdcov_decompose, m)?)?;
    m.add_function(wrap_pyfunction!(js_divergence, m)?)?;
    m.add_function(wrap_pyfunction!(uf_metric, m)?)?;
    m.add_function(wrap_pyfunction!(chi2_test, m)?)?;
    m.add_function(wrap_pyfunction!(permutation_test, m)?)?;
    m.add_function(wrap_pyfunction!(rps, m)?)?;
    m.add_function(wrap_pyfunction!(wilcoxon, m)?)?;
    m.add_function(wrap_pyfunction!(planted_bias, m)?)?;
    Ok(())
}
