//! Python module `flexgcn_py`: skeletons, models, training, evaluation and
//! the verification tools of the `flexgcn` crate.

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use flexgcn::data::{self, synthesize as synth, SynthConfig};
use flexgcn::diagnostics::gradient_suite;
use flexgcn::graph::{self, PropagationOperator, SkeletonGraph};
use flexgcn::metrics::{self, default_auc_grid, PCK_THRESHOLD_MM};
use flexgcn::model::{Checkpoint, FlexGcnModel};
use flexgcn::numerics::Matrix;
use flexgcn::training::{self, TrainConfig};
use flexgcn::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        Error::Csv(_) => PyRuntimeError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Matrix> {
    Matrix::from_rows(&rows).map_err(py_err)
}

/// Converts any serializable value into native Python objects.
fn to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn dict_json(py: Python<'_>, d: &Bound<'_, PyDict>) -> PyResult<String> {
    py.import("json")?.call_method1("dumps", (d,))?.extract()
}

#[pyclass(name = "Skeleton", module = "flexgcn_py", from_py_object)]
#[derive(Clone)]
struct PySkeleton {
    inner: SkeletonGraph,
}

#[pymethods]
impl PySkeleton {
    #[new]
    #[pyo3(signature = (n_joints, edges, root = 0, joint_names = Vec::new()))]
    fn new(
        n_joints: usize,
        edges: Vec<(usize, usize)>,
        root: usize,
        joint_names: Vec<String>,
    ) -> PyResult<Self> {
        let inner = SkeletonGraph::new(n_joints, edges, root, joint_names).map_err(py_err)?;
        Ok(Self { inner })
    }

    /// The 17-joint Human3.6M skeleton.
    #[staticmethod]
    fn h36m() -> Self {
        Self {
            inner: SkeletonGraph::h36m(),
        }
    }

    #[staticmethod]
    #[pyo3(signature = (n, extra_edge_prob = 0.2, seed = 0))]
    fn random_connected(n: usize, extra_edge_prob: f64, seed: u64) -> PyResult<Self> {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let inner =
            SkeletonGraph::random_connected(n, extra_edge_prob, &mut rng).map_err(py_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: SkeletonGraph::from_json_str(text).map_err(py_err)?,
        })
    }

    fn to_json(&self) -> String {
        self.inner.to_json_string()
    }

    #[getter]
    fn n_joints(&self) -> usize {
        self.inner.n_joints()
    }

    #[getter]
    fn edges(&self) -> Vec<(usize, usize)> {
        self.inner.edges().to_vec()
    }

    #[getter]
    fn root(&self) -> usize {
        self.inner.root()
    }

    #[getter]
    fn joint_names(&self) -> Vec<String> {
        self.inner.joint_names().to_vec()
    }

    fn normalized_adjacency(&self) -> PyResult<Vec<Vec<f64>>> {
        Ok(graph::normalize_adjacency(&self.inner)
            .map_err(py_err)?
            .to_rows())
    }

    fn __repr__(&self) -> String {
        format!(
            "Skeleton(n_joints={}, edges={})",
            self.inner.n_joints(),
            self.inner.edges().len()
        )
    }
}

#[pyclass(name = "Model", module = "flexgcn_py")]
struct PyModel {
    inner: FlexGcnModel,
}

#[pymethods]
impl PyModel {
    /// Builds a freshly initialized model. `config` takes the training
    /// configuration keys (`hidden`, `blocks`, `s`, `irc`, ...).
    #[new]
    #[pyo3(signature = (skeleton = None, config = None))]
    fn new(
        py: Python<'_>,
        skeleton: Option<PySkeleton>,
        config: Option<Bound<'_, PyDict>>,
    ) -> PyResult<Self> {
        let cfg = train_config(py, config.as_ref())?;
        let g = skeleton.map_or_else(SkeletonGraph::h36m, |s| s.inner);
        Ok(Self {
            inner: cfg.build_model(&g).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let ckpt = Checkpoint::load(path).map_err(py_err)?;
        Ok(Self {
            inner: FlexGcnModel::from_checkpoint(&ckpt).map_err(py_err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.to_checkpoint().save(path).map_err(py_err)
    }

    /// Evaluation-mode prediction for one `N×2` pose, in training units.
    fn predict(&self, joints_2d: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        Ok(self
            .inner
            .predict(&matrix(joints_2d)?)
            .map_err(py_err)?
            .to_rows())
    }

    #[getter]
    fn n_joints(&self) -> usize {
        self.inner.n_joints()
    }

    #[getter]
    fn num_parameters(&self) -> usize {
        self.inner.parameter_census().total
    }

    #[getter]
    fn skeleton(&self) -> PySkeleton {
        PySkeleton {
            inner: self.inner.skeleton().clone(),
        }
    }

    fn config<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, self.inner.config())
    }

    fn parameter_census<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.parameter_census())
    }
}

fn train_config(py: Python<'_>, config: Option<&Bound<'_, PyDict>>) -> PyResult<TrainConfig> {
    let cfg = match config {
        Some(d) => TrainConfig::from_json_str(&dict_json(py, d)?).map_err(py_err)?,
        None => TrainConfig::default(),
    };
    cfg.validate().map_err(py_err)?;
    Ok(cfg)
}

/// Writes `n` synthetic samples to `path` as JSON lines.
#[pyfunction]
#[pyo3(signature = (path, n, seed = 0, noise_px = 0.0))]
fn synthesize(path: &str, n: usize, seed: u64, noise_px: f64) -> PyResult<usize> {
    let g = SkeletonGraph::h36m();
    let cfg = SynthConfig {
        noise_px,
        ..SynthConfig::h36m(n, seed)
    };
    let dataset = synth(&cfg, &g).map_err(py_err)?;
    data::save(&dataset, path).map_err(py_err)?;
    Ok(dataset.len())
}

/// Reads a JSON-lines dataset into a list of dicts.
#[pyfunction]
fn load_dataset<'py>(py: Python<'py>, path: &str) -> PyResult<Vec<Bound<'py, PyAny>>> {
    let dataset = data::load(path).map_err(py_err)?;
    let mut buf = Vec::new();
    data::write_jsonl(&dataset, &mut buf).map_err(py_err)?;
    let json = py.import("json")?;
    String::from_utf8_lossy(&buf)
        .lines()
        .map(|line| json.call_method1("loads", (line,)))
        .collect()
}

/// Trains on the dataset at `data_path`. Returns the final model and the
/// per-epoch history.
#[pyfunction]
#[pyo3(signature = (data_path, config = None, skeleton = None))]
fn train<'py>(
    py: Python<'py>,
    data_path: &str,
    config: Option<Bound<'py, PyDict>>,
    skeleton: Option<PySkeleton>,
) -> PyResult<(PyModel, Bound<'py, PyAny>)> {
    let cfg = train_config(py, config.as_ref())?;
    let g = skeleton.map_or_else(SkeletonGraph::h36m, |s| s.inner);
    let dataset = data::load(data_path).map_err(py_err)?;
    let model = cfg.build_model(&g).map_err(py_err)?;
    let out = training::train(model, &dataset, &cfg, &mut training::NullSink).map_err(py_err)?;
    let history = to_py(py, &out.history)?;
    Ok((PyModel { inner: out.model }, history))
}

#[pyfunction]
#[pyo3(signature = (model, data_path, target_unit_mm = 1000.0))]
fn evaluate<'py>(
    py: Python<'py>,
    model: PyRef<'_, PyModel>,
    data_path: &str,
    target_unit_mm: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let dataset = data::load(data_path).map_err(py_err)?;
    let report = training::evaluate(&model.inner, &dataset, target_unit_mm).map_err(py_err)?;
    to_py(py, &report)
}

#[pyfunction]
#[pyo3(signature = (y, y_hat, root = None))]
fn mpjpe(y: Vec<Vec<f64>>, y_hat: Vec<Vec<f64>>, root: Option<usize>) -> PyResult<f64> {
    Ok(metrics::mpjpe(&matrix(y)?, &matrix(y_hat)?, root)
        .map_err(py_err)?
        .mean)
}

#[pyfunction]
fn pa_mpjpe(y: Vec<Vec<f64>>, y_hat: Vec<Vec<f64>>) -> PyResult<f64> {
    Ok(metrics::pa_mpjpe(&matrix(y)?, &matrix(y_hat)?)
        .map_err(py_err)?
        .mean)
}

/// `(pck, auc)` on root-aligned joint errors.
#[pyfunction]
#[pyo3(signature = (y, y_hat, root = 0, threshold = PCK_THRESHOLD_MM))]
fn pck_auc(
    y: Vec<Vec<f64>>,
    y_hat: Vec<Vec<f64>>,
    root: usize,
    threshold: f64,
) -> PyResult<(f64, f64)> {
    metrics::pck_auc(
        &matrix(y)?,
        &matrix(y_hat)?,
        root,
        threshold,
        &default_auc_grid(),
    )
    .map_err(py_err)
}

#[pyfunction]
fn loss(y: Vec<Vec<f64>>, y_hat: Vec<Vec<f64>>, alpha: f64) -> PyResult<f64> {
    training::loss(&matrix(y)?, &matrix(y_hat)?, alpha).map_err(py_err)
}

/// `(1-s)·Â·H + s·Â·(Â·H)` for a normalized adjacency `Â`.
#[pyfunction]
fn propagate(adjacency: Vec<Vec<f64>>, s: f64, features: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    let op = PropagationOperator::new(matrix(adjacency)?, s).map_err(py_err)?;
    Ok(op.propagate(&matrix(features)?).map_err(py_err)?.to_rows())
}

#[pyfunction]
#[pyo3(signature = (skeleton = None, s_values = None))]
fn stability_report<'py>(
    py: Python<'py>,
    skeleton: Option<PySkeleton>,
    s_values: Option<Vec<f64>>,
) -> PyResult<Bound<'py, PyAny>> {
    let g = skeleton.map_or_else(SkeletonGraph::h36m, |s| s.inner);
    let s_values = s_values.unwrap_or_else(|| (1..10).map(|k| k as f64 / 10.0).collect());
    to_py(
        py,
        &graph::stability_report(&g, &s_values, None).map_err(py_err)?,
    )
}

#[pyfunction]
#[pyo3(signature = (seed = 0))]
fn gradient_check(py: Python<'_>, seed: u64) -> PyResult<Bound<'_, PyAny>> {
    to_py(py, &gradient_suite(seed).map_err(py_err)?)
}

#[pymodule]
fn flexgcn_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySkeleton>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add_function(wrap_pyfunction!(load_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(mpjpe, m)?)?;
    m.add_function(wrap_pyfunction!(pa_mpjpe, m)?)?;
    m.add_function(wrap_pyfunction!(pck_auc, m)?)?;
    m.add_function(wrap_pyfunction!(loss, m)?)?;
    m.add_function(wrap_pyfunction!(propagate, m)?)?;
    m.add_function(wrap_pyfunction!(stability_report, m)?)?;
    m.add_function(wrap_pyfunction!(gradient_check, m)?)?;
    Ok(())
}
