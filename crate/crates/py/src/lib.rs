//! Python bindings: datasets, embeddings, sampling, pre-training,
//! fine-tuning, prompt tuning, benchmarking and gradient checks.

use std::path::PathBuf;

use graphcontrol::adapt::{self, FinetuneConfig};
use graphcontrol::condition::{condition_embedding, cosine_kernel, deepwalk_embed, discretize, DeepWalkParams};
use graphcontrol::graph::{self, DatasetBundle, Topology};
use graphcontrol::nn::{gradient_suite, SuiteDims};
use graphcontrol::pretrain::{self, PretrainConfig};
use graphcontrol::sampler::{sample_subgraph, SamplerParams};
use graphcontrol::spectral::positional_embedding;
use graphcontrol::Error;
use ndarray::Array2;
use pyo3::exceptions::{PyArithmeticError, PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBool, PyDict, PyFloat, PyInt, PyList, PyString};
use serde_json::Value;

fn err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        Error::Numerical(_) => PyArithmeticError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn rows(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn matrix(x: Vec<Vec<f64>>) -> PyResult<Array2<f64>> {
    let c = x.first().map_or(0, |r| r.len());
    if x.iter().any(|r| r.len() != c) {
        return Err(PyValueError::new_err("rows have different lengths"));
    }
    let n = x.len();
    Array2::from_shape_vec((n, c), x.into_iter().flatten().collect()).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn to_py<'py>(py: Python<'py>, v: &Value) -> PyResult<Bound<'py, PyAny>> {
    Ok(match v {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => PyBool::new(py, *b).to_owned().into_any(),
        Value::Number(n) => match n.as_u64() {
            Some(u) => u.into_pyobject(py)?.into_any(),
            None => n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any(),
        },
        Value::String(s) => PyString::new(py, s).into_any(),
        Value::Array(a) => {
            let items = a.iter().map(|x| to_py(py, x)).collect::<PyResult<Vec<_>>>()?;
            PyList::new(py, items)?.into_any()
        }
        Value::Object(o) => {
            let d = PyDict::new(py);
            for (k, x) in o {
                d.set_item(k, to_py(py, x)?)?;
            }
            d.into_any()
        }
    })
}

fn from_py(v: &Bound<'_, PyAny>) -> PyResult<Value> {
    if v.is_none() {
        Ok(Value::Null)
    } else if v.is_instance_of::<PyBool>() {
        Ok(Value::Bool(v.extract()?))
    } else if v.is_instance_of::<PyInt>() {
        let i: i64 = v.extract()?;
        Ok(Value::from(i))
    } else if v.is_instance_of::<PyFloat>() {
        let f: f64 = v.extract()?;
        Ok(Value::from(f))
    } else if v.is_instance_of::<PyString>() {
        Ok(Value::String(v.extract()?))
    } else {
        Err(PyValueError::new_err(format!("unsupported config value {v}")))
    }
}

/// Overlay a Python dict on the serialized defaults; unknown keys are an error.
fn merged<T: serde::Serialize + serde::de::DeserializeOwned>(defaults: T, overrides: Option<&Bound<'_, PyDict>>) -> PyResult<T> {
    let mut value = serde_json::to_value(defaults).map_err(|e| PyValueError::new_err(e.to_string()))?;
    if let (Some(d), Value::Object(map)) = (overrides, &mut value) {
        let mut unknown = Vec::new();
        for (k, v) in d.iter() {
            let key: String = k.extract()?;
            match map.get_mut(&key) {
                Some(slot) => {
                    let mut new = from_py(&v)?;
                    if slot.is_f64() {
                        if let Some(f) = new.as_f64() {
                            new = Value::from(f);
                        }
                    }
                    *slot = new;
                }
                None => unknown.push(key),
            }
        }
        if !unknown.is_empty() {
            return Err(PyValueError::new_err(format!("unknown config keys: {}", unknown.join(", "))));
        }
    }
    serde_json::from_value(value).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn report_dict<'py>(py: Python<'py>, value: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &serde_json::to_value(value).map_err(|e| PyValueError::new_err(e.to_string()))?)
}

/// Undirected graph with optional attributes and labels.
#[pyclass(name = "Dataset", module = "pygraphcontrol", skip_from_py_object)]
#[derive(Clone)]
pub struct PyDataset {
    inner: DatasetBundle,
}

#[pymethods]
impl PyDataset {
    #[new]
    #[pyo3(signature = (num_nodes, edges, attributes=None, labels=None, num_classes=0, name="dataset"))]
    fn new(
        num_nodes: usize,
        edges: Vec<(usize, usize)>,
        attributes: Option<Vec<Vec<f64>>>,
        labels: Option<Vec<u32>>,
        num_classes: usize,
        name: &str,
    ) -> PyResult<Self> {
        let mut g = graph::Graph::from_edges(num_nodes, &edges).map_err(err)?;
        if let Some(x) = attributes {
            g = g.with_attributes(matrix(x)?).map_err(err)?;
        }
        if let Some(y) = labels {
            let c = if num_classes == 0 { y.iter().max().map_or(0, |m| *m as usize + 1) } else { num_classes };
            g = g.with_labels(y, c).map_err(err)?;
        }
        Ok(PyDataset {
            inner: DatasetBundle::new(g, name),
        })
    }

    /// Load a native dataset directory.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyDataset {
            inner: graph::load_dataset_dir(&path).map_err(err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        graph::save_dataset(&self.inner, &path).map_err(err)
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name.clone()
    }

    #[getter]
    fn num_nodes(&self) -> usize {
        self.inner.graph.num_nodes()
    }

    #[getter]
    fn num_edges(&self) -> usize {
        self.inner.graph.num_edges()
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.inner.graph.num_classes()
    }

    fn edges(&self) -> Vec<(usize, usize)> {
        self.inner.graph.edge_list()
    }

    fn labels(&self) -> Option<Vec<u32>> {
        self.inner.graph.labels().map(|l| l.to_vec())
    }

    fn attributes(&self) -> Option<Vec<Vec<f64>>> {
        self.inner.graph.attributes().map(rows)
    }

    /// `(train_ids, test_ids)`; `shots > 0` draws a few-shot split.
    #[pyo3(signature = (seed, train_fraction=0.1, shots=0))]
    fn split(&self, seed: u64, train_fraction: f64, shots: usize) -> PyResult<(Vec<usize>, Vec<usize>)> {
        let s = if shots > 0 {
            graph::make_fewshot_split(&self.inner.graph, shots, seed)
        } else {
            graph::make_split(&self.inner.graph, train_fraction, seed)
        }
        .map_err(err)?;
        Ok((s.train_ids, s.test_ids))
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(name={:?}, num_nodes={}, num_edges={})",
            self.inner.name,
            self.inner.graph.num_nodes(),
            self.inner.graph.num_edges()
        )
    }
}

/// Pre-trained encoder parameters with the configuration that produced them.
#[pyclass(name = "Checkpoint", module = "pygraphcontrol", skip_from_py_object)]
#[derive(Clone)]
pub struct PyCheckpoint {
    inner: pretrain::Checkpoint,
}

#[pymethods]
impl PyCheckpoint {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyCheckpoint {
            inner: pretrain::Checkpoint::load(&path).map_err(err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(err)
    }

    fn to_bytes(&self) -> Vec<u8> {
        self.inner.to_bytes()
    }

    /// `(k, hidden, layers)`.
    #[getter]
    fn dims(&self) -> (usize, usize, usize) {
        self.inner.dims()
    }

    #[getter]
    fn source(&self) -> String {
        self.inner.source.clone()
    }

    fn config<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        report_dict(py, &self.inner.config)
    }
}

/// Positional embedding `(matrix, eigenvalues)` of the whole graph.
#[pyfunction]
#[pyo3(signature = (dataset, k=32))]
fn graph_positional_embedding(dataset: &PyDataset, k: usize) -> PyResult<(Vec<Vec<f64>>, Vec<f64>)> {
    let pe = positional_embedding(&dataset.inner.graph, k).map_err(err)?;
    Ok((rows(&pe.matrix), pe.eigenvalues))
}

/// Cosine kernel of attribute rows.
#[pyfunction(name = "cosine_kernel")]
fn py_cosine_kernel(attributes: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    Ok(rows(&cosine_kernel(matrix(attributes)?.view()).map_err(err)?.matrix))
}

/// Condition embedding of attribute rows thresholded at `threshold`.
#[pyfunction]
#[pyo3(signature = (attributes, threshold, k=32))]
fn condition(attributes: Vec<Vec<f64>>, threshold: f64, k: usize) -> PyResult<Vec<Vec<f64>>> {
    let kernel = cosine_kernel(matrix(attributes)?.view()).map_err(err)?;
    let adj = discretize(&kernel, threshold).map_err(err)?;
    Ok(rows(condition_embedding(&adj, k, threshold).map_err(err)?.matrix()))
}

/// Node ids of the RWR subgraph around `center` (center first).
#[pyfunction]
#[pyo3(signature = (dataset, center, seed, walk_steps=256, restart_rate=0.8))]
fn subgraph_nodes(dataset: &PyDataset, center: usize, seed: u64, walk_steps: usize, restart_rate: f64) -> PyResult<Vec<usize>> {
    let params = SamplerParams {
        walk_steps,
        restart_rate,
    };
    let s = sample_subgraph(&dataset.inner.graph, center, params, seed).map_err(err)?;
    let mut ids = s.node_ids.clone();
    ids.swap(0, s.center_local_id);
    Ok(ids)
}

/// DeepWalk attributes; keyword overrides as in the `embed` subcommand.
#[pyfunction]
#[pyo3(signature = (dataset, config=None))]
fn deepwalk(dataset: &PyDataset, config: Option<&Bound<'_, PyDict>>) -> PyResult<Vec<Vec<f64>>> {
    let params: DeepWalkParams = merged(DeepWalkParams::default(), config)?;
    Ok(rows(&deepwalk_embed(&dataset.inner.graph.structure(), &params).map_err(err)?))
}

/// Structural pre-training; returns `(checkpoint, loss_curve)`.
#[pyfunction(name = "pretrain")]
#[pyo3(signature = (dataset, config=None))]
fn py_pretrain(py: Python<'_>, dataset: &PyDataset, config: Option<&Bound<'_, PyDict>>) -> PyResult<(PyCheckpoint, Vec<f64>)> {
    let config: PretrainConfig = merged(PretrainConfig::default(), config)?;
    let ds = dataset.inner.clone();
    let out = py
        .detach(move || pretrain::pretrain(&ds.graph.structure(), &config, &ds.name))
        .map_err(err)?;
    Ok((PyCheckpoint { inner: out.checkpoint }, out.loss_curve))
}

fn adapt_config(dataset: &PyDataset, config: Option<&Bound<'_, PyDict>>, base: FinetuneConfig, use_profile: bool) -> PyResult<FinetuneConfig> {
    let mut defaults = base;
    if use_profile {
        if let Some(p) = adapt::profile(&dataset.inner.name) {
            p.apply(&mut defaults);
        }
    }
    merged(defaults, config)
}

/// Repeated runs over independent seeds; returns the report as a dict.
#[pyfunction]
#[pyo3(signature = (dataset, checkpoint=None, config=None, use_profile=true))]
fn benchmark<'py>(
    py: Python<'py>,
    dataset: &PyDataset,
    checkpoint: Option<&PyCheckpoint>,
    config: Option<&Bound<'py, PyDict>>,
    use_profile: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let config = adapt_config(dataset, config, FinetuneConfig::default(), use_profile)?;
    let (ds, ck) = (dataset.inner.clone(), checkpoint.map(|c| c.inner.clone()));
    let report = py.detach(move || adapt::benchmark(&ds, &config, ck.as_ref(), None)).map_err(err)?;
    let curves: Vec<Value> = report
        .runs
        .iter()
        .map(|r| serde_json::to_value(&r.curve).unwrap_or(Value::Null))
        .collect();
    let d = report_dict(py, &report)?;
    d.set_item("curves", to_py(py, &Value::Array(curves))?)?;
    Ok(d)
}

fn single_run<'py>(
    py: Python<'py>,
    dataset: &PyDataset,
    checkpoint: &PyCheckpoint,
    train_ids: Vec<usize>,
    test_ids: Vec<usize>,
    config: FinetuneConfig,
    prompt: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let split = graph::DataSplit {
        train_ids,
        test_ids,
        seed: config.seed,
    };
    let (ds, ck) = (dataset.inner.clone(), checkpoint.inner.clone());
    let (_, result) = py
        .detach(move || {
            if prompt {
                adapt::prompt_tune(&ck, &ds, &split, &config)
            } else {
                adapt::finetune(&ck, &ds, &split, &config)
            }
        })
        .map_err(err)?;
    let d = report_dict(py, &result)?;
    d.set_item("curve", report_dict(py, &result.curve)?)?;
    Ok(d)
}

/// One fine-tuning run on an explicit split; returns the run result.
#[pyfunction]
#[pyo3(signature = (dataset, checkpoint, train_ids, test_ids, config=None, use_profile=true))]
fn finetune<'py>(
    py: Python<'py>,
    dataset: &PyDataset,
    checkpoint: &PyCheckpoint,
    train_ids: Vec<usize>,
    test_ids: Vec<usize>,
    config: Option<&Bound<'py, PyDict>>,
    use_profile: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let config = adapt_config(dataset, config, FinetuneConfig::default(), use_profile)?;
    single_run(py, dataset, checkpoint, train_ids, test_ids, config, false)
}

/// One prompt-tuning run on an explicit split; returns the run result.
#[pyfunction]
#[pyo3(signature = (dataset, checkpoint, train_ids, test_ids, config=None, use_profile=true))]
fn prompt_tune<'py>(
    py: Python<'py>,
    dataset: &PyDataset,
    checkpoint: &PyCheckpoint,
    train_ids: Vec<usize>,
    test_ids: Vec<usize>,
    config: Option<&Bound<'py, PyDict>>,
    use_profile: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let base = FinetuneConfig {
        mode: adapt::Mode::Prompt,
        ..FinetuneConfig::default()
    };
    let config = adapt_config(dataset, config, base, use_profile)?;
    single_run(py, dataset, checkpoint, train_ids, test_ids, config, true)
}

/// Finite-difference gradient suite; `{case: max relative error}`.
#[pyfunction]
#[pyo3(signature = (seed=0))]
fn gradcheck(seed: u64) -> PyResult<Vec<(String, f64, bool)>> {
    let reports = gradient_suite(seed, SuiteDims::default()).map_err(err)?;
    Ok(reports
        .into_iter()
        .map(|(n, r)| {
            let ok = r.passes(1e-4);
            (n, r.max_relative_error, ok)
        })
        .collect())
}

/// Names of the built-in hyper-parameter profiles.
#[pyfunction]
fn profiles() -> Vec<&'static str> {
    adapt::PROFILES.iter().map(|p| p.name).collect()
}

#[pymodule]
fn pygraphcontrol(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyCheckpoint>()?;
    m.add_function(wrap_pyfunction!(graph_positional_embedding, m)?)?;
    m.add_function(wrap_pyfunction!(py_cosine_kernel, m)?)?;
    m.add_function(wrap_pyfunction!(condition, m)?)?;
    m.add_function(wrap_pyfunction!(subgraph_nodes, m)?)?;
    m.add_function(wrap_pyfunction!(deepwalk, m)?)?;
    m.add_function(wrap_pyfunction!(py_pretrain, m)?)?;
    m.add_function(wrap_pyfunction!(benchmark, m)?)?;
    m.add_function(wrap_pyfunction!(finetune, m)?)?;
    m.add_function(wrap_pyfunction!(prompt_tune, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    m.add_function(wrap_pyfunction!(profiles, m)?)?;
    Ok(())
}
