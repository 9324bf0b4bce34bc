//! Python bindings: model loading and forward passes, profiling, latency
//! prediction, split planning and pruning.

use std::collections::BTreeMap;

use edgesplit::model::{load_input as read_input, load_model, save_model};
use edgesplit::planner::{default_candidates, greedy_split};
use edgesplit::profile::{predict_latency as predict, profile_layers, LayerProfile, LinkModel};
use edgesplit::prune::prune_with;
use edgesplit::{Error, ModelGraph, Tensor};
use pyo3::exceptions::{PyConnectionError, PyOSError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyOSError::new_err(e.to_string()),
        e @ (Error::Transport(_) | Error::Handshake(_) | Error::Remote { .. }) => {
            PyConnectionError::new_err(e.to_string())
        }
        e => PyValueError::new_err(format!("[{}] {e}", e.kind())),
    }
}

/// Converts through JSON so Python sees plain dicts and lists.
fn to_py<'py, T: Serialize>(py: Python<'py>, v: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(v).map_err(|e| PyValueError::new_err(e.to_string()))?;
    PyModule::import(py, "json")?.call_method1("loads", (text,))
}

#[pyclass(name = "Model", module = "edgesplit", frozen)]
struct PyModel {
    graph: ModelGraph,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            graph: load_model(path).map_err(py_err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        save_model(&self.graph, path).map_err(py_err)
    }

    #[getter]
    fn hash(&self) -> String {
        self.graph.hash_hex()
    }

    #[getter]
    fn num_layers(&self) -> usize {
        self.graph.len()
    }

    #[getter]
    fn input_shape(&self) -> Vec<usize> {
        self.graph.input_shape().to_vec()
    }

    #[getter]
    fn output_shape(&self) -> Vec<usize> {
        self.graph.output_shape().to_vec()
    }

    #[getter]
    fn total_flops(&self) -> u64 {
        self.graph.total_flops()
    }

    /// One dict per layer: index, name, kind, shapes, flops, output_bytes.
    fn layers<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let rows: Vec<_> = self
            .graph
            .specs()
            .map(|s| {
                serde_json::json!({
                    "index": s.index,
                    "name": s.name,
                    "kind": s.kind.name(),
                    "input_shape": s.input_shape,
                    "output_shape": s.output_shape,
                    "flops": s.flops(),
                    "output_bytes": s.output_bytes(),
                })
            })
            .collect();
        to_py(py, &rows)
    }

    /// Runs layers `start+1..=end` on a flat input of the layer-`start`
    /// boundary shape.
    #[pyo3(signature = (data, start = 0, end = None))]
    fn forward(&self, data: Vec<f32>, start: usize, end: Option<usize>) -> PyResult<Vec<f32>> {
        let end = end.unwrap_or(self.graph.len());
        let shape = self.graph.boundary_shape(start).map_err(py_err)?;
        let x = Tensor::new(shape, data).map_err(py_err)?;
        Ok(self.graph.forward_range(&x, start, end).map_err(py_err)?.into_data())
    }

    /// Time every layer on this host; returns the profile as a dict.
    #[pyo3(signature = (data, repeats = 5))]
    fn profile<'py>(&self, py: Python<'py>, data: Vec<f32>, repeats: usize) -> PyResult<Bound<'py, PyAny>> {
        let x = Tensor::new(self.graph.input_shape().to_vec(), data).map_err(py_err)?;
        to_py(py, &profile_layers(&self.graph, &x, repeats).map_err(py_err)?)
    }

    /// Prunes with per-layer keep ratios; returns the pruned model and the
    /// realized strategy.
    fn prune<'py>(&self, py: Python<'py>, actions: BTreeMap<usize, f64>) -> PyResult<(Self, Bound<'py, PyAny>)> {
        let (graph, strategy) = prune_with(&self.graph, &actions).map_err(py_err)?;
        Ok((Self { graph }, to_py(py, &strategy)?))
    }
}

/// Reads a raw little-endian f32 tensor file of the given shape.
#[pyfunction]
fn load_input(path: &str, shape: Vec<usize>) -> PyResult<Vec<f32>> {
    Ok(read_input(path, &shape).map_err(py_err)?.into_data())
}

/// Predicted latency breakdown at split `c` from two profile files.
#[pyfunction]
#[pyo3(signature = (device_profile, server_profile, bandwidth_mbps, c, overhead_ms = 0.0))]
fn predict_latency<'py>(
    py: Python<'py>,
    device_profile: &str,
    server_profile: &str,
    bandwidth_mbps: f64,
    c: usize,
    overhead_ms: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let d = LayerProfile::load(device_profile).map_err(py_err)?;
    let s = LayerProfile::load(server_profile).map_err(py_err)?;
    let link = LinkModel::new(bandwidth_mbps, overhead_ms).map_err(py_err)?;
    to_py(py, &predict(&d, &s, &link, c).map_err(py_err)?)
}

/// Greedy split choice: `{"argmin": c, "best": {...}, "candidates": [...]}`.
#[pyfunction]
#[pyo3(signature = (device_profile, server_profile, bandwidth_mbps, overhead_ms = 0.0, include_endpoints = false))]
fn plan_split<'py>(
    py: Python<'py>,
    device_profile: &str,
    server_profile: &str,
    bandwidth_mbps: f64,
    overhead_ms: f64,
    include_endpoints: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let d = LayerProfile::load(device_profile).map_err(py_err)?;
    let s = LayerProfile::load(server_profile).map_err(py_err)?;
    let link = LinkModel::new(bandwidth_mbps, overhead_ms).map_err(py_err)?;
    let candidates = default_candidates(d.num_layers(), include_endpoints);
    let choice = greedy_split(&d, &s, &link, &candidates).map_err(py_err)?;
    to_py(
        py,
        &serde_json::json!({
            "argmin": choice.best.c,
            "best": choice.best,
            "candidates": choice.candidates,
        }),
    )
}

#[pymodule]
#[pyo3(name = "edgesplit")]
fn edgesplit_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(load_input, m)?)?;
    m.add_function(wrap_pyfunction!(predict_latency, m)?)?;
    m.add_function(wrap_pyfunction!(plan_split, m)?)?;
    Ok(())
}
