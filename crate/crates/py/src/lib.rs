//! Python bindings: graph loading, synthetic data, training, encoding,
//! checkpoints and the evaluation metrics.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyArithmeticError, PyIOError, PyValueError};
use pyo3::prelude::*;

use tgnn::eval;
use tgnn::graph::{load_graph_files, HetGraph, TreeSchema};
use tgnn::model::{encode_all, ModelParams};
use tgnn::params::Checkpoint;
use tgnn::sampler::Fanout;
use tgnn::seed::Seed;
use tgnn::synthetic::{gen_synthetic, SyntheticGraph, SyntheticSpec};
use tgnn::train::{train_from, TrainConfig, TrainState};

fn py_err(e: tgnn::Error) -> PyErr {
    if e.is_numeric() {
        PyArithmeticError::new_err(e.to_string())
    } else if matches!(e, tgnn::Error::Io { .. }) {
        PyIOError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

/// A heterogeneous graph with its tree schemas.
#[pyclass(name = "Graph", frozen)]
struct PyGraph {
    graph: HetGraph,
    schemas: Vec<TreeSchema>,
}

#[pymethods]
impl PyGraph {
    #[staticmethod]
    fn load(nodes: PathBuf, edges: PathBuf, schemas: PathBuf) -> PyResult<Self> {
        let (graph, schemas) = load_graph_files(&nodes, &edges, &schemas).map_err(py_err)?;
        Ok(PyGraph { graph, schemas })
    }

    #[getter]
    fn node_count(&self) -> usize {
        self.graph.node_count()
    }

    #[getter]
    fn edge_count(&self) -> usize {
        self.graph.edge_count()
    }

    #[getter]
    fn feature_dim(&self) -> usize {
        self.graph.feature_dim()
    }

    #[getter]
    fn types(&self) -> Vec<String> {
        self.graph.type_ids().map(|t| self.graph.type_name(t).to_string()).collect()
    }

    #[getter]
    fn schemas(&self) -> Vec<String> {
        self.schemas.iter().map(|s| s.name.clone()).collect()
    }

    fn nodes_of_type(&self, type_name: &str) -> PyResult<Vec<String>> {
        let t = self
            .graph
            .type_by_name(type_name)
            .ok_or_else(|| PyValueError::new_err(format!("unknown type {type_name:?}")))?;
        Ok(self.graph.nodes_of_type(t).into_iter().map(|n| self.graph.node_name(n).to_string()).collect())
    }

    fn __repr__(&self) -> String {
        format!("Graph({})", self.graph)
    }
}

/// Generates a planted-community graph. `preset` is "planted" or "dblp".
/// Returns the graph and a node-name to community-label map.
#[pyfunction]
#[pyo3(signature = (preset = "planted", seed = None, out_dir = None))]
fn synthetic(preset: &str, seed: Option<u64>, out_dir: Option<PathBuf>) -> PyResult<(PyGraph, BTreeMap<String, String>)> {
    let mut spec = match preset {
        "planted" => SyntheticSpec::planted_benchmark(),
        "dblp" => SyntheticSpec::dblp_scaled(),
        other => return Err(PyValueError::new_err(format!("unknown preset {other:?}"))),
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    let generated = gen_synthetic(&spec).map_err(py_err)?;
    if let Some(dir) = out_dir {
        generated.write_files(&dir).map_err(py_err)?;
    }
    let labels = (0..generated.graph.node_count())
        .map(|n| {
            (
                generated.graph.node_name(n).to_string(),
                SyntheticGraph::label_name(generated.communities[n]),
            )
        })
        .collect();
    Ok((
        PyGraph {
            graph: generated.graph,
            schemas: generated.schemas,
        },
        labels,
    ))
}

/// Trained parameters plus the per-batch loss log.
#[pyclass(name = "Model", frozen)]
struct PyModel {
    params: ModelParams,
    #[pyo3(get)]
    losses: Vec<f64>,
}

#[pymethods]
impl PyModel {
    /// Rebuilds a model from checkpoint JSON for `graph`.
    #[staticmethod]
    fn from_checkpoint(graph: &PyGraph, checkpoint_json: &str) -> PyResult<Self> {
        let ckpt = Checkpoint::from_json(checkpoint_json).map_err(py_err)?;
        let params = ModelParams::from_checkpoint(&graph.graph, &ckpt).map_err(py_err)?;
        Ok(PyModel { params, losses: Vec::new() })
    }

    fn checkpoint_json(&self) -> String {
        self.params.checkpoint().to_json()
    }

    /// Node name to embedding for every node of `graph`.
    #[pyo3(signature = (graph, fanout = None, seed = 0))]
    fn encode(&self, graph: &PyGraph, fanout: Option<usize>, seed: u64) -> PyResult<BTreeMap<String, Vec<f64>>> {
        let fanout = fanout.map_or(Fanout::Unlimited, Fanout::Cap);
        let enc = encode_all(&graph.graph, &graph.schemas, &self.params, fanout, Seed(seed)).map_err(py_err)?;
        Ok(enc
            .nodes
            .into_iter()
            .map(|(n, e)| (graph.graph.node_name(n).to_string(), e.u))
            .collect())
    }

    #[getter]
    fn hidden_dim(&self) -> usize {
        self.params.dims.hidden
    }
}

/// Trains on `graph`. `config` is TrainConfig JSON; omitted fields take
/// their defaults.
#[pyfunction]
#[pyo3(signature = (graph, config = None))]
fn train(py: Python<'_>, graph: &PyGraph, config: Option<&str>) -> PyResult<PyModel> {
    let config = match config {
        Some(text) => TrainConfig::from_json(text).map_err(py_err)?,
        None => TrainConfig::default(),
    };
    let outcome = py
        .detach(|| {
            let state = TrainState::new(&graph.graph, &config);
            train_from(&graph.graph, &graph.schemas, &config, state, &mut ())
        })
        .map_err(py_err)?;
    let losses = outcome.log.iter().map(|r| r.loss).collect();
    Ok(PyModel {
        params: outcome.state.params,
        losses,
    })
}

#[pyfunction]
#[pyo3(signature = (points, k, restarts = eval::KMEANS_RESTARTS, seed = 0))]
fn kmeans(points: Vec<Vec<f64>>, k: usize, restarts: usize, seed: u64) -> PyResult<Vec<usize>> {
    Ok(eval::kmeans(&points, k, restarts, Seed(seed)).map_err(py_err)?.labels)
}

#[pyfunction]
fn nmi(pred: Vec<usize>, truth: Vec<usize>) -> PyResult<f64> {
    eval::nmi(&pred, &truth).map_err(py_err)
}

#[pyfunction]
fn ari(pred: Vec<usize>, truth: Vec<usize>) -> PyResult<f64> {
    eval::ari(&pred, &truth).map_err(py_err)
}

#[pyfunction]
fn auc(scores: Vec<f64>, labels: Vec<bool>) -> PyResult<f64> {
    eval::auc(&scores, &labels).map_err(py_err)
}

/// Max relative error of the full-model gradient check on the toy graph.
#[pyfunction]
#[pyo3(signature = (seed = 0))]
fn gradcheck(seed: u64) -> PyResult<f64> {
    Ok(tgnn::gradcheck::gradcheck_toy(Seed(seed)).map_err(py_err)?.max_relative_error)
}

#[pymodule]
fn tgnn_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGraph>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(kmeans, m)?)?;
    m.add_function(wrap_pyfunction!(nmi, m)?)?;
    m.add_function(wrap_pyfunction!(ari, m)?)?;
    m.add_function(wrap_pyfunction!(auc, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    Ok(())
}
