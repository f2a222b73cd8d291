use evoscope::geometry::{mds_fit, MdsConfig, MdsInit};
use evoscope::stats::{ols_fit, DesignMatrix};
use evoscope::workbench::{self, TaskConfig};
use evoscope::{canonicalize, parse, Task, TaskFamily};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use std::path::{Path, PathBuf};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

/// Serialize through JSON into plain Python objects.
fn to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(runtime_err)?;
    py.import("json")?.call_method1("loads", (text,))
}

/// A task instance: TSP, equation discovery or bin packing.
#[pyclass(name = "Task", module = "evoscope_py", frozen)]
struct PyTask {
    inner: Box<dyn Task>,
}

#[pymethods]
impl PyTask {
    #[new]
    #[pyo3(signature = (family, seed=0, size=None, dataset=None, instances=None, items=None))]
    fn new(
        family: &str,
        seed: u64,
        size: Option<usize>,
        dataset: Option<String>,
        instances: Option<usize>,
        items: Option<usize>,
    ) -> PyResult<Self> {
        let family: TaskFamily = serde_json::from_value(serde_json::Value::String(family.into())).map_err(value_err)?;
        let cfg = TaskConfig {
            family,
            seed,
            size,
            dataset,
            instances,
            items,
            instance_file: None,
            id: None,
        };
        Ok(PyTask {
            inner: cfg.build().map_err(value_err)?,
        })
    }

    #[getter]
    fn id(&self) -> &str {
        self.inner.id()
    }

    #[getter]
    fn family(&self) -> &'static str {
        self.inner.family().as_str()
    }

    #[getter]
    fn invalid_fitness(&self) -> f64 {
        self.inner.invalid_fitness()
    }

    /// `(valid, raw_fitness)` of a genome given as text (tour list or expression).
    fn evaluate(&self, genome: &str) -> (bool, f64) {
        match self.inner.extract_genome(genome) {
            Ok(g) => {
                let e = self.inner.evaluate(&self.inner.normalize(g));
                (e.valid, e.raw_fitness)
            }
            Err(_) => (false, self.inner.invalid_fitness()),
        }
    }

    /// Canonical text of a genome.
    fn canonical(&self, genome: &str) -> PyResult<String> {
        let g = self.inner.extract_genome(genome).map_err(value_err)?;
        Ok(self.inner.canonical(&self.inner.normalize(g)))
    }

    /// Task distance between two genomes; `None` when either is invalid.
    fn distance(&self, a: &str, b: &str) -> PyResult<Option<f64>> {
        let a = self.inner.normalize(self.inner.extract_genome(a).map_err(value_err)?);
        let b = self.inner.normalize(self.inner.extract_genome(b).map_err(value_err)?);
        Ok(self.inner.distance(&a, &b))
    }

    fn initial_population(&self, n: usize) -> Vec<String> {
        self.inner
            .initial_population(n)
            .iter()
            .map(|g| self.inner.canonical(g))
            .collect()
    }

    fn __repr__(&self) -> String {
        format!("Task({})", self.inner.id())
    }
}

/// Parse an expression over `variables` and return its canonical text.
#[pyfunction]
fn canonical_expr(text: &str, variables: Vec<String>) -> PyResult<String> {
    Ok(canonicalize(&parse(text, &variables).map_err(value_err)?))
}

/// Gaussian-kernel entropy of a weighted point set given its distance matrix.
#[pyfunction]
fn spatial_entropy(dist: Vec<Vec<f64>>, weights: Vec<f64>, sigma: f64) -> PyResult<f64> {
    evoscope::metrics::spatial_entropy(&dist, &weights, sigma).map_err(value_err)
}

#[pyfunction]
fn median_bandwidth(dist: Vec<Vec<f64>>) -> f64 {
    evoscope::metrics::median_bandwidth(&dist)
}

/// 2-D SMACOF embedding: `{"coords", "stress", "iterations", ...}`.
#[pyfunction]
#[pyo3(signature = (dist, seed=0, max_iter=300, eps=1e-3, init="random"))]
fn mds<'py>(
    py: Python<'py>,
    dist: Vec<Vec<f64>>,
    seed: u64,
    max_iter: usize,
    eps: f64,
    init: &str,
) -> PyResult<Bound<'py, PyAny>> {
    let init = match init {
        "random" => MdsInit::Random,
        "classical" => MdsInit::Classical,
        other => return Err(value_err(format!("unknown init {other:?} (random, classical)"))),
    };
    let cfg = MdsConfig {
        max_iter,
        eps,
        seed,
        init,
    };
    let ids: Vec<u64> = (0..dist.len() as u64).collect();
    let model = mds_fit(&dist, &ids, &cfg).map_err(value_err)?;
    to_py(py, &model)
}

/// OLS with an intercept. `columns` maps names to regressors; with
/// `clusters` the standard errors are cluster-robust.
#[pyfunction]
#[pyo3(signature = (y, columns, clusters=None))]
fn ols<'py>(
    py: Python<'py>,
    y: Vec<f64>,
    columns: &Bound<'py, PyDict>,
    clusters: Option<Vec<String>>,
) -> PyResult<Bound<'py, PyAny>> {
    let mut d = DesignMatrix::new(y).intercept();
    for (k, v) in columns.iter() {
        d = d.column(k.extract::<String>()?, v.extract::<Vec<f64>>()?);
    }
    if let Some(c) = clusters {
        d = d.clusters(c);
    }
    to_py(py, &ols_fit(&d).map_err(value_err)?)
}

/// Execute a run config; returns the manifest.
#[pyfunction]
#[pyo3(signature = (config, out=None))]
fn run_config<'py>(py: Python<'py>, config: PathBuf, out: Option<PathBuf>) -> PyResult<Bound<'py, PyAny>> {
    let summary = py
        .detach(|| workbench::cmd_run(&config, out.as_deref(), None))
        .map_err(runtime_err)?;
    to_py(py, &summary.manifest)
}

/// Analyse trajectory files; returns the per-run rows.
#[pyfunction]
#[pyo3(signature = (patterns, out, zero_shot=Vec::new()))]
fn analyze<'py>(
    py: Python<'py>,
    patterns: Vec<String>,
    out: PathBuf,
    zero_shot: Vec<PathBuf>,
) -> PyResult<Bound<'py, PyAny>> {
    let a = py
        .detach(|| workbench::cmd_analyze(&patterns, &out, &zero_shot))
        .map_err(runtime_err)?;
    to_py(py, &a.runs)
}

/// Fit regression specifications on analysis tables.
#[pyfunction]
#[pyo3(signature = (out, spec="all", descriptors=None, generations=None))]
fn stats<'py>(
    py: Python<'py>,
    out: PathBuf,
    spec: &str,
    descriptors: Option<PathBuf>,
    generations: Option<PathBuf>,
) -> PyResult<Bound<'py, PyAny>> {
    let fits = workbench::cmd_stats(descriptors.as_deref(), generations.as_deref(), spec, &out).map_err(runtime_err)?;
    to_py(py, &fits)
}

/// Header of a trajectory file.
#[pyfunction]
fn read_header<'py>(py: Python<'py>, path: PathBuf) -> PyResult<Bound<'py, PyAny>> {
    let (header, _, _) = workbench::read_trajectory(Path::new(&path)).map_err(runtime_err)?;
    to_py(py, &header)
}

#[pymodule]
fn evoscope_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTask>()?;
    m.add_function(wrap_pyfunction!(canonical_expr, m)?)?;
    m.add_function(wrap_pyfunction!(spatial_entropy, m)?)?;
    m.add_function(wrap_pyfunction!(median_bandwidth, m)?)?;
    m.add_function(wrap_pyfunction!(mds, m)?)?;
    m.add_function(wrap_pyfunction!(ols, m)?)?;
    m.add_function(wrap_pyfunction!(run_config, m)?)?;
    m.add_function(wrap_pyfunction!(analyze, m)?)?;
    m.add_function(wrap_pyfunction!(stats, m)?)?;
    m.add_function(wrap_pyfunction!(read_header, m)?)?;
    Ok(())
}
