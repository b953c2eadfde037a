//! Python bindings for the core pipeline: matrix and RNG primitives, fixture
//! generation, the margin-based loss, and the full seeded run.

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use std::path::Path;

use smp_core::config::RunConfig;
use smp_core::datagen::{generate, load_fixture, save_fixture, SyntheticSpec};
use smp_core::margin::{self, CosineClassifier, LossKind};
use smp_core::metrics;
use smp_core::numerics::{read_matrix, write_matrix, DenseMatrix, SeededRng};
use smp_core::pipeline::{run_pipeline, ModelVariant};
use smp_core::SmpError;

fn to_pyerr(e: SmpError) -> PyErr {
    match e.exit_code() {
        3 => PyIOError::new_err(e.to_string()),
        5 => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// Row-major f64 matrix with the repo's binary on-disk format.
#[pyclass(name = "Matrix", from_py_object)]
#[derive(Clone)]
struct PyMatrix {
    inner: DenseMatrix,
}

#[pymethods]
impl PyMatrix {
    #[new]
    fn new(rows: Vec<Vec<f64>>) -> PyResult<Self> {
        if rows.is_empty() {
            return Err(PyValueError::new_err("matrix needs at least one row"));
        }
        let r = rows.len();
        let c = rows[0].len();
        let mut data = Vec::with_capacity(r * c);
        for row in &rows {
            if row.len() != c {
                return Err(PyValueError::new_err("ragged rows"));
            }
            data.extend_from_slice(row);
        }
        Ok(PyMatrix { inner: DenseMatrix::from_vec(r, c, data).map_err(to_pyerr)? })
    }

    #[getter]
    fn rows(&self) -> usize {
        self.inner.rows()
    }

    #[getter]
    fn cols(&self) -> usize {
        self.inner.cols()
    }

    fn get(&self, r: usize, c: usize) -> PyResult<f64> {
        if r >= self.inner.rows() || c >= self.inner.cols() {
            return Err(PyValueError::new_err("index out of range"));
        }
        Ok(self.inner.get(r, c))
    }

    fn to_list(&self) -> Vec<Vec<f64>> {
        (0..self.inner.rows()).map(|r| self.inner.row(r).to_vec()).collect()
    }

    fn matmul(&self, other: &PyMatrix) -> PyResult<PyMatrix> {
        Ok(PyMatrix { inner: self.inner.matmul(&other.inner).map_err(to_pyerr)? })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        write_matrix(Path::new(path), &self.inner).map_err(to_pyerr)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<PyMatrix> {
        Ok(PyMatrix { inner: read_matrix(Path::new(path)).map_err(to_pyerr)? })
    }

    fn __repr__(&self) -> String {
        format!("Matrix({}x{})", self.inner.rows(), self.inner.cols())
    }
}

/// Deterministic counter-based generator used across the pipeline.
#[pyclass(name = "Rng")]
struct PyRng {
    inner: SeededRng,
}

#[pymethods]
impl PyRng {
    #[new]
    fn new(seed: u64) -> Self {
        PyRng { inner: SeededRng::new(seed) }
    }

    fn uniform(&mut self) -> f64 {
        self.inner.next_f64()
    }

    fn normal(&mut self) -> f64 {
        self.inner.next_normal()
    }

    fn normal_vec(&mut self, n: usize, std: f64) -> Vec<f64> {
        self.inner.normal_vec(n, std)
    }

    fn substream(&self, label: &str, index: u64) -> PyRng {
        PyRng { inner: self.inner.substream(label, index) }
    }
}

/// Generate a synthetic fixture directory from a JSON dataset spec.
#[pyfunction]
fn generate_fixture(spec_json: &str, seed: u64, out_dir: &str) -> PyResult<()> {
    let spec: SyntheticSpec = serde_json::from_str(spec_json)
        .map_err(|e| PyValueError::new_err(format!("dataset spec: {e}")))?;
    let fixture = generate(&spec, seed).map_err(to_pyerr)?;
    save_fixture(&fixture, Path::new(out_dir)).map_err(to_pyerr)
}

/// The built-in desk-scale config as a JSON string.
#[pyfunction]
fn default_config(seed: u64) -> PyResult<String> {
    serde_json::to_string_pretty(&RunConfig::desk_default(seed))
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

/// Full run (pretrain, base training, incremental sessions) over a saved
/// fixture; returns the report as a JSON string. `variant` is one of
/// "merged", "discriminative", "generalization"; `mpcc` overrides the
/// config toggle when given.
#[pyfunction]
#[pyo3(signature = (fixture_dir, config_json, variant = "merged", mpcc = None))]
fn run(fixture_dir: &str, config_json: &str, variant: &str, mpcc: Option<bool>) -> PyResult<String> {
    let config = RunConfig::from_json(config_json).map_err(to_pyerr)?;
    let fixture = load_fixture(Path::new(fixture_dir)).map_err(to_pyerr)?;
    let variant = ModelVariant::parse(variant).map_err(to_pyerr)?;
    let run = run_pipeline(&fixture, &config, variant, mpcc).map_err(to_pyerr)?;
    serde_json::to_string_pretty(&run.report).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

/// Margin-penalized loss of one feature against classifier columns.
#[pyfunction]
fn margin_loss(
    feature: Vec<f64>,
    weights: &PyMatrix,
    label: usize,
    scale: f64,
    margin: f64,
) -> PyResult<f64> {
    let clf = CosineClassifier::new(weights.inner.clone(), scale, margin).map_err(to_pyerr)?;
    let grads = margin::loss(LossKind::Discriminative, &feature, &clf, label).map_err(to_pyerr)?;
    Ok(grads.loss)
}

/// Harmonic mean of base and new accuracy (0 when both are 0).
#[pyfunction]
fn harmonic_accuracy(a_base: f64, a_new: f64) -> PyResult<f64> {
    metrics::harmonic_accuracy(a_base, a_new).map_err(to_pyerr)
}

#[pymodule]
fn smp_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMatrix>()?;
    m.add_class::<PyRng>()?;
    m.add_function(wrap_pyfunction!(generate_fixture, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(margin_loss, m)?)?;
    m.add_function(wrap_pyfunction!(harmonic_accuracy, m)?)?;
    Ok(())
}
