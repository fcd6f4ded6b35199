//! Python bindings: the transformation kernel, the quintic blend, the safety
//! bound and a `Scenario` class that checks and simulates scenario files.

use std::path::PathBuf;

use formation::bundle::{emit_bundle, BundleInput, MatricesDocument};
use formation::scenario::Scenario as CoreScenario;
use formation::{AtCoordinates, KernelError};
use nalgebra::{Matrix3, Vector3};
use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

type Rows = [[f64; 3]; 3];

fn to_rows(m: &Matrix3<f64>) -> Rows {
    [0, 1, 2].map(|i| [0, 1, 2].map(|j| m[(i, j)]))
}

fn from_rows(r: Rows) -> Matrix3<f64> {
    Matrix3::from_fn(|i, j| r[i][j])
}

fn value_error(e: impl ToString) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn kernel_error(e: KernelError) -> PyErr {
    value_error(e)
}

/// Serializes through JSON so nested results arrive as plain dicts and lists.
fn to_python<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(value_error)?;
    py.import("json")?.call_method1("loads", (text,))
}

/// `β(s) = 6s⁵ − 15s⁴ + 10s³`, clamped to `[0, 1]`.
#[pyfunction]
fn quintic_blend(s: f64) -> f64 {
    formation::quintic_blend(s)
}

/// 3-2-1 Euler rotation matrix as nested lists.
#[pyfunction]
fn euler_matrix(beta1: f64, beta2: f64, beta3: f64) -> Rows {
    to_rows(&formation::euler_matrix(beta1, beta2, beta3))
}

/// Jacobian `Q` of the transformation with the given strains and angles.
#[pyfunction]
#[pyo3(signature = (lambda1, lambda2, psi_d=0.0, psi_r=0.0))]
fn assemble_jacobian(lambda1: f64, lambda2: f64, psi_d: f64, psi_r: f64) -> PyResult<Rows> {
    let c = AtCoordinates::shape(lambda1, lambda2, psi_d, psi_r);
    let d = formation::assemble_jacobian(&c).map_err(kernel_error)?;
    Ok(to_rows(&d.jacobian))
}

/// Canonical `(lambda1, lambda2, psi_d, psi_r)` of a planar Jacobian.
#[pyfunction]
fn decompose_jacobian(q: Rows) -> PyResult<(f64, f64, f64, f64)> {
    let d = formation::decompose_jacobian(&from_rows(q)).map_err(kernel_error)?;
    Ok((d.lambda1, d.lambda2, d.psi_d, d.psi_r))
}

/// `Q a + d`.
#[pyfunction]
fn apply_at(q: Rows, d: [f64; 3], a: [f64; 3]) -> [f64; 3] {
    let p = formation::apply_at(&from_rows(q), &Vector3::from(d), &Vector3::from(a));
    [p.x, p.y, p.z]
}

/// `2(δ + r) / d_min`.
#[pyfunction]
fn min_scaling_bound(delta: f64, radius: f64, d_min: f64) -> PyResult<f64> {
    formation::min_scaling_bound(delta, radius, d_min).map_err(kernel_error)
}

#[derive(Serialize)]
struct TraceView<'a> {
    ids: &'a [String],
    times: &'a [f64],
    actual: Vec<Vec<[f64; 3]>>,
    desired: Vec<Vec<[f64; 3]>>,
}

/// A validated scenario.
#[pyclass(name = "Scenario", module = "affine_formation")]
struct PyScenario {
    inner: CoreScenario,
}

#[pymethods]
impl PyScenario {
    /// Parses scenario text; raises `ValueError` with every problem found.
    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        CoreScenario::parse(text).map(|inner| Self { inner }).map_err(value_error)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let text = std::fs::read_to_string(&path).map_err(|e| PyOSError::new_err(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// The bundled six-agent scenario.
    #[staticmethod]
    fn default() -> Self {
        Self { inner: CoreScenario::default_experiment() }
    }

    #[getter]
    fn agent_ids(&self) -> Vec<String> {
        self.inner.matrices.order.clone()
    }

    #[getter]
    fn d_min(&self) -> f64 {
        self.inner.d_min()
    }

    #[getter]
    fn strain_bound(&self) -> f64 {
        self.inner.strain_bound()
    }

    fn to_toml(&self) -> String {
        self.inner.file.to_toml()
    }

    /// Formation matrices (row-major) with the stability report.
    fn matrices<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_python(py, &MatricesDocument::new(&self.inner.config, &self.inner.matrices))
    }

    /// Safety report of the schedule against the scenario's strain bound.
    fn check<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_python(py, &self.inner.check_safety())
    }

    /// Runs the simulation. Returns `(metrics, trace)`; with `out` a run
    /// bundle is written there as well.
    #[pyo3(signature = (skip_safety_check=false, out=None))]
    fn simulate<'py>(
        &self,
        py: Python<'py>,
        skip_safety_check: bool,
        out: Option<PathBuf>,
    ) -> PyResult<(Bound<'py, PyAny>, Bound<'py, PyAny>)> {
        let s = &self.inner;
        let trace = py.detach(|| s.simulate(skip_safety_check)).map_err(value_error)?;
        let metrics = s.metrics(&trace);
        if let Some(dir) = out {
            let input = BundleInput {
                scenario: &s.file,
                config: &s.config,
                matrices: &s.matrices,
                trace: &trace,
                metrics: &metrics,
                skip_safety_check,
            };
            emit_bundle(&input, &dir).map_err(|e| PyOSError::new_err(e.to_string()))?;
        }
        let points = |rows: &[Vec<Vector3<f64>>]| rows.iter().map(|r| r.iter().map(|p| [p.x, p.y, p.z]).collect()).collect();
        let view = TraceView { ids: &trace.ids, times: &trace.times, actual: points(&trace.actual), desired: points(&trace.desired) };
        Ok((to_python(py, &metrics)?, to_python(py, &view)?))
    }

    fn __repr__(&self) -> String {
        format!(
            "Scenario(agents={}, phases={}, duration={})",
            self.inner.config.agents.len(),
            self.inner.schedule.phases.len(),
            self.inner.params.duration
        )
    }
}

#[pymodule]
fn affine_formation(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(quintic_blend, m)?)?;
    m.add_function(wrap_pyfunction!(euler_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(assemble_jacobian, m)?)?;
    m.add_function(wrap_pyfunction!(decompose_jacobian, m)?)?;
    m.add_function(wrap_pyfunction!(apply_at, m)?)?;
    m.add_function(wrap_pyfunction!(min_scaling_bound, m)?)?;
    m.add_class::<PyScenario>()?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
