use std::path::PathBuf;

use finslerlab::connection::BaseGeometry;
use finslerlab::curves::{integrate_with, CurveState, IntegratorOptions};
use finslerlab::finsler::{metric_tensor, validate_structure, BasePoint, FinslerStructure, ValidationTolerances};
use finslerlab::jetspace::{cross_validate, CrossCheckOptions};
use finslerlab::maps::{affine_residual, SmoothMap};
use finslerlab::report::to_canonical_json;
use finslerlab::sampling::{sample_base_points, SampleSpec};
use finslerlab::scenario::{run_affine, run_jet_report, run_validate, Scenario};
use ndarray::{Array2, Array3};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.outer_iter().map(|r| r.to_vec()).collect()
}

fn slabs(a: &Array3<f64>) -> Vec<Vec<Vec<f64>>> {
    a.outer_iter().map(|m| m.outer_iter().map(|r| r.to_vec()).collect()).collect()
}

/// A Finsler structure `F²(t, s)`.
#[pyclass(name = "Structure", frozen)]
struct PyStructure {
    inner: FinslerStructure,
}

#[pymethods]
impl PyStructure {
    /// Raw `F²` in `t1..tp`, `s1..sp`.
    #[new]
    #[pyo3(signature = (dim, f_squared, label = "custom"))]
    fn new(dim: usize, f_squared: &str, label: &str) -> PyResult<Self> {
        Ok(PyStructure { inner: FinslerStructure::new(dim, f_squared, label).map_err(err)? })
    }

    #[staticmethod]
    fn euclidean(dim: usize) -> PyResult<Self> {
        Ok(PyStructure { inner: FinslerStructure::euclidean(dim).map_err(err)? })
    }

    #[staticmethod]
    fn riemannian(metric: Vec<Vec<String>>) -> PyResult<Self> {
        Ok(PyStructure { inner: FinslerStructure::riemannian(&metric).map_err(err)? })
    }

    #[staticmethod]
    fn randers(alpha: Vec<Vec<String>>, beta: Vec<String>) -> PyResult<Self> {
        Ok(PyStructure { inner: FinslerStructure::randers(&alpha, &beta).map_err(err)? })
    }

    #[staticmethod]
    fn randers_standard(dim: usize, b: f64) -> PyResult<Self> {
        Ok(PyStructure { inner: FinslerStructure::randers_standard(dim, b).map_err(err)? })
    }

    #[staticmethod]
    fn locally_minkowski(dim: usize, f_squared: &str) -> PyResult<Self> {
        Ok(PyStructure { inner: FinslerStructure::locally_minkowski(dim, f_squared).map_err(err)? })
    }

    #[staticmethod]
    fn quartic_minkowski(dim: usize) -> PyResult<Self> {
        Ok(PyStructure { inner: FinslerStructure::quartic_minkowski(dim).map_err(err)? })
    }

    #[staticmethod]
    fn round_sphere() -> PyResult<Self> {
        Ok(PyStructure { inner: FinslerStructure::round_sphere().map_err(err)? })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn label(&self) -> String {
        self.inner.label().to_string()
    }

    #[getter]
    fn f_squared(&self) -> String {
        self.inner.f_squared_text().to_string()
    }

    fn f(&self, t: Vec<f64>, s: Vec<f64>) -> PyResult<f64> {
        self.inner.f(&BasePoint::new(t, s)).map_err(err)
    }

    fn metric(&self, t: Vec<f64>, s: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
        Ok(rows(&metric_tensor(&self.inner, &BasePoint::new(t, s)).map_err(err)?))
    }

    fn spray(&self, t: Vec<f64>, s: Vec<f64>) -> PyResult<Vec<f64>> {
        let geo = BaseGeometry::new(&self.inner, &BasePoint::new(t, s), 3).map_err(err)?;
        Ok(geo.spray().to_vec())
    }

    fn nonlinear(&self, t: Vec<f64>, s: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
        let geo = BaseGeometry::new(&self.inner, &BasePoint::new(t, s), 4).map_err(err)?;
        Ok(rows(&geo.nonlinear().map_err(err)?))
    }

    /// `B^c_{ab}` indexed `[c][a][b]`.
    fn berwald(&self, t: Vec<f64>, s: Vec<f64>) -> PyResult<Vec<Vec<Vec<f64>>>> {
        let geo = BaseGeometry::new(&self.inner, &BasePoint::new(t, s), 5).map_err(err)?;
        Ok(slabs(&geo.berwald().map_err(err)?))
    }

    /// Validation report as canonical JSON.
    #[pyo3(signature = (count = 64, seed = 42))]
    fn validate(&self, count: usize, seed: u64) -> PyResult<String> {
        let spec = SampleSpec { seed: Some(seed), count: Some(count), ..Default::default() };
        let pts = sample_base_points(&self.inner, &spec).map_err(err)?;
        let rep = validate_structure(&self.inner, &pts, ValidationTolerances::default());
        let checks = rep.checks.iter().map(|c| c.to_json()).collect();
        let v = serde_json::json!({ "structure": rep.structure, "samples": rep.samples, "pass": rep.pass(), "checks": serde_json::Value::Array(checks) });
        Ok(to_canonical_json(&v))
    }

    fn __repr__(&self) -> String {
        format!("Structure({}, dim={})", self.inner.label(), self.inner.dim())
    }
}

/// Autoparallel trace: dict with `time`, `position`, `velocity`, `speed`, `speed_drift`.
#[pyfunction]
#[pyo3(signature = (structure, t0, v0, tmax, tol = 1e-8, samples = 201))]
fn geodesic<'py>(
    py: Python<'py>,
    structure: &PyStructure,
    t0: Vec<f64>,
    v0: Vec<f64>,
    tmax: f64,
    tol: f64,
    samples: usize,
) -> PyResult<Bound<'py, pyo3::types::PyDict>> {
    let opts = IntegratorOptions { tol, samples, ..Default::default() };
    let tr = integrate_with(&structure.inner, &CurveState::new(0.0, t0, v0), tmax, opts).map_err(err)?;
    let d = pyo3::types::PyDict::new(py);
    d.set_item("time", tr.samples.iter().map(|s| s.time).collect::<Vec<_>>())?;
    d.set_item("position", tr.samples.iter().map(|s| s.position.clone()).collect::<Vec<_>>())?;
    d.set_item("velocity", tr.samples.iter().map(|s| s.velocity.clone()).collect::<Vec<_>>())?;
    d.set_item("speed", tr.speed.clone())?;
    d.set_item("speed_drift", tr.speed_drift())?;
    Ok(d)
}

/// Sup norm of `τ` for the map with the given components at `(t, s)`.
#[pyfunction]
fn affine_sup(source: &PyStructure, target: &PyStructure, components: Vec<String>, t: Vec<f64>, s: Vec<f64>) -> PyResult<f64> {
    let m = SmoothMap::new(source.inner.dim(), &components).map_err(err)?;
    Ok(affine_residual(&source.inner, &target.inner, &m, &BasePoint::new(t, s)).map_err(err)?.sup)
}

/// Closed-form versus general jet blocks; report as canonical JSON.
#[pyfunction]
#[pyo3(signature = (source, target, count = 100, seed = 42))]
fn jet_report(py: Python<'_>, source: &PyStructure, target: &PyStructure, count: usize, seed: u64) -> PyResult<String> {
    let spec = SampleSpec { seed: Some(seed), count: Some(count), ..Default::default() };
    let rep = py
        .detach(|| cross_validate(&source.inner, &target.inner, &spec, &CrossCheckOptions::default()))
        .map_err(err)?;
    Ok(to_canonical_json(&rep.to_json()))
}

/// Runs `validate`, `affine` or `jet-report` on a scenario file; returns `(json, pass)`.
#[pyfunction]
fn run_scenario(py: Python<'_>, command: &str, path: PathBuf) -> PyResult<(String, bool)> {
    let sc = Scenario::from_path(&path).map_err(err)?;
    let outcome = py
        .detach(|| match command {
            "validate" => run_validate(&sc),
            "affine" => run_affine(&sc),
            "jet-report" => run_jet_report(&sc),
            other => Err(finslerlab::scenario::ScenarioError::Invalid(format!("unknown command '{other}'"))),
        })
        .map_err(err)?;
    Ok((to_canonical_json(&outcome.report), outcome.pass))
}

#[pymodule]
fn pyfinslerlab(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyStructure>()?;
    m.add_function(wrap_pyfunction!(geodesic, m)?)?;
    m.add_function(wrap_pyfunction!(affine_sup, m)?)?;
    m.add_function(wrap_pyfunction!(jet_report, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
