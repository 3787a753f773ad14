//! Python bindings for the pdsf core crate.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use pdsf::cli::{resolve_config, run_experiment, Args};
use pdsf::dual::{build_dual, primal_dual_crossings};
use pdsf::explore::{default_m_d, run_with_renewals, ExplorationState, ExploreOptions, DEFAULT_DELTA};
use pdsf::scaling::{d_pi as core_d_pi, scale_path, Direction};
use pdsf::{AxisBox, DsfError, FieldConfig, LatticeSite, Point, Polyline, Stop};

fn err(e: DsfError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn json_to_py<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (text,))
}

fn site(coords: Vec<i64>) -> PyResult<LatticeSite> {
    LatticeSite::new(&coords).map_err(err)
}

/// A perturbed lattice {w + U_w}.
#[pyclass(name = "Field", module = "pdsf_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyField {
    inner: FieldConfig,
}

#[pymethods]
impl PyField {
    #[new]
    #[pyo3(signature = (dim, seed, rho = 1.0))]
    fn new(dim: usize, seed: u64, rho: f64) -> PyResult<Self> {
        let inner = FieldConfig::new(dim, seed).and_then(|f| f.with_half_width(rho)).map_err(err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn rho(&self) -> f64 {
        self.inner.half_width()
    }

    /// Position of the point attached to a lattice site.
    fn point(&self, site_coords: Vec<i64>) -> PyResult<Vec<f64>> {
        Ok(self.inner.point(&site(site_coords)?).position.coords().to_vec())
    }

    /// h(x): (site, position) of the nearest strictly higher field point.
    fn h_step(&self, x: Vec<f64>) -> PyResult<(Vec<i64>, Vec<f64>)> {
        let p = Point::new(&x).map_err(err)?;
        if p.dim() != self.inner.dim() {
            return Err(PyValueError::new_err("point dimension does not match field"));
        }
        let q = pdsf::h_step(&self.inner, &p);
        Ok((q.site.coords().to_vec(), q.position.coords().to_vec()))
    }

    /// Vertices of π^x, stopping after `steps` steps or once `height` is reached.
    #[pyo3(signature = (x, steps = None, height = None))]
    fn trace_path(&self, x: Vec<f64>, steps: Option<usize>, height: Option<f64>) -> PyResult<Vec<Vec<f64>>> {
        let stop = match (steps, height) {
            (Some(n), None) => Stop::Steps(n),
            (None, Some(h)) => Stop::Height(h),
            _ => return Err(PyValueError::new_err("give exactly one of steps or height")),
        };
        let p = Point::new(&x).map_err(err)?;
        let path = pdsf::trace_path(&self.inner, &p, stop).map_err(err)?;
        Ok(path.vertices.iter().map(|v| v.position.coords().to_vec()).collect())
    }

    /// Transverse value of π^x at height t.
    fn path_value(&self, x: Vec<f64>, t: f64) -> PyResult<Vec<f64>> {
        let p = Point::new(&x).map_err(err)?;
        let path = pdsf::trace_path(&self.inner, &p, Stop::Height(t)).map_err(err)?;
        if path.start_time() >= t {
            return Err(PyValueError::new_err("t is below the first vertex"));
        }
        path.value(t).map_err(err)
    }
}

/// Joint exploration of one path (`v=None`) or two.
#[pyclass(name = "Exploration", module = "pdsf_py")]
struct PyExploration {
    field: FieldConfig,
    state: ExplorationState,
}

#[pymethods]
impl PyExploration {
    #[new]
    #[pyo3(signature = (field, u, v = None, delta = DEFAULT_DELTA))]
    fn new(field: &PyField, u: Vec<i64>, v: Option<Vec<i64>>, delta: f64) -> PyResult<Self> {
        let f = field.inner.clone();
        let opts = ExploreOptions::lean(delta);
        let state = match v {
            None => ExplorationState::single(&f, site(u)?, opts),
            Some(v) => ExplorationState::pair(&f, site(u)?, site(v)?, opts),
        }
        .map_err(err)?;
        Ok(Self { field: f, state })
    }

    /// One joint step; returns the step event as a dict.
    fn step<'py>(&mut self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let ev = self.state.step(&self.field);
        json_to_py(py, &serde_json::to_string(&ev).map_err(|e| err(e.into()))?)
    }

    #[getter]
    fn positions(&self) -> Vec<Vec<f64>> {
        self.state.positions.iter().map(|p| p.position.coords().to_vec()).collect()
    }

    #[getter]
    fn coalesced(&self) -> bool {
        self.state.coalesced
    }

    #[getter]
    fn steps(&self) -> u64 {
        self.state.step_index
    }

    /// Steps until `max_renewals` renewals or `budget` steps; returns the records.
    #[pyo3(signature = (budget, max_renewals, m_d = None))]
    fn run_with_renewals<'py>(
        &mut self,
        py: Python<'py>,
        budget: u64,
        max_renewals: usize,
        m_d: Option<usize>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let m = m_d.unwrap_or_else(|| default_m_d(self.field.dim(), self.field.half_width()));
        let run = run_with_renewals(&mut self.state, &self.field, m, budget, max_renewals).map_err(err)?;
        json_to_py(py, &serde_json::to_string(&run.records).map_err(|e| err(e.into()))?)
    }
}

/// d_Π between two rescaled planar paths given as (times, values).
#[pyfunction]
#[pyo3(signature = (a, b, n = 1, gamma = 1.0, sigma = 1.0))]
fn d_pi(a: (Vec<f64>, Vec<f64>), b: (Vec<f64>, Vec<f64>), n: u32, gamma: f64, sigma: f64) -> PyResult<f64> {
    let scaled =
        |(t, x): (Vec<f64>, Vec<f64>)| Polyline::new(t, x).and_then(|p| scale_path(&p, n, gamma, sigma, Direction::Forward)).map_err(err);
    core_d_pi(&scaled(a)?, &scaled(b)?).map_err(err)
}

/// Dual forest summary for the window [lo, hi] of a planar field.
#[pyfunction]
#[pyo3(signature = (field, lo, hi, margin = 40.0))]
fn dual_summary<'py>(py: Python<'py>, field: &PyField, lo: Vec<f64>, hi: Vec<f64>, margin: f64) -> PyResult<Bound<'py, PyAny>> {
    let window = AxisBox::new(&lo, &hi).map_err(err)?;
    let forest = build_dual(&field.inner, &window, margin).map_err(err)?;
    let crossings = primal_dual_crossings(&field.inner, &forest).map_err(err)?;
    let summary = serde_json::json!({
        "vertices": forest.vertices.len(),
        "has_cycle": forest.has_cycle(),
        "crossings": crossings,
    });
    json_to_py(py, &summary.to_string())
}

/// Runs an experiment with `--set`-style overrides and returns its report.
#[pyfunction]
#[pyo3(signature = (experiment, overrides = Vec::new(), seed = None))]
fn run<'py>(py: Python<'py>, experiment: String, overrides: Vec<String>, seed: Option<u64>) -> PyResult<Bound<'py, PyAny>> {
    let args = Args { experiment: Some(experiment), set: overrides, seed, ..Default::default() };
    let cfg = resolve_config(None, &args).map_err(err)?;
    let outcome = py.detach(|| run_experiment(&cfg)).map_err(err)?;
    json_to_py(py, &serde_json::to_string(&outcome.report).map_err(|e| err(e.into()))?)
}

#[pyfunction]
fn search_radius(dim: usize, rho: f64) -> f64 {
    pdsf::dsf::search_radius(dim, rho)
}

#[pyfunction]
fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    pdsf::derive_seed(base, stream, index)
}

#[pymodule]
fn pdsf_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyField>()?;
    m.add_class::<PyExploration>()?;
    m.add_function(wrap_pyfunction!(d_pi, m)?)?;
    m.add_function(wrap_pyfunction!(dual_summary, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(search_radius, m)?)?;
    m.add_function(wrap_pyfunction!(derive_seed, m)?)?;
    Ok(())
}
