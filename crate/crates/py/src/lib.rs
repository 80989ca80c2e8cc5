//! Python bindings. Parameter sections are passed as TOML strings using the
//! same keys as the CLI run configuration.

use oetharvest::envgen::{generate_scene, GenerationParams};
use oetharvest::scene::compute_free_space;
use oetharvest::shapemodel::GenerativeModel;
use oetharvest::sim::{self, ScenarioConfig, ScenarioResult, SweepRow, SweepSpec};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict, PyList};
use serde::de::DeserializeOwned;

fn domain(e: oetharvest::Error) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn section<T: DeserializeOwned + Default>(toml_text: Option<&str>) -> PyResult<T> {
    match toml_text {
        Some(t) => toml::from_str(t).map_err(|e| PyValueError::new_err(e.message().to_string())),
        None => Ok(T::default()),
    }
}

/// Derived seed for a named stream.
#[pyfunction]
fn sub_seed(root: u64, stream: &str) -> u64 {
    sim::sub_seed(root, stream)
}

/// Generates an environment. Returns a dict with the grid size, the
/// row-major label codes and the free-space fraction for `robot_radius_um`.
#[pyfunction]
#[pyo3(signature = (seed=0, params=None, robot_radius_um=100.0))]
fn generate<'py>(py: Python<'py>, seed: u64, params: Option<&str>, robot_radius_um: f64) -> PyResult<Bound<'py, PyDict>> {
    let mut p: GenerationParams = section(params)?;
    p.seed = sim::sub_seed(seed, "envgen");
    let scene = generate_scene(&GenerativeModel::default_model(), &p).map_err(domain)?;
    let free = compute_free_space(&scene.env, robot_radius_um).map_err(domain)?;
    let labels: Vec<u8> = scene.env.labels.data.iter().map(|l| l.code()).collect();
    let d = PyDict::new(py);
    d.set_item("nx", scene.env.nx())?;
    d.set_item("ny", scene.env.ny())?;
    d.set_item("resolution_um", scene.env.resolution_um)?;
    d.set_item("labels", PyBytes::new(py, &labels))?;
    d.set_item("regions", scene.regions.len())?;
    d.set_item("free_space_fraction", free.fraction)?;
    Ok(d)
}

fn result_dict<'py>(py: Python<'py>, r: &ScenarioResult) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("seed", r.seed)?;
    d.set_item("robots", r.robots)?;
    d.set_item("free_space_fraction", r.free_space_fraction)?;
    d.set_item("targets", r.targets)?;
    d.set_item("journeys_attempted", r.journeys_attempted)?;
    d.set_item("journeys_succeeded", r.journeys_succeeded)?;
    d.set_item("invalid_start_goal", r.invalid_start_goal)?;
    d.set_item("plan_failure", r.plan_failure)?;
    d.set_item("collected", r.collected)?;
    d.set_item("verified_clean", r.verified_clean)?;
    d.set_item("success_rate", r.success_rate())?;
    Ok(d)
}

fn row_dict<'py>(py: Python<'py>, r: &SweepRow) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("robots", r.robots)?;
    d.set_item("bin_lo_pct", r.bin_lo_pct)?;
    d.set_item("bin_width_pct", r.bin_width_pct)?;
    d.set_item("scenarios", r.scenarios)?;
    d.set_item("journeys_attempted", r.journeys_attempted)?;
    d.set_item("journeys_succeeded", r.journeys_succeeded)?;
    d.set_item("mean_success_rate", r.mean_success_rate)?;
    d.set_item("invalid_start_goal", r.invalid_start_goal)?;
    d.set_item("plan_failure", r.plan_failure)?;
    Ok(d)
}

/// Runs one harvesting scenario and returns its summary.
#[pyfunction]
#[pyo3(signature = (seed=0, config=None))]
fn simulate<'py>(py: Python<'py>, seed: u64, config: Option<&str>) -> PyResult<Bound<'py, PyDict>> {
    let mut c: ScenarioConfig = section(config)?;
    c.seed = seed;
    let model = GenerativeModel::default_model();
    let r = py.detach(|| sim::run_scenario(&c, &model)).map_err(domain)?;
    result_dict(py, &r)
}

/// Runs a scenario grid and returns the aggregated rows.
#[pyfunction]
#[pyo3(signature = (seed=0, spec=None, jobs=1))]
fn sweep<'py>(py: Python<'py>, seed: u64, spec: Option<&str>, jobs: usize) -> PyResult<Bound<'py, PyList>> {
    let s: SweepSpec = section(spec)?;
    let configs = s.configs(seed);
    let model = GenerativeModel::default_model();
    let r = py.detach(|| sim::sweep(&configs, &model, jobs)).map_err(domain)?;
    let rows = PyList::empty(py);
    for row in &r.rows {
        rows.append(row_dict(py, row)?)?;
    }
    Ok(rows)
}

#[pymodule]
fn oetharvest_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(sub_seed, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    Ok(())
}
