//! Python access to the experiment runner and a few numerical kernels.

use std::path::PathBuf;
use std::sync::Arc;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use linma_core::config::ExperimentConfig;
use linma_core::experiments::{registry_listing, run_experiment};
use linma_core::grid::{build_grid, DomainSpec};
use linma_core::linop::{assemble, greens, Region};
use linma_core::lorentz::{lorentz_norm as core_lorentz, DistributionProfile};
use linma_core::potentials::{make_potential, PotentialSpec};
use linma_core::Error;

fn to_py(e: Error) -> PyErr {
    if e.is_solver_failure() {
        PyRuntimeError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn json_to_py<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (text,))
}

/// Registry lines: `potential X`, `domain X`, `experiment X`.
#[pyfunction]
fn registry() -> Vec<String> {
    registry_listing()
}

/// Runs a TOML config given as text and returns the report as a dict.
#[pyfunction]
#[pyo3(signature = (text, output_dir, threads=None))]
fn run_toml<'py>(py: Python<'py>, text: &str, output_dir: PathBuf, threads: Option<usize>) -> PyResult<Bound<'py, PyAny>> {
    let cfg = ExperimentConfig::from_toml(text).map_err(to_py)?;
    let report = py.detach(|| run_experiment(&cfg, &output_dir, threads)).map_err(to_py)?;
    let text = serde_json::to_string(&report).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    json_to_py(py, &text)
}

/// Runs a config file; same return value as `run_toml`.
#[pyfunction]
#[pyo3(signature = (path, output_dir, threads=None))]
fn run_config<'py>(py: Python<'py>, path: PathBuf, output_dir: PathBuf, threads: Option<usize>) -> PyResult<Bound<'py, PyAny>> {
    let text = std::fs::read_to_string(&path).map_err(|e| PyValueError::new_err(format!("{}: {e}", path.display())))?;
    run_toml(py, &text, output_dir, threads)
}

/// `‖f‖_{p,q}` of cell values with uniform cell measure; `q = inf` gives the weak norm.
#[pyfunction]
fn lorentz_norm(values: Vec<f64>, cell: f64, p: f64, q: f64) -> PyResult<f64> {
    core_lorentz(&DistributionProfile::from_values(&values, cell), p, q).map_err(to_py)
}

/// Green's function of `|x|²/2` on the unit disc with pole at the centre.
/// Returns `(points, values)` over interior nodes.
#[pyfunction]
fn disc_green(py: Python<'_>, resolution: usize) -> PyResult<(Vec<(f64, f64)>, Vec<f64>)> {
    py.detach(|| {
        let grid = Arc::new(build_grid(&DomainSpec::ball(2, 1.0), resolution)?);
        let u = make_potential(&PotentialSpec::identity(), grid.clone())?;
        let op = assemble(&u, &Region::interior(&grid))?;
        let gs = greens(&op, &u, grid.nearest_node(&[0.0; 3]))?;
        let pts = gs.region.nodes.iter().map(|i| grid.point(*i)).map(|x| (x[0], x[1])).collect();
        let vals = gs.region.nodes.iter().map(|i| gs.values[*i]).collect();
        Ok((pts, vals))
    })
    .map_err(to_py)
}

#[pymodule]
fn linma(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(registry, m)?)?;
    m.add_function(wrap_pyfunction!(run_toml, m)?)?;
    m.add_function(wrap_pyfunction!(run_config, m)?)?;
    m.add_function(wrap_pyfunction!(lorentz_norm, m)?)?;
    m.add_function(wrap_pyfunction!(disc_green, m)?)?;
    Ok(())
}
