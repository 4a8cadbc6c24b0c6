//! Python bindings. Arrays travel as nested lists (one row per sample);
//! networks and results travel as JSON strings with the same schema the CLI
//! writes.

use nalgebra::DMatrix;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use sparse_arx::arx::{random_network, simulate as simulate_network, InputKind, NetworkGenerator, TimeSeries};
use sparse_arx::cccp::{LambdaMode, SolveConfig};
use sparse_arx::harness::{self, BenchmarkConfig, IdentifyConfig, SolverKind};
use sparse_arx::io::{network_from_json, network_to_json};
use sparse_arx::objective::PriorMode;
use sparse_arx::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Numerical(_) | Error::Divergence(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn solver_kind(s: &str) -> PyResult<SolverKind> {
    match s {
        "cccp" => Ok(SolverKind::Cccp),
        "em" => Ok(SolverKind::Em),
        "admm" => Ok(SolverKind::Admm),
        _ => Err(PyValueError::new_err(format!("unknown solver '{s}'"))),
    }
}

fn prior_mode(s: &str) -> PyResult<PriorMode> {
    match s {
        "combined" => Ok(PriorMode::Combined),
        "element" => Ok(PriorMode::ElementOnly),
        "group" => Ok(PriorMode::GroupOnly),
        _ => Err(PyValueError::new_err(format!("unknown mode '{s}'"))),
    }
}

fn lambda_mode(lam: Option<f64>) -> PyResult<LambdaMode> {
    match lam {
        None => Ok(LambdaMode::Estimate),
        Some(v) if v > 0.0 && v.is_finite() => Ok(LambdaMode::Fixed(v)),
        Some(v) => Err(PyValueError::new_err(format!("lambda must be positive, got {v}"))),
    }
}

/// Samples-by-channels rows into a channels-by-samples matrix.
fn channels(rows: &[Vec<f64>], what: &str) -> PyResult<DMatrix<f64>> {
    let t = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != c) {
        return Err(PyValueError::new_err(format!("{what}: ragged rows")));
    }
    Ok(DMatrix::from_fn(c, t, |i, j| rows[j][i]))
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.ncols())
        .map(|t| m.column(t).iter().copied().collect())
        .collect()
}

/// Draws a stable random network and simulates it. Returns
/// `(y, u, truth_json)` with `y` and `u` as lists of samples.
#[pyfunction]
#[pyo3(signature = (nodes=10, inputs=1, order=3, samples=20, density=0.2, coeff_scale=0.5, noise_var=0.01, input_var=1.0, seed=0))]
#[allow(clippy::too_many_arguments)]
fn simulate(
    nodes: usize,
    inputs: usize,
    order: usize,
    samples: usize,
    density: f64,
    coeff_scale: f64,
    noise_var: f64,
    input_var: f64,
    seed: u64,
) -> PyResult<(Vec<Vec<f64>>, Vec<Vec<f64>>, String)> {
    let gen = NetworkGenerator {
        p: nodes,
        m: inputs,
        max_order: order,
        density,
        coeff_scale,
        noise_var,
    };
    let net = random_network(&gen, seed).map_err(to_py)?;
    let data = simulate_network(
        &net,
        samples,
        &InputKind::Gaussian {
            variance: input_var,
        },
        harness::derive_seed(seed, &[1]),
    )
    .map_err(to_py)?;
    Ok((rows(&data.y), rows(&data.u), network_to_json(&net)))
}

/// Identifies every node; returns the result JSON.
#[pyfunction]
#[pyo3(signature = (y, u=None, k=6, solver="cccp", mode="combined", lam=None, penalize_self_group=false, restarts=1, seed=0))]
#[allow(clippy::too_many_arguments)]
fn identify(
    y: Vec<Vec<f64>>,
    u: Option<Vec<Vec<f64>>>,
    k: usize,
    solver: &str,
    mode: &str,
    lam: Option<f64>,
    penalize_self_group: bool,
    restarts: usize,
    seed: u64,
) -> PyResult<String> {
    let y = channels(&y, "y")?;
    let u = match u {
        Some(u) if !u.is_empty() && !u[0].is_empty() => channels(&u, "u")?,
        _ => DMatrix::zeros(0, y.ncols()),
    };
    let data = TimeSeries::new(y, u).map_err(to_py)?;
    let cfg = IdentifyConfig {
        k,
        solver: solver_kind(solver)?,
        solve: SolveConfig {
            mode: prior_mode(mode)?,
            lambda_mode: lambda_mode(lam)?,
            penalize_self_group,
            seed,
            ..SolveConfig::default()
        },
        restarts,
        seed,
        dictionary: Vec::new(),
    };
    harness::identify(&data, &cfg)
        .map(|r| r.to_json())
        .map_err(to_py)
}

/// Runs the randomized benchmark; returns `(report_json, markdown_tables)`.
#[pyfunction]
#[pyo3(signature = (trials=10, seed=0, samples=20, k=6, modes=None))]
fn benchmark(
    trials: usize,
    seed: u64,
    samples: usize,
    k: usize,
    modes: Option<Vec<String>>,
) -> PyResult<(String, String)> {
    let mut cfg = BenchmarkConfig {
        trials,
        seed,
        samples,
        k,
        ..BenchmarkConfig::default()
    };
    if let Some(modes) = modes {
        cfg.modes = modes.iter().map(|m| prior_mode(m)).collect::<PyResult<_>>()?;
    }
    let report = harness::benchmark(&cfg).map_err(to_py)?;
    Ok((report.to_json(), report.render_tables()))
}

/// Infinity-norm coefficient error between two network JSON documents.
#[pyfunction]
fn coefficient_error(estimate_json: &str, truth_json: &str) -> PyResult<f64> {
    let est = network_from_json(estimate_json).map_err(to_py)?;
    let truth = network_from_json(truth_json).map_err(to_py)?;
    sparse_arx::metrics::coeff_inf_error(&est, &truth).map_err(to_py)
}

#[pymodule]
fn sparse_arx_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(identify, m)?)?;
    m.add_function(wrap_pyfunction!(benchmark, m)?)?;
    m.add_function(wrap_pyfunction!(coefficient_error, m)?)?;
    Ok(())
}
