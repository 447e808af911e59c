//! Python bindings: `solve`, `verify`, `models` and `suites`. Results come back
//! as plain dictionaries built from the same JSON the command line writes.

use pyo3::exceptions::{PyMemoryError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use lowspace::agsp::Case;
use lowspace::error::Error;
use lowspace::hamiltonian::{build_model, ModelParams, MODEL_NAMES};
use lowspace::solver::{low_space, SolveConfig};
use lowspace::verify::{run_suite, SUITES};

fn to_py_err(e: Error) -> PyErr {
    match e {
        Error::Resource(_) => PyMemoryError::new_err(e.to_string()),
        Error::Parameter(_) | Error::Dimension(_) | Error::Contract(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn to_dict<'py>(py: Python<'py>, value: &serde_json::Value) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn parse_case(case: &str) -> PyResult<Case> {
    match case {
        "ff" => Ok(Case::Ff),
        "dg" => Ok(Case::Dg),
        "ld" => Ok(Case::Ld),
        other => Err(PyValueError::new_err(format!("unknown case '{other}' (known: ff, dg, ld)"))),
    }
}

/// Runs the solver on a catalog chain and returns energies, oracle summary and
/// the full run report.
#[pyfunction]
#[pyo3(signature = (model, n, case = "ff", delta = 1e-3, seed = 0, params = None, gamma = None, r = None, window = None, max_bond = None, dense_limit = None))]
#[allow(clippy::too_many_arguments)]
fn solve<'py>(
    py: Python<'py>,
    model: &str,
    n: usize,
    case: &str,
    delta: f64,
    seed: u64,
    params: Option<&Bound<'py, PyDict>>,
    gamma: Option<f64>,
    r: Option<usize>,
    window: Option<(f64, f64)>,
    max_bond: Option<usize>,
    dense_limit: Option<usize>,
) -> PyResult<Bound<'py, PyAny>> {
    let mut model_params = ModelParams::new();
    if let Some(p) = params {
        for (k, v) in p.iter() {
            model_params.insert(k.str()?.to_string(), v.str()?.to_string());
        }
    }
    let h = build_model(model, n, &model_params).map_err(to_py_err)?;
    let mut cfg = SolveConfig { case: parse_case(case)?, delta, seed, gamma, degeneracy: r, window, ..SolveConfig::default() };
    if let Some(b) = max_bond {
        cfg.max_bond = b;
    }
    if let Some(limit) = dense_limit {
        cfg.dense_limit = limit;
    }
    let outcome = py.detach(|| low_space(&h, &cfg));
    let sol = outcome.map_err(|f| to_py_err(f.error))?;
    let doc = serde_json::json!({
        "model": model,
        "n": n,
        "seed": seed,
        "energies": sol.energies,
        "final_overlap": sol.report.oracle.as_ref().map(|o| o.overlap),
        "mutual_closeness": sol.report.oracle.as_ref().map(|o| o.mutual_closeness),
        "report": sol.report,
    });
    to_dict(py, &doc)
}

/// Runs one self-check suite against the dense oracle.
#[pyfunction]
#[pyo3(signature = (suite, n = 8, seed = 0))]
fn verify<'py>(py: Python<'py>, suite: &str, n: usize, seed: u64) -> PyResult<Bound<'py, PyAny>> {
    let report = py.detach(|| run_suite(suite, n, seed)).map_err(to_py_err)?;
    let value = serde_json::to_value(&report).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    to_dict(py, &value)
}

#[pyfunction]
fn models() -> Vec<&'static str> {
    MODEL_NAMES.iter().copied().filter(|m| *m != "custom").collect()
}

#[pyfunction]
fn suites() -> Vec<&'static str> {
    SUITES.to_vec()
}

#[pymodule]
#[pyo3(name = "lowspace")]
fn lowspace_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add_function(wrap_pyfunction!(models, m)?)?;
    m.add_function(wrap_pyfunction!(suites, m)?)?;
    Ok(())
}
