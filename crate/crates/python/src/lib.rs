use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use adload_core::action_space::{enumerate_actions as enumerate, ActionConstraints};
use adload_core::harness::{self, HarnessConfig, PolicyPoint, ValueSource};
use adload_core::policies::UniformPolicy;
use adload_core::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Config(_) | Error::Argument(_) | Error::Degenerate(_) => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn config(path: Option<&str>) -> PyResult<HarnessConfig> {
    match path {
        Some(p) => HarnessConfig::load(p).map_err(to_py),
        None => Ok(HarnessConfig::default()),
    }
}

fn json(value: &impl serde::Serialize) -> PyResult<String> {
    serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

/// Valid ad placements for one sub-feed, as slot bitmasks.
#[pyfunction]
#[pyo3(signature = (subfeed_index, prev_last_ad_offset=None, max_ads=2, min_position_difference=4, forbid_slot1_on_first_subfeed=true))]
fn enumerate_actions(
    subfeed_index: u32,
    prev_last_ad_offset: Option<u32>,
    max_ads: u32,
    min_position_difference: u32,
    forbid_slot1_on_first_subfeed: bool,
) -> PyResult<Vec<u32>> {
    let c = ActionConstraints {
        max_ads,
        min_position_difference,
        forbid_slot1_on_first_subfeed,
    };
    let catalog = enumerate(&c, subfeed_index, prev_last_ad_offset).map_err(to_py)?;
    Ok(catalog.actions().iter().map(|a| a.mask()).collect())
}

/// `(name, sat_loss_pct, ads_loss_pct)` for each `(name, v_sat, v_ads)`.
#[pyfunction]
fn pareto_losses(values: Vec<(String, f64, f64)>) -> PyResult<Vec<(String, f64, f64)>> {
    let points: Vec<PolicyPoint> = values
        .into_iter()
        .map(|(n, s, a)| PolicyPoint::new(n, None, s, a))
        .collect();
    let rows = harness::pareto_losses(&points, ValueSource::TrueValue).map_err(to_py)?;
    Ok(rows
        .into_iter()
        .map(|r| (r.policy_name, r.sat_loss_pct, r.ads_loss_pct))
        .collect())
}

/// Simulates uniform traffic into an adlog-v1 file; returns the record count.
#[pyfunction]
#[pyo3(signature = (path, users, seed=0, config=None))]
fn simulate_log(py: Python<'_>, path: &str, users: usize, seed: u64, config: Option<&str>) -> PyResult<usize> {
    let cfg = self::config(config)?;
    py.detach(|| {
        let records = harness::simulate(&cfg, &UniformPolicy, users, seed)?;
        harness::save_records(path, &cfg, &records)?;
        Ok(records.len())
    })
    .map_err(to_py)
}

/// Propensity checks on a log file, as a JSON report.
#[pyfunction]
#[pyo3(signature = (path, config=None))]
fn validate_log(py: Python<'_>, path: &str, config: Option<&str>) -> PyResult<String> {
    let cfg = self::config(config)?;
    let report = py
        .detach(|| {
            let records = harness::load_records(path, &cfg)?;
            harness::check_propensities(&cfg, &records)
        })
        .map_err(to_py)?;
    json(&report)
}

/// Runs the β-sweep experiment and returns the outcome as JSON.
#[pyfunction]
#[pyo3(signature = (config=None, seed=None))]
fn run_pareto(py: Python<'_>, config: Option<&str>, seed: Option<u64>) -> PyResult<String> {
    let mut cfg = self::config(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let run = py.detach(|| harness::run_pareto(&cfg)).map_err(to_py)?;
    json(&run.outcome)
}

#[pymodule]
fn adload(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(enumerate_actions, m)?)?;
    m.add_function(wrap_pyfunction!(pareto_losses, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_log, m)?)?;
    m.add_function(wrap_pyfunction!(validate_log, m)?)?;
    m.add_function(wrap_pyfunction!(run_pareto, m)?)?;
    Ok(())
}
