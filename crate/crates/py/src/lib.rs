//! Python bindings: model registry and interface quadratures, prelimit
//! simulation, local-time estimators, glued limit paths, marginal
//! distances, and config-driven experiment runs.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use nullrec::coefficients::{
    build_model, registry, AveragingParams, Coefficients, InterfaceAverager, Model,
    ModelOverrides,
};
use nullrec::engine::{simulate_ensemble, SimMode, SimParams};
use nullrec::harness::{run_experiment, ExperimentConfig};
use nullrec::limits::{
    build_deviation_limit, build_longtime_limit, FlowTable, LimitParams, Regime,
};
use nullrec::local_time::default_band;
use nullrec::rng::PathStreams;

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn get_model(name: &str) -> PyResult<Model> {
    build_model(&ModelOverrides::by_name(name)).map_err(err)
}

fn parse_regime(name: &str) -> PyResult<Regime> {
    match name {
        "deviation_diffusive" => Ok(Regime::DeviationDiffusive),
        "deviation_drift" => Ok(Regime::DeviationDrift),
        "longtime" => Ok(Regime::Longtime),
        other => Err(PyValueError::new_err(format!(
            "unknown regime '{other}' (expected deviation_diffusive, deviation_drift, longtime)"
        ))),
    }
}

/// Library version string.
#[pyfunction]
fn version() -> &'static str {
    nullrec::version()
}

/// Bundled models as (name, summary) pairs.
#[pyfunction]
fn list_models() -> Vec<(String, String)> {
    registry()
        .iter()
        .map(|i| (i.name.to_string(), i.summary.to_string()))
        .collect()
}

/// Interface quadratures of a bundled model at slow state `y`
/// (default: origin): side averages a+/a-, drift vector beta,
/// covariance matrix alpha, and quadrature error estimates.
#[pyfunction]
#[pyo3(signature = (model, y=None))]
fn interface_stats(py: Python<'_>, model: &str, y: Option<Vec<f64>>) -> PyResult<PyObject> {
    let m = get_model(model)?;
    let d = m.dims().d;
    let y0 = y.unwrap_or_else(|| vec![0.0; d]);
    if y0.len() != d {
        return Err(PyValueError::new_err(format!(
            "y needs {d} components for model {model}"
        )));
    }
    let avg = InterfaceAverager::new(&m, AveragingParams::default()).map_err(err)?;
    let data = avg.at(&y0).map_err(err)?;
    let out = PyDict::new_bound(py);
    out.set_item("a_plus", data.a_plus)?;
    out.set_item("a_minus", data.a_minus)?;
    out.set_item("a_err", data.a_err)?;
    out.set_item("beta", data.beta.clone())?;
    let alpha: Vec<Vec<f64>> = (0..d)
        .map(|i| data.alpha[i * d..(i + 1) * d].to_vec())
        .collect();
    out.set_item("alpha", alpha)?;
    out.set_item("quad_err", data.quad_err)?;
    Ok(out.into())
}

/// Simulates a prelimit ensemble on a recorded grid. Returns a dict with
/// `times` (n_record+1), `x` [path][point], `y` [path][point][component],
/// and `x_qv` [path][interval] (accumulated fast quadratic variation).
/// `mode` is "deviation" (original clock) or "longtime" (rescaled clock).
#[pyfunction]
#[pyo3(signature = (model, epsilon, t_end, *, mode="deviation", n_paths=1, dt_factor=0.1,
                    n_record=256, seed=0, workers=1))]
#[allow(clippy::too_many_arguments)]
fn simulate(
    py: Python<'_>,
    model: &str,
    epsilon: f64,
    t_end: f64,
    mode: &str,
    n_paths: usize,
    dt_factor: f64,
    n_record: usize,
    seed: u64,
    workers: usize,
) -> PyResult<PyObject> {
    let m = get_model(model)?;
    let d = m.dims().d;
    let sim_mode = match mode {
        "deviation" => SimMode::Deviation,
        "longtime" => SimMode::Longtime,
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown mode '{other}' (expected deviation or longtime)"
            )))
        }
    };
    let mut sp = SimParams::new(epsilon, t_end, d);
    sp.dt_factor = dt_factor;
    sp.n_record = n_record;
    let ens = simulate_ensemble(&m, &sp, sim_mode, n_paths, seed, workers).map_err(err)?;
    let y: Vec<Vec<Vec<f64>>> = ens
        .y
        .iter()
        .map(|path| path.chunks(d).map(|c| c.to_vec()).collect())
        .collect();
    let out = PyDict::new_bound(py);
    out.set_item("times", ens.times.clone())?;
    out.set_item("x", ens.x.clone())?;
    out.set_item("y", y)?;
    out.set_item("x_qv", ens.x_qv.clone())?;
    Ok(out.into())
}

/// Cumulative interface local time by the occupation-band estimator on a
/// uniform grid with time step `dt` and quadratic-variation rate
/// `qv_rate`. `band` defaults to the grid resolution scale 2*sqrt(dt).
#[pyfunction]
#[pyo3(signature = (xs, dt, qv_rate=1.0, band=None, level=0.0))]
fn band_local_time(
    xs: Vec<f64>,
    dt: f64,
    qv_rate: f64,
    band: Option<f64>,
    level: f64,
) -> PyResult<Vec<f64>> {
    if xs.len() < 2 {
        return Err(PyValueError::new_err("need at least two samples"));
    }
    if !(dt > 0.0) {
        return Err(PyValueError::new_err("dt must be positive"));
    }
    let band = band.unwrap_or_else(|| default_band(dt));
    Ok(nullrec::local_time::band_local_time(
        &xs, dt, qv_rate, band, level,
    ))
}

/// Cumulative interface local time by the reflection (Tanaka) estimator.
#[pyfunction]
#[pyo3(signature = (xs, level=0.0))]
fn tanaka_local_time(xs: Vec<f64>, level: f64) -> PyResult<Vec<f64>> {
    if xs.is_empty() {
        return Err(PyValueError::new_err("need at least one sample"));
    }
    Ok(nullrec::local_time::tanaka_local_time(&xs, level))
}

/// Expected local time at the interface up to time `t` for the glued
/// fast limit with side variances `a_plus`, `a_minus`.
#[pyfunction]
fn glued_mean_local_time(a_plus: f64, a_minus: f64, t: f64) -> f64 {
    nullrec::limits::glued_mean_local_time(a_plus, a_minus, t)
}

/// Builds one limit path for a regime. Returns a dict with `times`, `x`
/// (glued fast limit), `l` (its interface local time), and `zeta`
/// [point][component] (the limit slow motion).
#[pyfunction]
#[pyo3(signature = (model, regime, t_end, *, dt=2e-4, n_record=256, path_index=0, seed=0))]
fn limit_path(
    py: Python<'_>,
    model: &str,
    regime: &str,
    t_end: f64,
    dt: f64,
    n_record: usize,
    path_index: u64,
    seed: u64,
) -> PyResult<PyObject> {
    let m = get_model(model)?;
    let d = m.dims().d;
    let regime = parse_regime(regime)?;
    let mut lp = LimitParams::new(t_end, d);
    lp.dt = dt;
    lp.n_record = n_record;
    let avg = InterfaceAverager::new(&m, AveragingParams::default()).map_err(err)?;
    let streams = PathStreams::new(seed);
    let rec = match regime.deviation_kind() {
        Some(kind) => {
            let flow = FlowTable::for_params(&m, &lp).map_err(err)?;
            build_deviation_limit(&m, &avg, &flow, kind, &lp, &streams, path_index)
        }
        None => build_longtime_limit(&m, &avg, &lp, &streams, path_index),
    }
    .map_err(err)?;
    let zeta: Vec<Vec<f64>> = (0..rec.n_points()).map(|j| rec.zeta_at(j).to_vec()).collect();
    let out = PyDict::new_bound(py);
    out.set_item("times", rec.times.clone())?;
    out.set_item("x", rec.x.clone())?;
    out.set_item("l", rec.l.clone())?;
    out.set_item("zeta", zeta)?;
    Ok(out.into())
}

/// Two-sample Kolmogorov-Smirnov distance and asymptotic p-value.
#[pyfunction]
fn ks_distance(a: Vec<f64>, b: Vec<f64>) -> PyResult<(f64, f64)> {
    let r = nullrec::stats::ks_distance(&a, &b).map_err(err)?;
    Ok((r.d, r.p_value))
}

/// Runs a full experiment from config text (TOML). Writes the report
/// and tables to the config's output directory and returns a dict with
/// the overall verdict and one (metric, value, target, threshold,
/// verdict) tuple per row.
#[pyfunction]
#[pyo3(signature = (config_toml, workers=1))]
fn run_experiment_toml(py: Python<'_>, config_toml: &str, workers: usize) -> PyResult<PyObject> {
    let cfg = ExperimentConfig::from_str_toml(config_toml).map_err(err)?;
    let report = run_experiment(&cfg, workers).map_err(err)?;
    let rows: Vec<(String, f64, f64, f64, String)> = report
        .rows
        .iter()
        .map(|r| {
            (
                r.metric.clone(),
                r.value,
                r.target,
                r.threshold,
                r.verdict.label().to_string(),
            )
        })
        .collect();
    let out = PyDict::new_bound(py);
    out.set_item("overall", report.overall.label())?;
    out.set_item("rows", rows)?;
    out.set_item("notes", report.notes.clone())?;
    out.set_item("out_dir", report.config.output.dir.display().to_string())?;
    Ok(out.into())
}

#[pymodule]
fn nullrec_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(version, m)?)?;
    m.add_function(wrap_pyfunction!(list_models, m)?)?;
    m.add_function(wrap_pyfunction!(interface_stats, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(band_local_time, m)?)?;
    m.add_function(wrap_pyfunction!(tanaka_local_time, m)?)?;
    m.add_function(wrap_pyfunction!(glued_mean_local_time, m)?)?;
    m.add_function(wrap_pyfunction!(limit_path, m)?)?;
    m.add_function(wrap_pyfunction!(ks_distance, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment_toml, m)?)?;
    Ok(())
}
