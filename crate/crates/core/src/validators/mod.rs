//! Statistical validators of the limit identifications.
//!
//! Five independent lines of evidence:
//!
//! * interface martingale residuals: for test functions with controlled
//!   gluing behavior, the generator-compensated residual must be a
//!   mean-zero martingale, and a control with a hidden kink must be
//!   rejected;
//! * integral-functional scaling: the time spent by the fast argument in
//!   a fixed neighborhood scales like eps sqrt(T);
//! * Cesaro convergence of the one-sided effective diffusivities;
//! * Kolmogorov tightness moments of the slow limit component;
//! * marginal comparison tables: Kolmogorov-Smirnov distances between
//!   prelimit and limit marginals across an epsilon ladder.

pub mod testfn;

use crate::coefficients::{
    estimate_a_pm, AveragingParams, Coefficients, InterfaceAverager, InterfaceData,
};
use crate::engine::{
    par_map_paths, simulate_ensemble, solve_unperturbed, EngineError, Exponent, SdeStepper,
    SimMode, SimParams,
};
use crate::limits::{
    build_deviation_limit, build_longtime_limit, DeviationKind, FlowTable, LimitError,
    LimitParams, LimitPathRecord,
};
use crate::stats::{ks_distance, ks_noise_floor, linear_fit, mean_stderr};
use testfn::{gluing_test_functions, kink_control, TestFunction};

pub use crate::limits::Regime;

/// Parameters of a martingale-residual validation run.
#[derive(Clone, Debug)]
pub struct MartingaleParams {
    pub t_end: f64,
    /// Fine step of the limit construction (the residual grid).
    pub dt: f64,
    pub n_paths: usize,
    /// Local-time band override passed through to the construction.
    pub band: Option<f64>,
    pub x0: f64,
    pub y0: Vec<f64>,
    pub master_seed: u64,
    pub workers: usize,
}

impl MartingaleParams {
    pub fn new(t_end: f64, d: usize) -> Self {
        Self {
            t_end,
            dt: 1e-4,
            n_paths: 600,
            band: None,
            x0: 0.0,
            y0: vec![0.0; d],
            master_seed: 0,
            workers: 1,
        }
    }
}

/// Per-function outcome of a martingale validation.
#[derive(Clone, Debug)]
pub struct FnRow {
    pub name: String,
    pub mean: f64,
    pub se: f64,
    /// mean / se.
    pub z: f64,
    /// Worst z over conditional quarter-time increment bins.
    pub worst_bin_z: f64,
    pub n_bins: usize,
}

/// Outcome of one martingale validation run.
#[derive(Clone, Debug)]
pub struct MartingaleReport {
    pub regime: Regime,
    pub n_paths: usize,
    pub n_steps: usize,
    pub dt: f64,
    pub rows: Vec<FnRow>,
    pub control: FnRow,
}

impl MartingaleReport {
    /// Every glued function within 3 standard errors of zero drift, and
    /// the hidden-kink control rejected beyond 5.
    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.z.abs() <= 3.0) && self.control.z.abs() > 5.0
    }
}

/// Interface coefficient data along the residual grid: one shared record
/// when the averages are y-independent, one per node otherwise.
enum NodeCoeffs {
    Const(InterfaceData),
    PerNode(Vec<InterfaceData>),
}

impl NodeCoeffs {
    fn at(&self, j: usize) -> &InterfaceData {
        match self {
            NodeCoeffs::Const(d) => d,
            NodeCoeffs::PerNode(v) => &v[j],
        }
    }
}

struct RegimeOps<'a> {
    coeffs: &'a NodeCoeffs,
    /// Present for deviation regimes: supplies the flow Jacobian drift.
    flow: Option<&'a FlowTable>,
    use_beta: bool,
    use_alpha: bool,
}

struct PathRes {
    /// Final residual per function (zoo order, control last).
    m_t: Vec<f64>,
    /// Residual increment over the last three quarters of the horizon.
    m_inc: Vec<f64>,
    /// Conditioning key: slow component at the quarter point.
    key: f64,
}

/// Residuals of all test functions along one limit path on a stride-1
/// grid with spacing dt.
fn path_residuals(
    rec: &LimitPathRecord,
    fns: &[Box<dyn TestFunction>],
    control: &dyn TestFunction,
    ops: &RegimeOps<'_>,
    dt: f64,
) -> PathRes {
    let d = rec.d;
    let n = rec.n_points() - 1;
    let q_at = n / 4;
    let n_fns = fns.len() + 1;
    let f_at = |m: usize| -> &dyn TestFunction {
        if m < fns.len() {
            fns[m].as_ref()
        } else {
            control
        }
    };

    let mut comp = vec![0.0; n_fns];
    let mut m_q = vec![0.0; n_fns];
    let mut v0 = vec![0.0; n_fns];
    let w0 = rec.zeta_at(0);
    for m in 0..n_fns {
        v0[m] = f_at(m).value(rec.x[0], w0);
    }

    let mut grad = vec![0.0; d];
    let mut grad0 = vec![0.0; d];
    let mut hess = vec![0.0; d * d];
    let mut drift = vec![0.0; d];

    for j in 0..n {
        let x = rec.x[j];
        let w = rec.zeta_at(j);
        if j == q_at {
            for m in 0..n_fns {
                m_q[m] = f_at(m).value(x, w) - v0[m] - comp[m];
            }
        }
        let dl = rec.l[j + 1] - rec.l[j];
        let node = ops.coeffs.at(j);
        let a = node.a_at(x);
        let have_drift = if let Some(flow) = ops.flow {
            let jac = flow.jac_at(j);
            for i in 0..d {
                let mut acc = 0.0;
                for (jj, wj) in w.iter().enumerate() {
                    acc += jac[i * d + jj] * wj;
                }
                drift[i] = acc;
            }
            true
        } else {
            false
        };
        for m in 0..n_fns {
            let f = f_at(m);
            let mut inc = 0.5 * a * f.fxx(x, w) * dt;
            if have_drift {
                f.grad_w(x, w, &mut grad);
                inc += grad.iter().zip(&drift).map(|(g, v)| g * v).sum::<f64>() * dt;
            }
            if dl > 0.0 {
                let mut op = f.kink(w);
                if ops.use_beta {
                    f.grad_w0(w, &mut grad0);
                    op += node.beta.iter().zip(&grad0).map(|(b, g)| b * g).sum::<f64>();
                }
                if ops.use_alpha {
                    f.hess_w0(w, &mut hess);
                    op += 0.5
                        * node
                            .alpha
                            .iter()
                            .zip(&hess)
                            .map(|(al, h)| al * h)
                            .sum::<f64>();
                }
                inc += op * dl;
            }
            comp[m] += inc;
        }
    }

    let xt = rec.x[n];
    let wt = rec.zeta_at(n);
    let mut m_t = vec![0.0; n_fns];
    let mut m_inc = vec![0.0; n_fns];
    for m in 0..n_fns {
        m_t[m] = f_at(m).value(xt, wt) - v0[m] - comp[m];
        m_inc[m] = m_t[m] - m_q[m];
    }
    PathRes {
        m_t,
        m_inc,
        key: rec.zeta_at(q_at)[0],
    }
}

/// Aggregates per-path residuals into per-function rows with tercile
/// increment bins (bins under 30 paths are dropped).
fn aggregate_residuals(results: &[PathRes], names: &[String]) -> Vec<FnRow> {
    let n_fns = names.len();
    let mut keys: Vec<f64> = results.iter().map(|r| r.key).collect();
    keys.sort_by(|a, b| a.total_cmp(b));
    let cut1 = keys[keys.len() / 3];
    let cut2 = keys[2 * keys.len() / 3];
    let bin_of = |key: f64| -> usize {
        if key < cut1 {
            0
        } else if key < cut2 {
            1
        } else {
            2
        }
    };

    (0..n_fns)
        .map(|m| {
            let series: Vec<f64> = results.iter().map(|r| r.m_t[m]).collect();
            let (mean, se) = mean_stderr(&series).expect("nonempty residuals");
            let z = if se > 0.0 { mean / se } else { 0.0 };
            let mut worst: f64 = 0.0;
            let mut n_bins = 0;
            for b in 0..3 {
                let inc: Vec<f64> = results
                    .iter()
                    .filter(|r| bin_of(r.key) == b)
                    .map(|r| r.m_inc[m])
                    .collect();
                if inc.len() < 30 {
                    continue;
                }
                let (bm, bse) = mean_stderr(&inc).expect("nonempty bin");
                if bse > 0.0 {
                    worst = worst.max((bm / bse).abs());
                    n_bins += 1;
                }
            }
            FnRow {
                name: names[m].clone(),
                mean,
                se,
                z,
                worst_bin_z: worst,
                n_bins,
            }
        })
        .collect()
}

fn stride_one_params(p: &MartingaleParams, d: usize) -> Result<LimitParams, LimitError> {
    if !(p.t_end > 0.0) || !(p.dt > 0.0) {
        return Err(LimitError::InvalidParams(format!(
            "t_end {} and dt {} must be positive",
            p.t_end, p.dt
        )));
    }
    let n_steps = ((p.t_end / p.dt).ceil() as usize).max(8);
    Ok(LimitParams {
        t_end: p.t_end,
        dt: p.dt,
        n_record: n_steps,
        band: p.band,
        x0: p.x0,
        y0: p.y0.clone(),
        zeta0: vec![0.0; d],
    })
}

fn finish_martingale_report(
    regime: Regime,
    p: &MartingaleParams,
    n_steps: usize,
    dt: f64,
    fns: &[Box<dyn TestFunction>],
    control: &dyn TestFunction,
    results: Vec<Result<PathRes, LimitError>>,
) -> Result<MartingaleReport, LimitError> {
    let results: Result<Vec<PathRes>, LimitError> = results.into_iter().collect();
    let results = results?;
    let mut names: Vec<String> = fns.iter().map(|f| f.name().to_string()).collect();
    names.push(control.name().to_string());
    let mut rows = aggregate_residuals(&results, &names);
    let control_row = rows.pop().expect("control row");
    Ok(MartingaleReport {
        regime,
        n_paths: p.n_paths,
        n_steps,
        dt,
        rows,
        control: control_row,
    })
}

/// Validates the deviation-limit construction against its interface
/// martingale problem.
pub fn validate_deviation_martingale<C: Coefficients + Sync + ?Sized>(
    c: &C,
    kind: DeviationKind,
    p: &MartingaleParams,
) -> Result<MartingaleReport, LimitError> {
    let d = c.dims().d;
    if p.y0.len() != d {
        return Err(LimitError::InvalidParams(format!(
            "y0 must have dimension {d}"
        )));
    }
    let lp = stride_one_params(p, d)?;
    let n_steps = lp.n_record;
    let dt = p.t_end / n_steps as f64;
    let avg = InterfaceAverager::new(c, AveragingParams::default())?;
    let flow = FlowTable::for_params(c, &lp)?;
    let coeffs = if c.averaged_y_independent() {
        NodeCoeffs::Const(avg.at(flow.y_at(0))?.into_owned())
    } else {
        let mut v = Vec::with_capacity(n_steps + 1);
        for j in 0..=n_steps {
            v.push(avg.at(flow.y_at(j))?.into_owned());
        }
        NodeCoeffs::PerNode(v)
    };

    let data0 = coeffs.at(0);
    let (use_beta, use_alpha) = match kind {
        DeviationKind::Diffusive => (false, true),
        DeviationKind::Drift => (true, false),
    };
    let beta_eff = if use_beta {
        data0.beta.clone()
    } else {
        vec![0.0; d]
    };
    let alpha_eff = if use_alpha {
        data0.alpha.clone()
    } else {
        vec![0.0; d * d]
    };
    let fns = gluing_test_functions(d, &beta_eff, &alpha_eff);
    let control = kink_control();

    let ops = RegimeOps {
        coeffs: &coeffs,
        flow: Some(&flow),
        use_beta,
        use_alpha,
    };
    let results: Vec<Result<PathRes, LimitError>> =
        par_map_paths(p.n_paths, p.master_seed, p.workers, |i, streams| {
            let rec = build_deviation_limit(c, &avg, &flow, kind, &lp, streams, i)?;
            Ok(path_residuals(&rec, &fns, control.as_ref(), &ops, dt))
        });
    let regime = match kind {
        DeviationKind::Diffusive => Regime::DeviationDiffusive,
        DeviationKind::Drift => Regime::DeviationDrift,
    };
    finish_martingale_report(regime, p, n_steps, dt, &fns, control.as_ref(), results)
}

/// Validates the longtime-limit construction against its interface
/// martingale problem. Requires y-independent averages so that the
/// interface operators are constants along the path.
pub fn validate_longtime_martingale<C: Coefficients + Sync + ?Sized>(
    c: &C,
    p: &MartingaleParams,
) -> Result<MartingaleReport, LimitError> {
    let d = c.dims().d;
    if p.y0.len() != d {
        return Err(LimitError::InvalidParams(format!(
            "y0 must have dimension {d}"
        )));
    }
    if !c.is_b1_zero() {
        return Err(LimitError::InvalidParams(
            "longtime martingale validation requires b1 = 0".into(),
        ));
    }
    if !c.averaged_y_independent() {
        return Err(LimitError::InvalidParams(
            "longtime martingale validation requires y-independent averages".into(),
        ));
    }
    let lp = stride_one_params(p, d)?;
    let n_steps = lp.n_record;
    let dt = p.t_end / n_steps as f64;
    let avg = InterfaceAverager::new(c, AveragingParams::default())?;
    let data0 = avg.at(&p.y0)?.into_owned();
    let fns = gluing_test_functions(d, &data0.beta, &data0.alpha);
    let control = kink_control();
    let coeffs = NodeCoeffs::Const(data0);

    let ops = RegimeOps {
        coeffs: &coeffs,
        flow: None,
        use_beta: true,
        use_alpha: true,
    };
    let results: Vec<Result<PathRes, LimitError>> =
        par_map_paths(p.n_paths, p.master_seed, p.workers, |i, streams| {
            let rec = build_longtime_limit(c, &avg, &lp, streams, i)?;
            Ok(path_residuals(&rec, &fns, control.as_ref(), &ops, dt))
        });
    finish_martingale_report(
        Regime::Longtime,
        p,
        n_steps,
        dt,
        &fns,
        control.as_ref(),
        results,
    )
}

/// Neighborhood weight applied to the fast argument.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PsiKind {
    /// chi(|u| < 1).
    Indicator,
    /// exp(-u^2 / 2).
    Gauss,
}

impl PsiKind {
    #[inline]
    fn eval(self, u: f64) -> f64 {
        match self {
            PsiKind::Indicator => {
                if u.abs() < 1.0 {
                    1.0
                } else {
                    0.0
                }
            }
            PsiKind::Gauss => (-0.5 * u * u).exp(),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            PsiKind::Indicator => "indicator",
            PsiKind::Gauss => "gauss",
        }
    }
}

/// Parameters of the integral-functional scaling check.
#[derive(Clone, Debug)]
pub struct IntegralBoundParams {
    /// Epsilon ladder fitted at t_ref.
    pub eps_list: Vec<f64>,
    /// Horizon ladder fitted at eps_ref.
    pub t_list: Vec<f64>,
    pub eps_ref: f64,
    pub t_ref: f64,
    pub dt_factor: f64,
    pub n_paths: usize,
    pub y0: Vec<f64>,
    pub master_seed: u64,
    pub workers: usize,
}

impl IntegralBoundParams {
    pub fn new(d: usize) -> Self {
        Self {
            eps_list: vec![0.4, 0.2, 0.1, 0.05],
            t_list: vec![0.25, 1.0, 4.0],
            eps_ref: 0.1,
            t_ref: 1.0,
            dt_factor: 0.1,
            n_paths: 400,
            y0: vec![0.0; d],
            master_seed: 0,
            workers: 1,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct IntegralBoundRow {
    pub epsilon: f64,
    pub t_end: f64,
    pub mean: f64,
    pub se: f64,
}

/// Outcome of the scaling check: the mean functional should scale like
/// eps sqrt(T), i.e. log-log slopes near 1 in eps and 1/2 in T.
#[derive(Clone, Debug)]
pub struct IntegralBoundReport {
    pub psi: &'static str,
    pub rows: Vec<IntegralBoundRow>,
    pub eps_slope: f64,
    pub eps_r2: f64,
    pub t_slope: f64,
    pub t_r2: f64,
}

/// Measures E int_0^T psi(X(s) / eps) ds over epsilon and horizon ladders
/// and fits the log-log scaling exponents.
pub fn check_integral_functional_bound<C: Coefficients + Sync + ?Sized>(
    c: &C,
    psi: PsiKind,
    p: &IntegralBoundParams,
) -> Result<IntegralBoundReport, EngineError> {
    if p.eps_list.len() < 2 || p.t_list.len() < 2 {
        return Err(EngineError::BadParams(
            "need at least two epsilons and two horizons".into(),
        ));
    }
    if p.y0.len() != c.dims().d {
        return Err(EngineError::BadParams("y0 dimension mismatch".into()));
    }
    let cell = |eps: f64, t: f64| -> (f64, f64) {
        let n_steps = ((t / (p.dt_factor * eps * eps)).ceil() as usize).max(4);
        let ds = t / n_steps as f64;
        let inv_eps = 1.0 / eps;
        let accs: Vec<f64> = par_map_paths(p.n_paths, p.master_seed, p.workers, |i, streams| {
            let mut rng = streams.stream(i, crate::rng::LANE_MAIN);
            let mut st = SdeStepper::new(c, eps, ds, 0.0, &p.y0);
            let mut acc = 0.0;
            for _ in 0..n_steps {
                acc += psi.eval(st.x * inv_eps) * ds;
                st.step(&mut rng);
            }
            acc
        });
        mean_stderr(&accs).expect("nonempty cell")
    };

    let mut rows = Vec::new();
    let mut eps_means = Vec::new();
    for &eps in &p.eps_list {
        let (mean, se) = cell(eps, p.t_ref);
        rows.push(IntegralBoundRow {
            epsilon: eps,
            t_end: p.t_ref,
            mean,
            se,
        });
        eps_means.push(mean);
    }
    let mut t_means = Vec::new();
    for &t in &p.t_list {
        let reuse = rows
            .iter()
            .find(|r| r.epsilon == p.eps_ref && r.t_end == t)
            .map(|r| (r.mean, r.se));
        let (mean, se) = reuse.unwrap_or_else(|| cell(p.eps_ref, t));
        if reuse.is_none() {
            rows.push(IntegralBoundRow {
                epsilon: p.eps_ref,
                t_end: t,
                mean,
                se,
            });
        }
        t_means.push(mean);
    }

    let ln = |v: &[f64]| -> Vec<f64> { v.iter().map(|x| x.ln()).collect() };
    let (eps_slope, _, eps_r2) = linear_fit(&ln(&p.eps_list), &ln(&eps_means))
        .map_err(|e| EngineError::BadParams(format!("epsilon fit failed: {e}")))?;
    let (t_slope, _, t_r2) = linear_fit(&ln(&p.t_list), &ln(&t_means))
        .map_err(|e| EngineError::BadParams(format!("horizon fit failed: {e}")))?;
    Ok(IntegralBoundReport {
        psi: psi.label(),
        rows,
        eps_slope,
        eps_r2,
        t_slope,
        t_r2,
    })
}

/// Convergence diagnostic of the one-sided Cesaro means across doubling
/// averaging windows.
#[derive(Clone, Debug)]
pub struct CesaroReport {
    pub us: Vec<f64>,
    pub a_plus: Vec<f64>,
    pub a_minus: Vec<f64>,
    /// Relative change between consecutive windows (worst branch).
    pub rel_deltas: Vec<f64>,
    pub final_rel_delta: f64,
}

/// Evaluates the effective-diffusivity estimates at u_base 2^k for
/// k = 0..levels and reports the inter-level movement.
pub fn check_cesaro_averaging<C: Coefficients + ?Sized>(
    c: &C,
    y: &[f64],
    u_base: f64,
    levels: usize,
) -> CesaroReport {
    assert!(levels >= 2 && u_base > 0.0);
    let mut us = Vec::with_capacity(levels);
    let mut a_plus = Vec::with_capacity(levels);
    let mut a_minus = Vec::with_capacity(levels);
    for k in 0..levels {
        let u = u_base * (1u64 << k) as f64;
        let est = estimate_a_pm(c, y, u, 1e-4);
        us.push(u);
        a_plus.push(est.a_plus);
        a_minus.push(est.a_minus);
    }
    let rel = |prev: f64, next: f64| (next - prev).abs() / next.abs().max(1e-300);
    let rel_deltas: Vec<f64> = (1..levels)
        .map(|k| rel(a_plus[k - 1], a_plus[k]).max(rel(a_minus[k - 1], a_minus[k])))
        .collect();
    let final_rel_delta = *rel_deltas.last().expect("levels >= 2");
    CesaroReport {
        us,
        a_plus,
        a_minus,
        rel_deltas,
        final_rel_delta,
    }
}

/// Parameters of the tightness-moment check.
#[derive(Clone, Debug)]
pub struct TightnessParams {
    pub t_end: f64,
    pub dt: f64,
    pub n_record: usize,
    pub n_paths: usize,
    pub component: usize,
    pub moment_p: f64,
    /// Lags are t_end / divisor.
    pub lag_divisors: Vec<usize>,
    pub y0: Vec<f64>,
    pub master_seed: u64,
    pub workers: usize,
}

impl TightnessParams {
    pub fn new(t_end: f64, d: usize) -> Self {
        Self {
            t_end,
            dt: 2e-4,
            n_record: 256,
            n_paths: 400,
            component: 0,
            moment_p: 8.0,
            lag_divisors: vec![64, 32, 16, 8, 4],
            y0: vec![0.0; d],
            master_seed: 0,
            workers: 1,
        }
    }
}

/// Kolmogorov-criterion evidence: log E|w(t+h) - w(t)|^p vs log h.
#[derive(Clone, Debug)]
pub struct TightnessReport {
    pub moment_p: f64,
    pub lags: Vec<f64>,
    pub moments: Vec<f64>,
    pub slope: f64,
    pub r2: f64,
}

/// Measures increment moments of the slow limit component over a lag
/// ladder; a slope above 1 certifies the Kolmogorov tightness bound for
/// the chosen moment.
pub fn check_tightness_moments<C: Coefficients + Sync + ?Sized>(
    c: &C,
    regime: Regime,
    p: &TightnessParams,
) -> Result<TightnessReport, LimitError> {
    let d = c.dims().d;
    if p.y0.len() != d || p.component >= d {
        return Err(LimitError::InvalidParams(
            "y0 dimension or component out of range".into(),
        ));
    }
    if p.lag_divisors.len() < 2 {
        return Err(LimitError::InvalidParams("need at least two lags".into()));
    }
    let lp = LimitParams {
        t_end: p.t_end,
        dt: p.dt,
        n_record: p.n_record,
        band: None,
        x0: 0.0,
        y0: p.y0.clone(),
        zeta0: vec![0.0; d],
    };
    let avg = InterfaceAverager::new(c, AveragingParams::default())?;
    let comp = p.component;
    let series: Vec<Result<Vec<f64>, LimitError>> = match regime.deviation_kind() {
        Some(kind) => {
            let flow = FlowTable::for_params(c, &lp)?;
            par_map_paths(p.n_paths, p.master_seed, p.workers, |i, streams| {
                let rec = build_deviation_limit(c, &avg, &flow, kind, &lp, streams, i)?;
                Ok((0..rec.n_points()).map(|j| rec.zeta_at(j)[comp]).collect())
            })
        }
        None => par_map_paths(p.n_paths, p.master_seed, p.workers, |i, streams| {
            let rec = build_longtime_limit(c, &avg, &lp, streams, i)?;
            Ok((0..rec.n_points()).map(|j| rec.zeta_at(j)[comp]).collect())
        }),
    };
    let series: Result<Vec<Vec<f64>>, LimitError> = series.into_iter().collect();
    let series = series?;

    let mut idx_lags: Vec<usize> = p
        .lag_divisors
        .iter()
        .map(|&div| (p.n_record / div.max(1)).max(1))
        .collect();
    idx_lags.sort_unstable();
    idx_lags.dedup();
    if idx_lags.len() < 2 {
        return Err(LimitError::InvalidParams(
            "lag ladder collapses on this grid".into(),
        ));
    }
    let mut lags = Vec::new();
    let mut moments = Vec::new();
    for &di in &idx_lags {
        let mut acc = 0.0;
        let mut count = 0usize;
        for w in &series {
            for i in 0..(w.len() - di) {
                acc += (w[i + di] - w[i]).abs().powf(p.moment_p);
                count += 1;
            }
        }
        lags.push(p.t_end * di as f64 / p.n_record as f64);
        moments.push(acc / count as f64);
    }
    let ln_l: Vec<f64> = lags.iter().map(|x| x.ln()).collect();
    let ln_m: Vec<f64> = moments.iter().map(|x| x.ln()).collect();
    let (slope, _, r2) = linear_fit(&ln_l, &ln_m)
        .map_err(|e| LimitError::InvalidParams(format!("lag fit failed: {e}")))?;
    Ok(TightnessReport {
        moment_p: p.moment_p,
        lags,
        moments,
        slope,
        r2,
    })
}

/// Which marginal the comparison table looks at.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Observable {
    /// A slow component: deviation-scaled for deviation regimes, the raw
    /// slow coordinate for the longtime regime.
    Slow(usize),
    /// The fast coordinate in the recorded scale.
    Fast,
}

impl Observable {
    pub fn label(self) -> String {
        match self {
            Observable::Slow(c) => format!("slow[{c}]"),
            Observable::Fast => "fast".to_string(),
        }
    }
}

/// Parameters of a prelimit-vs-limit marginal comparison.
#[derive(Clone, Debug)]
pub struct MarginalCompareParams {
    pub t_end: f64,
    pub eps_list: Vec<f64>,
    pub n_prelimit: usize,
    pub n_limit: usize,
    pub dt_factor: f64,
    pub limit_dt: f64,
    pub observable: Observable,
    pub y0: Vec<f64>,
    pub master_seed: u64,
    pub workers: usize,
}

impl MarginalCompareParams {
    pub fn new(t_end: f64, d: usize, eps_list: Vec<f64>) -> Self {
        Self {
            t_end,
            eps_list,
            n_prelimit: 600,
            n_limit: 1200,
            dt_factor: 0.1,
            limit_dt: 2e-4,
            observable: Observable::Slow(0),
            y0: vec![0.0; d],
            master_seed: 0,
            workers: 1,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct KsRow {
    pub epsilon: f64,
    pub d_stat: f64,
    pub p_value: f64,
    /// 5% critical Kolmogorov-Smirnov distance for these sample sizes.
    pub floor: f64,
    pub n_prelimit: usize,
    pub n_limit: usize,
}

/// Kolmogorov-Smirnov distances between prelimit and limit marginals
/// across an epsilon ladder, plus a limit-vs-limit self-calibration.
#[derive(Clone, Debug)]
pub struct KsTable {
    pub regime: Regime,
    pub observable: Observable,
    pub rows: Vec<KsRow>,
    pub limit_self_d: f64,
    pub limit_self_floor: f64,
}

/// Builds the marginal comparison table for one regime and observable.
pub fn compare_marginals<C: Coefficients + Sync + ?Sized>(
    c: &C,
    regime: Regime,
    p: &MarginalCompareParams,
) -> Result<KsTable, LimitError> {
    let d = c.dims().d;
    if p.y0.len() != d {
        return Err(LimitError::InvalidParams(format!(
            "y0 must have dimension {d}"
        )));
    }
    if p.eps_list.is_empty() || p.eps_list.iter().any(|&e| !(e > 0.0)) {
        return Err(LimitError::InvalidParams(
            "epsilon ladder must be nonempty and positive".into(),
        ));
    }
    let comp = match p.observable {
        Observable::Slow(cc) if cc >= d => {
            return Err(LimitError::InvalidParams(format!(
                "slow component {cc} out of range for d = {d}"
            )));
        }
        Observable::Slow(cc) => Some(cc),
        Observable::Fast => None,
    };

    // Limit-side sample (noise lanes disjoint from the prelimit lane).
    let lp = LimitParams {
        t_end: p.t_end,
        dt: p.limit_dt,
        n_record: 8,
        band: None,
        x0: 0.0,
        y0: p.y0.clone(),
        zeta0: vec![0.0; d],
    };
    let avg = InterfaceAverager::new(c, AveragingParams::default())?;
    let limit_vals: Vec<Result<f64, LimitError>> = match regime.deviation_kind() {
        Some(kind) => {
            let flow = FlowTable::for_params(c, &lp)?;
            par_map_paths(p.n_limit, p.master_seed, p.workers, |i, streams| {
                let rec = build_deviation_limit(c, &avg, &flow, kind, &lp, streams, i)?;
                Ok(match comp {
                    Some(cc) => rec.final_zeta()[cc],
                    None => rec.final_x(),
                })
            })
        }
        None => par_map_paths(p.n_limit, p.master_seed, p.workers, |i, streams| {
            let rec = build_longtime_limit(c, &avg, &lp, streams, i)?;
            Ok(match comp {
                Some(cc) => rec.final_zeta()[cc],
                None => rec.final_x(),
            })
        }),
    };
    let limit_vals: Result<Vec<f64>, LimitError> = limit_vals.into_iter().collect();
    let limit_vals = limit_vals?;

    let half = limit_vals.len() / 2;
    let self_ks = ks_distance(&limit_vals[..half], &limit_vals[half..])
        .map_err(|e| LimitError::InvalidParams(format!("self calibration: {e}")))?;

    // Reference flow endpoint for deviation scaling.
    let y_ref_final: Vec<f64> = match regime.deviation_kind() {
        Some(_) => {
            let ys = solve_unperturbed(c, &p.y0, &[0.0, p.t_end])?;
            ys[d..2 * d].to_vec()
        }
        None => Vec::new(),
    };

    let mode = match regime {
        Regime::Longtime => SimMode::Longtime,
        _ => SimMode::Deviation,
    };
    let mut rows = Vec::with_capacity(p.eps_list.len());
    for &eps in &p.eps_list {
        let sp = SimParams {
            epsilon: eps,
            t_end: p.t_end,
            dt_factor: p.dt_factor,
            n_record: 4,
            x0: 0.0,
            y0: p.y0.clone(),
        };
        let ens = simulate_ensemble(c, &sp, mode, p.n_prelimit, p.master_seed, p.workers)?;
        let vals: Vec<f64> = match (regime.deviation_kind(), comp) {
            (Some(kind), Some(cc)) => {
                let scale = match kind {
                    DeviationKind::Diffusive => Exponent::Half.scale(eps),
                    DeviationKind::Drift => Exponent::One.scale(eps),
                };
                ens.final_y_component(cc)
                    .iter()
                    .map(|y| scale * (y - y_ref_final[cc]))
                    .collect()
            }
            (Some(_), None) => ens.final_x(),
            (None, Some(cc)) => ens.final_y_component(cc),
            (None, None) => ens.final_x(),
        };
        let ks = ks_distance(&vals, &limit_vals)
            .map_err(|e| LimitError::InvalidParams(format!("ks at eps {eps}: {e}")))?;
        rows.push(KsRow {
            epsilon: eps,
            d_stat: ks.d,
            p_value: ks.p_value,
            floor: ks_noise_floor(vals.len(), limit_vals.len()),
            n_prelimit: vals.len(),
            n_limit: limit_vals.len(),
        });
    }

    Ok(KsTable {
        regime,
        observable: p.observable,
        rows,
        limit_self_d: self_ks.d,
        limit_self_floor: ks_noise_floor(half, limit_vals.len() - half),
    })
}
