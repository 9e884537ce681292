//! Interface statistics: exit laws, occupation times, and regime-scaled
//! slow increments over interface excursions.
//!
//! The fast coordinate is a continuous martingale (natural scale), so the
//! exit probabilities from a symmetric interval are linear in the start
//! point regardless of the diffusivity profile: P(exit right from x) =
//! (x + delta) / (2 delta). For a standard Brownian start at the center
//! the mean exit time is delta^2. Occupation of a shrinking band around
//! the interface is asymptotically linear in the band width (the local
//! time in disguise), and for a unit Brownian motion has the closed form
//! mean used as an oracle here.
//!
//! Over one excursion from the interface layer |x| <= ell to the exit
//! barrier |x| = delta, the slow increment carries the interface
//! quadratures: with the regime's deviation scaling applied, the mean
//! increment over delta approaches the drift quadrature beta (or zero)
//! and the second moment over delta approaches the covariance quadrature
//! alpha (or zero). [`boundary_increment_limits`] tabulates both along a
//! shrinking schedule with delta / ell increasing. Increments are
//! measured from the start value y0; an excursion lasts O(delta^2), so
//! the unperturbed drift of y contributes only o(delta).
//!
//! Separately, [`drift_concentration_report`] measures how the slow
//! drift of a longtime run concentrates inside the interface layer and
//! compares its total against the local-time prediction beta E L(T).

use crate::coefficients::{AveragingParams, Coefficients, InterfaceAverager};
use crate::engine::{par_map_paths, EngineError, Exponent, SdeStepper};
use crate::limits::{glued_mean_local_time, LimitError, Regime};
use crate::stats::{binomial_stderr, mean_stderr};

/// Parameters of an exit-time measurement on the prelimit fast coordinate.
#[derive(Clone, Debug)]
pub struct ExitParams {
    pub epsilon: f64,
    /// Exit interval is (-delta, delta) in the fast-coordinate scale of X.
    pub delta: f64,
    /// Start point (|x0| < delta).
    pub x0: f64,
    pub y0: Option<Vec<f64>>,
    /// Regime step rule factor; the step is additionally capped so one
    /// step moves at most about 1 percent of delta (keeps the barrier
    /// overshoot bias on the exit time near 1 percent).
    pub dt_factor: f64,
    /// Paths are censored after max_steps_factor * delta^2 / (c1 ds) steps.
    pub max_steps_factor: f64,
    pub n_paths: usize,
    pub master_seed: u64,
    pub workers: usize,
}

impl ExitParams {
    pub fn new(epsilon: f64, delta: f64, x0: f64) -> Self {
        Self {
            epsilon,
            delta,
            x0,
            y0: None,
            dt_factor: 0.1,
            max_steps_factor: 50.0,
            n_paths: 2000,
            master_seed: 0,
            workers: 1,
        }
    }
}

/// Exit statistics over an ensemble: side probabilities, exit-time
/// moments, and raw slow-increment moments. Censored paths are excluded
/// from every estimate; more than 1 percent censoring fails the run.
#[derive(Clone, Debug)]
pub struct ExitStats {
    pub delta: f64,
    pub x0: f64,
    pub ds: f64,
    pub d: usize,
    pub n_paths: usize,
    pub censored: usize,
    pub p_right: f64,
    pub p_left: f64,
    pub p_right_se: f64,
    /// Exit time moments in the original clock.
    pub mean_time: f64,
    pub mean_time_se: f64,
    pub mean_time_sq: f64,
    pub mean_time_sq_se: f64,
    /// Raw slow increment y(exit) - y0, per component.
    pub mean_dy: Vec<f64>,
    pub mean_dy_se: Vec<f64>,
    /// Second-moment matrix E[dy dy^T], row-major d x d.
    pub dydy: Vec<f64>,
    pub dydy_se: Vec<f64>,
    /// E |dy|^3 / delta, the cubic remainder that must vanish with delta.
    pub third_abs_over_delta: f64,
    pub third_abs_over_delta_se: f64,
}

struct ExitOutcome {
    time: f64,
    right: bool,
    censored: bool,
    dy: Vec<f64>,
}

fn censor_check(censored: usize, n: usize) -> Result<(), EngineError> {
    if censored * 100 > n {
        return Err(EngineError::BadParams(format!(
            "{censored} of {n} paths censored; raise max_steps_factor or shrink ds"
        )));
    }
    Ok(())
}

/// Measures exit statistics of X from (-delta, delta).
pub fn excursion_exit_stats<C: Coefficients + Sync + ?Sized>(
    c: &C,
    p: &ExitParams,
) -> Result<ExitStats, EngineError> {
    if !(p.delta > 0.0) || p.x0.abs() >= p.delta {
        return Err(EngineError::BadParams(format!(
            "need |x0| < delta, got x0 {} delta {}",
            p.x0, p.delta
        )));
    }
    let d = c.dims().d;
    let y0 = p.y0.clone().unwrap_or_else(|| vec![0.0; d]);
    if y0.len() != d {
        return Err(EngineError::BadParams("y0 dimension mismatch".into()));
    }
    let (c1, c2) = c.ellipticity();
    // Resolve both the fast oscillation scale and the barrier: one step
    // of x has standard deviation at most sqrt(c2 ds) <= 0.01 delta.
    let ds = (p.dt_factor * p.epsilon * p.epsilon).min((0.01 * p.delta).powi(2) / c2);
    let cap = (p.max_steps_factor * p.delta * p.delta / (c1 * ds)).ceil() as usize;

    let outcomes: Vec<ExitOutcome> = par_map_paths(p.n_paths, p.master_seed, p.workers, |i, s| {
        let mut rng = s.stream(i, crate::rng::LANE_MAIN);
        let mut st = SdeStepper::new(c, p.epsilon, ds, p.x0, &y0);
        let mut censored = true;
        for _ in 0..cap {
            st.step(&mut rng);
            if st.x.abs() >= p.delta {
                censored = false;
                break;
            }
        }
        ExitOutcome {
            time: st.s,
            right: !censored && st.x > 0.0,
            censored,
            dy: st.y.iter().zip(&y0).map(|(a, b)| a - b).collect(),
        }
    });

    let censored = outcomes.iter().filter(|o| o.censored).count();
    censor_check(censored, p.n_paths)?;
    let used: Vec<&ExitOutcome> = outcomes.iter().filter(|o| !o.censored).collect();
    let n_used = used.len();
    let rights = used.iter().filter(|o| o.right).count();
    let p_right = rights as f64 / n_used as f64;

    let series = |f: &dyn Fn(&ExitOutcome) -> f64| -> (f64, f64) {
        let vals: Vec<f64> = used.iter().map(|o| f(o)).collect();
        mean_stderr(&vals).expect("nonempty exits")
    };
    let (mean_time, mean_time_se) = series(&|o| o.time);
    let (mean_time_sq, mean_time_sq_se) = series(&|o| o.time * o.time);
    let mut mean_dy = vec![0.0; d];
    let mut mean_dy_se = vec![0.0; d];
    for i in 0..d {
        let (m, se) = series(&|o| o.dy[i]);
        mean_dy[i] = m;
        mean_dy_se[i] = se;
    }
    let mut dydy = vec![0.0; d * d];
    let mut dydy_se = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            let (m, se) = series(&|o| o.dy[i] * o.dy[j]);
            dydy[i * d + j] = m;
            dydy_se[i * d + j] = se;
        }
    }
    let norm3 = |o: &ExitOutcome| -> f64 {
        let s: f64 = o.dy.iter().map(|v| v * v).sum();
        s * s.sqrt()
    };
    let (third, third_se) = series(&norm3);

    Ok(ExitStats {
        delta: p.delta,
        x0: p.x0,
        ds,
        d,
        n_paths: p.n_paths,
        censored,
        p_right,
        p_left: 1.0 - p_right,
        p_right_se: binomial_stderr(p_right, n_used),
        mean_time,
        mean_time_se,
        mean_time_sq,
        mean_time_sq_se,
        mean_dy,
        mean_dy_se,
        dydy,
        dydy_se,
        third_abs_over_delta: third / p.delta,
        third_abs_over_delta_se: third_se / p.delta,
    })
}

/// Time spent by the recorded path inside |x| < delta for each delta
/// (left-point rule, one pass).
pub fn occupation_times(xs: &[f64], dt: f64, deltas: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; deltas.len()];
    for x in &xs[..xs.len().saturating_sub(1)] {
        for (k, delta) in deltas.iter().enumerate() {
            if x.abs() < *delta {
                out[k] += dt;
            }
        }
    }
    out
}

/// Closed-form mean of the band occupation time of a standard Brownian
/// motion started at 0:
///
/// ```text
/// E nu(delta, t) = t [ erf(a) + (2a/sqrt(pi)) e^(-a^2) - 2a^2 erfc(a) ],
/// a = delta / sqrt(2t).
/// ```
pub fn bm_occupation_mean(delta: f64, t: f64) -> f64 {
    let a = delta / (2.0 * t).sqrt();
    let erfc_a = crate::stats::erfc(a);
    let erf_a = 1.0 - erfc_a;
    t * (erf_a + (2.0 * a / std::f64::consts::PI.sqrt()) * (-a * a).exp()
        - 2.0 * a * a * erfc_a)
}

/// Parameters of an excursion-increment convergence table.
///
/// Schedules are in the regime's fast coordinate: the raw X scale for the
/// deviation regimes, the rescaled eps X scale for the longtime regime.
/// Rows shrink with epsilon while delta / ell grows, the condition under
/// which the scaled increments converge.
#[derive(Clone, Debug)]
pub struct ExcursionScheduleParams {
    pub regime: Regime,
    pub eps_schedule: Vec<f64>,
    pub delta_schedule: Vec<f64>,
    pub ell_schedule: Vec<f64>,
    /// Start point as a fraction of ell, in [-1, 1].
    pub start_frac: f64,
    pub y0: Vec<f64>,
    pub dt_factor: f64,
    pub max_steps_factor: f64,
    pub n_paths: usize,
    pub master_seed: u64,
    pub workers: usize,
}

impl ExcursionScheduleParams {
    /// Standard schedules: the layer is eps^(1-gamma) and the barrier
    /// eps^(1-2 gamma) for deviation regimes, eps^(2-gamma) and
    /// eps^(2-2 gamma) for the longtime regime, gamma in (0, 1/2).
    pub fn from_gamma(regime: Regime, eps_schedule: Vec<f64>, gamma: f64, d: usize) -> Self {
        let base = match regime {
            Regime::Longtime => 2.0,
            _ => 1.0,
        };
        let delta_schedule = eps_schedule
            .iter()
            .map(|e| e.powf(base - 2.0 * gamma))
            .collect();
        let ell_schedule = eps_schedule.iter().map(|e| e.powf(base - gamma)).collect();
        Self {
            regime,
            eps_schedule,
            delta_schedule,
            ell_schedule,
            start_frac: 0.0,
            y0: vec![0.0; d],
            dt_factor: 0.1,
            max_steps_factor: 50.0,
            n_paths: 4000,
            master_seed: 0,
            workers: 1,
        }
    }
}

/// One row of the excursion-increment table. Moments are of the
/// regime-scaled slow increment, divided by delta; the exit time is in
/// the regime's clock.
#[derive(Clone, Debug)]
pub struct ExcursionRow {
    pub epsilon: f64,
    pub delta: f64,
    pub ell: f64,
    pub ds: f64,
    pub n_used: usize,
    pub censored: usize,
    pub p_right: f64,
    pub p_right_se: f64,
    pub mean_dz_over_delta: Vec<f64>,
    pub mean_dz_se: Vec<f64>,
    /// Row-major d x d second-moment matrix over delta.
    pub dzdz_over_delta: Vec<f64>,
    pub dzdz_se: Vec<f64>,
    pub exit_time_mean: f64,
    pub exit_time_mean_se: f64,
    pub exit_time_sq_mean: f64,
    pub third_abs_over_delta: f64,
    pub third_abs_over_delta_se: f64,
}

/// Excursion-increment convergence table with its quadrature targets.
#[derive(Clone, Debug)]
pub struct ExcursionTable {
    pub regime: Regime,
    pub d: usize,
    /// Limit of the scaled mean increment over delta: beta for the drift
    /// and longtime regimes, zero for the diffusive regime.
    pub drift_target: Vec<f64>,
    /// Limit of the scaled second moment over delta: alpha for the
    /// diffusive and longtime regimes, zero for the drift regime.
    pub covariance_target: Vec<f64>,
    pub rows: Vec<ExcursionRow>,
    /// Distance to target non-increasing along the schedule (within two
    /// combined standard errors).
    pub drift_monotone: bool,
    pub covariance_monotone: bool,
}

fn monotone_approach(dists: &[f64], slacks: &[f64]) -> bool {
    dists
        .windows(2)
        .zip(slacks.windows(2))
        .all(|(d, s)| d[1] <= d[0] + 2.0 * (s[0] + s[1]))
}

/// Tabulates regime-scaled slow increments over interface excursions
/// along a shrinking schedule and attaches the quadrature targets.
pub fn boundary_increment_limits<C: Coefficients + Sync + ?Sized>(
    c: &C,
    p: &ExcursionScheduleParams,
) -> Result<ExcursionTable, LimitError> {
    let d = c.dims().d;
    if p.y0.len() != d {
        return Err(LimitError::InvalidParams(format!(
            "y0 must have dimension {d}"
        )));
    }
    if p.start_frac.abs() > 1.0 {
        return Err(LimitError::InvalidParams(
            "start_frac must lie in [-1, 1]".into(),
        ));
    }
    match p.regime {
        Regime::DeviationDrift if !c.is_sigma_zero() => {
            return Err(LimitError::InvalidParams(
                "drift regime requires sigma = 0".into(),
            ));
        }
        Regime::Longtime if !c.is_b1_zero() => {
            return Err(LimitError::InvalidParams(
                "longtime regime requires b1 = 0".into(),
            ));
        }
        _ => {}
    }
    let n_rows = p.eps_schedule.len();
    if n_rows == 0
        || p.delta_schedule.len() != n_rows
        || p.ell_schedule.len() != n_rows
    {
        return Err(LimitError::InvalidParams(
            "eps, delta, and ell schedules must have equal nonzero length".into(),
        ));
    }
    for i in 0..n_rows {
        let (e, dl, el) = (p.eps_schedule[i], p.delta_schedule[i], p.ell_schedule[i]);
        if !(e > 0.0 && dl > 0.0 && el > 0.0 && el < dl) {
            return Err(LimitError::InvalidParams(format!(
                "row {i}: need eps, ell, delta positive with ell < delta"
            )));
        }
        if i > 0 {
            let prev = p.delta_schedule[i - 1] / p.ell_schedule[i - 1];
            if p.eps_schedule[i] >= p.eps_schedule[i - 1] || dl / el <= prev {
                return Err(LimitError::InvalidParams(format!(
                    "row {i}: schedule must shrink eps and grow delta / ell"
                )));
            }
        }
    }

    let avg = InterfaceAverager::new(c, AveragingParams::default())?;
    let data = avg.at(&p.y0)?;
    let zeros_d = vec![0.0; d];
    let zeros_dd = vec![0.0; d * d];
    let (drift_target, covariance_target) = match p.regime {
        Regime::DeviationDiffusive => (zeros_d.clone(), data.alpha.clone()),
        Regime::DeviationDrift => (data.beta.clone(), zeros_dd.clone()),
        Regime::Longtime => (data.beta.clone(), data.alpha.clone()),
    };

    let (c1, c2) = c.ellipticity();
    let mut rows = Vec::with_capacity(n_rows);
    for i in 0..n_rows {
        let eps = p.eps_schedule[i];
        let delta = p.delta_schedule[i];
        let ell = p.ell_schedule[i];
        // Barrier and start in the raw X coordinate; the longtime
        // schedule is stated in the eps X scale.
        let (delta_x, ell_x) = match p.regime {
            Regime::Longtime => (delta / eps, ell / eps),
            _ => (delta, ell),
        };
        let x0 = p.start_frac * ell_x;
        // Resolve the fast scale, and keep the one-step barrier
        // overshoot near 1 percent of the mean increment.
        let ds = (p.dt_factor * eps * eps).min((0.02 * delta_x).powi(2) / c2);
        let cap = (p.max_steps_factor * delta_x * delta_x / (c1 * ds)).ceil() as usize;
        let scale = match p.regime {
            Regime::DeviationDiffusive => Exponent::Half.scale(eps),
            Regime::DeviationDrift => Exponent::One.scale(eps),
            Regime::Longtime => 1.0,
        };
        let clock = match p.regime {
            Regime::Longtime => eps * eps,
            _ => 1.0,
        };

        let outcomes: Vec<ExitOutcome> =
            par_map_paths(p.n_paths, p.master_seed, p.workers, |ip, s| {
                let mut rng = s.stream(ip, crate::rng::LANE_MAIN);
                let mut st = SdeStepper::new(c, eps, ds, x0, &p.y0);
                let mut censored = true;
                for _ in 0..cap {
                    st.step(&mut rng);
                    if st.x.abs() >= delta_x {
                        censored = false;
                        break;
                    }
                }
                ExitOutcome {
                    time: clock * st.s,
                    right: !censored && st.x > 0.0,
                    censored,
                    dy: st.y.iter().zip(&p.y0).map(|(a, b)| scale * (a - b)).collect(),
                }
            });
        let censored = outcomes.iter().filter(|o| o.censored).count();
        censor_check(censored, p.n_paths)
            .map_err(|e| LimitError::InvalidParams(format!("row {i}: {e}")))?;
        let used: Vec<&ExitOutcome> = outcomes.iter().filter(|o| !o.censored).collect();
        let n_used = used.len();
        let rights = used.iter().filter(|o| o.right).count();
        let p_right = rights as f64 / n_used as f64;

        let series = |f: &dyn Fn(&ExitOutcome) -> f64| -> (f64, f64) {
            let vals: Vec<f64> = used.iter().map(|o| f(o)).collect();
            mean_stderr(&vals).expect("nonempty exits")
        };
        let (time_mean, time_mean_se) = series(&|o| o.time);
        let (time_sq, _) = series(&|o| o.time * o.time);
        let mut mean_dz = vec![0.0; d];
        let mut mean_dz_se = vec![0.0; d];
        for ic in 0..d {
            let (m, se) = series(&|o| o.dy[ic]);
            mean_dz[ic] = m / delta;
            mean_dz_se[ic] = se / delta;
        }
        let mut dzdz = vec![0.0; d * d];
        let mut dzdz_se = vec![0.0; d * d];
        for ic in 0..d {
            for jc in 0..d {
                let (m, se) = series(&|o| o.dy[ic] * o.dy[jc]);
                dzdz[ic * d + jc] = m / delta;
                dzdz_se[ic * d + jc] = se / delta;
            }
        }
        let norm3 = |o: &ExitOutcome| -> f64 {
            let s: f64 = o.dy.iter().map(|v| v * v).sum();
            s * s.sqrt()
        };
        let (third, third_se) = series(&norm3);

        rows.push(ExcursionRow {
            epsilon: eps,
            delta,
            ell,
            ds,
            n_used,
            censored,
            p_right,
            p_right_se: binomial_stderr(p_right, n_used),
            mean_dz_over_delta: mean_dz,
            mean_dz_se,
            dzdz_over_delta: dzdz,
            dzdz_se,
            exit_time_mean: time_mean,
            exit_time_mean_se: time_mean_se,
            exit_time_sq_mean: time_sq,
            third_abs_over_delta: third / delta,
            third_abs_over_delta_se: third_se / delta,
        });
    }

    let linf = |vals: &[f64], target: &[f64]| -> f64 {
        vals.iter()
            .zip(target)
            .map(|(v, t)| (v - t).abs())
            .fold(0.0, f64::max)
    };
    let max_se = |ses: &[f64]| ses.iter().fold(0.0f64, |a, &b| a.max(b));
    let drift_dists: Vec<f64> = rows
        .iter()
        .map(|r| linf(&r.mean_dz_over_delta, &drift_target))
        .collect();
    let drift_slacks: Vec<f64> = rows.iter().map(|r| max_se(&r.mean_dz_se)).collect();
    let cov_dists: Vec<f64> = rows
        .iter()
        .map(|r| linf(&r.dzdz_over_delta, &covariance_target))
        .collect();
    let cov_slacks: Vec<f64> = rows.iter().map(|r| max_se(&r.dzdz_se)).collect();

    Ok(ExcursionTable {
        regime: p.regime,
        d,
        drift_target,
        covariance_target,
        rows,
        drift_monotone: monotone_approach(&drift_dists, &drift_slacks),
        covariance_monotone: monotone_approach(&cov_dists, &cov_slacks),
    })
}

/// Parameters of the longtime drift-concentration measurement.
#[derive(Clone, Debug)]
pub struct DriftConcentrationParams {
    pub epsilon: f64,
    pub t_end: f64,
    /// Layer exponent: the layer is eps^(2 - gamma) wide in the rescaled
    /// fast coordinate.
    pub gamma: f64,
    pub dt_factor: f64,
    pub n_paths: usize,
    pub master_seed: u64,
    pub workers: usize,
}

impl DriftConcentrationParams {
    pub fn new(epsilon: f64, t_end: f64) -> Self {
        Self {
            epsilon,
            t_end,
            gamma: 0.2,
            dt_factor: 0.1,
            n_paths: 1000,
            master_seed: 0,
            workers: 1,
        }
    }
}

/// Decomposition of the slow increment over a longtime run.
#[derive(Clone, Debug)]
pub struct DriftConcentrationReport {
    pub epsilon: f64,
    pub t_end: f64,
    /// Layer half-width eps^(2 - gamma) in the rescaled coordinate.
    pub layer: f64,
    pub d: usize,
    /// E[Ybar(T) - y0] per component, with standard errors.
    pub mean_total: Vec<f64>,
    pub se_total: Vec<f64>,
    /// Mean drift accumulated while |xbar| < layer, resp. outside.
    pub mean_drift_inside: Vec<f64>,
    pub mean_drift_outside: Vec<f64>,
    /// l1 share of the drift captured by the layer.
    pub inside_fraction: f64,
    /// beta(y0) E L(T) from the glued limit, per component.
    pub predicted: Vec<f64>,
    pub mean_l_predicted: f64,
}

/// Measures how the slow drift concentrates in the interface layer during
/// a longtime run and compares the total against the limit prediction.
///
/// Requires b1 = 0 (longtime regime), a nonzero b2, and y-independent
/// averages (for the closed-form prediction).
pub fn drift_concentration_report<C: Coefficients + Sync + ?Sized>(
    c: &C,
    p: &DriftConcentrationParams,
) -> Result<DriftConcentrationReport, LimitError> {
    if !c.is_b1_zero() {
        return Err(LimitError::InvalidParams(
            "drift concentration is a longtime measurement; b1 must be 0".into(),
        ));
    }
    if c.is_b2_zero() {
        return Err(LimitError::InvalidParams(
            "drift concentration needs a nonzero b2".into(),
        ));
    }
    if !c.averaged_y_independent() {
        return Err(LimitError::InvalidParams(
            "closed-form prediction needs y-independent averages".into(),
        ));
    }
    if !(p.gamma > 0.0 && p.gamma < 1.0) {
        return Err(LimitError::InvalidParams(format!(
            "gamma must be in (0, 1), got {}",
            p.gamma
        )));
    }
    let d = c.dims().d;
    let y0 = vec![0.0; d];
    let avg = InterfaceAverager::new(c, AveragingParams::default())?;
    let data = avg.at(&y0)?;
    let el = glued_mean_local_time(data.a_plus, data.a_minus, p.t_end);
    let predicted: Vec<f64> = data.beta.iter().map(|b| b * el).collect();

    let eps = p.epsilon;
    let layer = eps.powf(2.0 - p.gamma);
    let s_end = p.t_end / (eps * eps);
    let ds_target = p.dt_factor * eps * eps;
    let n_steps = (s_end / ds_target).ceil() as usize;
    let ds = s_end / n_steps as f64;

    struct PathOut {
        total: Vec<f64>,
        inside: Vec<f64>,
        outside: Vec<f64>,
    }
    let outs: Vec<PathOut> = par_map_paths(p.n_paths, p.master_seed, p.workers, |i, s| {
        let mut rng = s.stream(i, crate::rng::LANE_MAIN);
        let mut st = SdeStepper::new(c, eps, ds, 0.0, &y0);
        let mut inside = vec![0.0; d];
        let mut outside = vec![0.0; d];
        for _ in 0..n_steps {
            let in_layer = (eps * st.x).abs() < layer;
            st.step(&mut rng);
            let b2 = st.last_b2();
            let bucket = if in_layer { &mut inside } else { &mut outside };
            for i in 0..d {
                bucket[i] += b2[i] * ds;
            }
        }
        let total = st.y.iter().zip(&y0).map(|(a, b)| a - b).collect();
        PathOut {
            total,
            inside,
            outside,
        }
    });

    let mut mean_total = vec![0.0; d];
    let mut se_total = vec![0.0; d];
    for i in 0..d {
        let comp: Vec<f64> = outs.iter().map(|o| o.total[i]).collect();
        let (m, se) = mean_stderr(&comp).expect("nonempty");
        mean_total[i] = m;
        se_total[i] = se;
    }
    let n = p.n_paths as f64;
    let mut mean_in = vec![0.0; d];
    let mut mean_out = vec![0.0; d];
    for o in &outs {
        for i in 0..d {
            mean_in[i] += o.inside[i] / n;
            mean_out[i] += o.outside[i] / n;
        }
    }
    let l1_in: f64 = mean_in.iter().map(|v| v.abs()).sum();
    let l1_out: f64 = mean_out.iter().map(|v| v.abs()).sum();
    Ok(DriftConcentrationReport {
        epsilon: eps,
        t_end: p.t_end,
        layer,
        d,
        mean_total,
        se_total,
        mean_drift_inside: mean_in,
        mean_drift_outside: mean_out,
        inside_fraction: l1_in / (l1_in + l1_out),
        predicted,
        mean_l_predicted: el,
    })
}
