//! Builders for the limiting processes.
//!
//! Deviation regimes (horizon O(1)): the fast coordinate converges to the
//! glued diffusion X0 with quadratic variation a±(X0, y(t)) dt and natural
//! scale (half/half flux weights at the interface). The rescaled deviation
//! of the slow coordinates solves
//!
//! ```text
//! d zeta = Db1(y(t)) zeta dt + sqrt(alpha(y(t))) dV,   V = W0(L(t)),
//! ```
//!
//! when perturbations enter through sigma (scaling eps^-1/2), or the
//! local-time driven ODE
//!
//! ```text
//! d zeta = Db1(y(t)) zeta dt + beta(y(t)) dL
//! ```
//!
//! when they enter through b2 alone (scaling eps^-1). L is the symmetric
//! local time of X0 at the interface and W0 an independent d-dimensional
//! Brownian motion.
//!
//! Longtime regime (horizon eps^-2, b1 = 0): the rescaled pair converges to
//!
//! ```text
//! d Ybar = beta(Ybar) dL + sqrt(alpha(Ybar)) dW0(L),
//! ```
//!
//! with L the local time of the glued fast limit Xbar0. The general
//! construction runs an auxiliary Brownian motion W1 on its own clock s,
//! accumulates the slow clock t(s) = integral of ds / a±(W1, Yhat), evolves
//! Yhat against the local time of W1, and inverts the clock onto a uniform
//! output grid. Only the fast coordinate is interpolated inside an
//! auxiliary step; Yhat, L, V are reported at left nodes, so an output
//! interval with a moving Yhat always carries positive local time.

use crate::coefficients::{CoeffError, Coefficients, InterfaceAverager};
use crate::engine::EngineError;
use crate::rng::{next_gaussian, PathStreams};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LimitError {
    #[error("invalid limit parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Coeff(#[from] CoeffError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("clock inversion stalled before the horizon")]
    ClockStalled,
}

/// Which deviation scaling applies.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DeviationKind {
    /// Perturbation enters through sigma; eps^-1/2 scaling, noise sqrt(alpha) dV.
    Diffusive,
    /// Perturbation enters through b2 alone (sigma = 0); eps^-1 scaling,
    /// drift beta dL.
    Drift,
}

/// The three limit regimes the toolkit identifies and validates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Regime {
    DeviationDiffusive,
    DeviationDrift,
    Longtime,
}

impl Regime {
    pub fn deviation_kind(&self) -> Option<DeviationKind> {
        match self {
            Regime::DeviationDiffusive => Some(DeviationKind::Diffusive),
            Regime::DeviationDrift => Some(DeviationKind::Drift),
            Regime::Longtime => None,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Regime::DeviationDiffusive => "deviation_diffusive",
            Regime::DeviationDrift => "deviation_drift",
            Regime::Longtime => "longtime",
        }
    }
}

/// Parameters of one limit-path construction.
#[derive(Clone, Debug)]
pub struct LimitParams {
    pub t_end: f64,
    /// Fine step of the construction in the limit clock.
    pub dt: f64,
    /// Recorded intervals (records are n_record + 1 points).
    pub n_record: usize,
    /// Local-time band half-width; default 2 sqrt(dt).
    pub band: Option<f64>,
    pub x0: f64,
    /// Deviation: start of the unperturbed flow. Longtime: Ybar(0).
    pub y0: Vec<f64>,
    /// Initial deviation (deviation regimes only; usually zero).
    pub zeta0: Vec<f64>,
}

impl LimitParams {
    pub fn new(t_end: f64, d: usize) -> Self {
        Self {
            t_end,
            dt: 2e-4,
            n_record: 256,
            band: None,
            x0: 0.0,
            y0: vec![0.0; d],
            zeta0: vec![0.0; d],
        }
    }
}

/// One recorded limit path on a uniform grid.
#[derive(Clone, Debug, PartialEq)]
pub struct LimitPathRecord {
    pub d: usize,
    pub times: Vec<f64>,
    /// Fast limit coordinate (X0 or Xbar0).
    pub x: Vec<f64>,
    /// Row-major (n_points x d): zeta for deviation, Ybar for longtime.
    pub zeta: Vec<f64>,
    /// Cumulative interface local time at the recorded nodes.
    pub l: Vec<f64>,
    /// Row-major (n_points x d): the time-changed Brownian motion W0(L).
    pub v: Vec<f64>,
}

impl LimitPathRecord {
    pub fn n_points(&self) -> usize {
        self.times.len()
    }

    pub fn zeta_at(&self, j: usize) -> &[f64] {
        &self.zeta[j * self.d..(j + 1) * self.d]
    }

    pub fn v_at(&self, j: usize) -> &[f64] {
        &self.v[j * self.d..(j + 1) * self.d]
    }

    pub fn final_zeta(&self) -> &[f64] {
        self.zeta_at(self.n_points() - 1)
    }

    pub fn final_x(&self) -> f64 {
        *self.x.last().unwrap()
    }

    pub fn final_l(&self) -> f64 {
        *self.l.last().unwrap()
    }
}

/// The unperturbed flow y(t) and its Jacobian tabulated on the fine grid
/// of a deviation-limit construction. Deterministic, so it is built once
/// per experiment and shared across paths.
#[derive(Clone, Debug)]
pub struct FlowTable {
    pub d: usize,
    pub times: Vec<f64>,
    /// Row-major (n_points x d).
    pub y: Vec<f64>,
    /// Row-major (n_points x d^2).
    pub jac: Vec<f64>,
}

impl FlowTable {
    /// Tabulates the flow on the same fine grid `build_deviation_limit`
    /// will use for these parameters.
    pub fn for_params<C: Coefficients + ?Sized>(
        c: &C,
        p: &LimitParams,
    ) -> Result<Self, LimitError> {
        let (n_fine, _, dt) = fine_layout(p)?;
        let d = c.dims().d;
        let times: Vec<f64> = (0..=n_fine).map(|j| j as f64 * dt).collect();
        let y = crate::engine::solve_unperturbed(c, &p.y0, &times)?;
        let mut jac = vec![0.0; (n_fine + 1) * d * d];
        for j in 0..=n_fine {
            c.b1_jac(&y[j * d..(j + 1) * d], &mut jac[j * d * d..(j + 1) * d * d]);
        }
        Ok(Self { d, times, y, jac })
    }

    pub fn y_at(&self, j: usize) -> &[f64] {
        &self.y[j * self.d..(j + 1) * self.d]
    }

    pub fn jac_at(&self, j: usize) -> &[f64] {
        let dd = self.d * self.d;
        &self.jac[j * dd..(j + 1) * dd]
    }
}

/// Fine-grid layout: returns (n_fine, stride, dt_actual) with
/// n_fine = stride * n_record and dt_actual <= requested dt.
fn fine_layout(p: &LimitParams) -> Result<(usize, usize, f64), LimitError> {
    if !(p.t_end > 0.0 && p.t_end.is_finite()) || !(p.dt > 0.0) || p.n_record == 0 {
        return Err(LimitError::InvalidParams(format!(
            "t_end {}, dt {}, n_record {}",
            p.t_end, p.dt, p.n_record
        )));
    }
    let raw = ((p.t_end / p.dt).ceil() as usize).max(p.n_record);
    let stride = raw.div_ceil(p.n_record);
    let n_fine = stride * p.n_record;
    Ok((n_fine, stride, p.t_end / n_fine as f64))
}

#[inline]
fn mat_vec_add(m: &[f64], v: &[f64], scale: f64, out: &mut [f64]) {
    let d = v.len();
    for i in 0..d {
        let mut acc = 0.0;
        for (j, vj) in v.iter().enumerate() {
            acc += m[i * d + j] * vj;
        }
        out[i] += scale * acc;
    }
}

/// Builds one deviation-limit path (lanes 1 and 2 of the path's streams).
pub fn build_deviation_limit<C: Coefficients + ?Sized>(
    c: &C,
    avg: &InterfaceAverager<'_, C>,
    flow: &FlowTable,
    kind: DeviationKind,
    p: &LimitParams,
    streams: &PathStreams,
    path_index: u64,
) -> Result<LimitPathRecord, LimitError> {
    let d = c.dims().d;
    if p.y0.len() != d || p.zeta0.len() != d {
        return Err(LimitError::InvalidParams(format!(
            "y0/zeta0 must have dimension {d}"
        )));
    }
    if kind == DeviationKind::Drift && !c.is_sigma_zero() {
        return Err(LimitError::InvalidParams(
            "drift-scaled deviations require sigma = 0".into(),
        ));
    }
    let (n_fine, stride, dt) = fine_layout(p)?;
    if flow.times.len() != n_fine + 1 || flow.d != d {
        return Err(LimitError::InvalidParams(
            "flow table grid does not match the limit parameters".into(),
        ));
    }
    let band = p.band.unwrap_or(2.0 * dt.sqrt());
    let sqrt_dt = dt.sqrt();
    let inv_2band = 1.0 / (2.0 * band);

    let mut rng_x = streams.stream(path_index, crate::rng::LANE_AUX);
    let mut rng_v = streams.stream(path_index, crate::rng::LANE_INTERFACE);

    let n_points = p.n_record + 1;
    let mut rec = LimitPathRecord {
        d,
        times: Vec::with_capacity(n_points),
        x: Vec::with_capacity(n_points),
        zeta: Vec::with_capacity(n_points * d),
        l: Vec::with_capacity(n_points),
        v: Vec::with_capacity(n_points * d),
    };
    let mut x = p.x0;
    let mut zeta = p.zeta0.clone();
    let mut l = 0.0f64;
    let mut v = vec![0.0; d];
    let mut xi = vec![0.0; d];
    rec.times.push(0.0);
    rec.x.push(x);
    rec.zeta.extend_from_slice(&zeta);
    rec.l.push(l);
    rec.v.extend_from_slice(&v);

    for n in 0..n_fine {
        let y_n = flow.y_at(n);
        let data = avg.at(y_n)?;
        let a = data.a_at(x);
        let qv = a * dt;
        let dl = if x.abs() < band { qv * inv_2band } else { 0.0 };
        // Deterministic part of the zeta update (left-point values).
        let jac = flow.jac_at(n);
        let zeta_prev = zeta.clone();
        mat_vec_add(jac, &zeta_prev, dt, &mut zeta);
        match kind {
            DeviationKind::Diffusive => {
                if dl > 0.0 {
                    let sq = dl.sqrt();
                    for g in xi.iter_mut() {
                        *g = sq * next_gaussian(&mut rng_v);
                    }
                    mat_vec_add(&data.sqrt_alpha, &xi, 1.0, &mut zeta);
                    for i in 0..d {
                        v[i] += xi[i];
                    }
                }
            }
            DeviationKind::Drift => {
                if dl > 0.0 {
                    for i in 0..d {
                        zeta[i] += data.beta[i] * dl;
                    }
                }
            }
        }
        x += a.sqrt() * sqrt_dt * next_gaussian(&mut rng_x);
        l += dl;
        if (n + 1) % stride == 0 {
            rec.times.push(p.t_end * ((n + 1) / stride) as f64 / p.n_record as f64);
            rec.x.push(x);
            rec.zeta.extend_from_slice(&zeta);
            rec.l.push(l);
            rec.v.extend_from_slice(&v);
        }
    }
    Ok(rec)
}

/// Builds one longtime-limit path. Uses the auxiliary-clock construction
/// in general; when the effective diffusivity is one constant the direct
/// construction (identical law) is used instead.
pub fn build_longtime_limit<C: Coefficients + ?Sized>(
    c: &C,
    avg: &InterfaceAverager<'_, C>,
    p: &LimitParams,
    streams: &PathStreams,
    path_index: u64,
) -> Result<LimitPathRecord, LimitError> {
    let d = c.dims().d;
    if p.y0.len() != d {
        return Err(LimitError::InvalidParams(format!(
            "y0 must have dimension {d}"
        )));
    }
    if !c.is_b1_zero() {
        return Err(LimitError::InvalidParams(
            "longtime limit requires b1 = 0".into(),
        ));
    }
    let data0 = avg.at(&p.y0)?;
    let a_const = if c.averaged_y_independent() {
        data0.a_const()
    } else {
        None
    };
    drop(data0);
    match a_const {
        Some(a) => longtime_direct(c, avg, p, streams, path_index, a),
        None => longtime_aux_clock(c, avg, p, streams, path_index),
    }
}

/// Direct construction for one constant diffusivity: Xbar0 is a scaled
/// Brownian motion stepped on the fine output grid.
fn longtime_direct<C: Coefficients + ?Sized>(
    c: &C,
    avg: &InterfaceAverager<'_, C>,
    p: &LimitParams,
    streams: &PathStreams,
    path_index: u64,
    a: f64,
) -> Result<LimitPathRecord, LimitError> {
    let d = c.dims().d;
    let (n_fine, stride, dt) = fine_layout(p)?;
    let band = p.band.unwrap_or(2.0 * dt.sqrt());
    let inv_2band = 1.0 / (2.0 * band);
    let step_sd = (a * dt).sqrt();

    let mut rng_x = streams.stream(path_index, crate::rng::LANE_AUX);
    let mut rng_v = streams.stream(path_index, crate::rng::LANE_INTERFACE);

    let mut rec = empty_record(d, p.n_record + 1);
    let mut x = p.x0;
    let mut yv = p.y0.clone();
    let mut l = 0.0f64;
    let mut v = vec![0.0; d];
    let mut xi = vec![0.0; d];
    push_state(&mut rec, 0.0, x, &yv, l, &v);

    for n in 0..n_fine {
        let dl = if x.abs() < band { a * dt * inv_2band } else { 0.0 };
        if dl > 0.0 {
            let data = avg.at(&yv)?;
            let sq = dl.sqrt();
            for g in xi.iter_mut() {
                *g = sq * next_gaussian(&mut rng_v);
            }
            let mut dy = vec![0.0; d];
            for i in 0..d {
                dy[i] = data.beta[i] * dl;
            }
            mat_vec_add(&data.sqrt_alpha, &xi, 1.0, &mut dy);
            for i in 0..d {
                yv[i] += dy[i];
                v[i] += xi[i];
            }
        }
        x += step_sd * next_gaussian(&mut rng_x);
        l += dl;
        if (n + 1) % stride == 0 {
            let j = (n + 1) / stride;
            push_state(
                &mut rec,
                p.t_end * j as f64 / p.n_record as f64,
                x,
                &yv,
                l,
                &v,
            );
        }
    }
    Ok(rec)
}

/// General construction on the auxiliary Brownian clock.
fn longtime_aux_clock<C: Coefficients + ?Sized>(
    c: &C,
    avg: &InterfaceAverager<'_, C>,
    p: &LimitParams,
    streams: &PathStreams,
    path_index: u64,
) -> Result<LimitPathRecord, LimitError> {
    let d = c.dims().d;
    let (_, _, dt_out) = fine_layout(p)?;
    let (c1, c2) = c.ellipticity();
    // One auxiliary step advances the slow clock by ds / a <= dt_out, so
    // the output grid is always resolved (a is a mean of values in the
    // ellipticity window, hence a >= c1).
    let ds = dt_out * c1;
    let sqrt_ds = ds.sqrt();
    let band = p.band.unwrap_or(2.0 * ds.sqrt());
    let inv_2band = 1.0 / (2.0 * band);

    let mut rng_w1 = streams.stream(path_index, crate::rng::LANE_AUX);
    let mut rng_v = streams.stream(path_index, crate::rng::LANE_INTERFACE);

    let mut rec = empty_record(d, p.n_record + 1);
    let mut x = p.x0;
    let mut yv = p.y0.clone();
    let mut l = 0.0f64;
    let mut v = vec![0.0; d];
    let mut xi = vec![0.0; d];
    let mut dy = vec![0.0; d];
    let mut t = 0.0f64;
    push_state(&mut rec, 0.0, x, &yv, l, &v);

    let t_grid = |j: usize| p.t_end * j as f64 / p.n_record as f64;
    let mut emitted = 1usize;
    let tol = 1e-9 * p.t_end;
    // Slow clock contracts by at most c2 per unit auxiliary time.
    let cap = ((p.t_end * c2 / ds) * 1.5) as usize + 16 * p.n_record + 64;
    for _ in 0..cap {
        if emitted > p.n_record {
            break;
        }
        let data = avg.at(&yv)?;
        let a = data.a_at(x);
        let dt_clock = ds / a;
        let dw = sqrt_ds * next_gaussian(&mut rng_w1);
        // Realized quadratic variation keeps positive local time tied to
        // actual motion through the band.
        let dl = if x.abs() < band { dw * dw * inv_2band } else { 0.0 };
        // Emit output nodes inside this auxiliary step: the fast
        // coordinate is interpolated, everything else reported at the
        // left node.
        while emitted <= p.n_record && t_grid(emitted) <= t + dt_clock + tol {
            let theta = ((t_grid(emitted) - t) / dt_clock).clamp(0.0, 1.0);
            push_state(&mut rec, t_grid(emitted), x + theta * dw, &yv, l, &v);
            emitted += 1;
        }
        if dl > 0.0 {
            let sq = dl.sqrt();
            for g in xi.iter_mut() {
                *g = sq * next_gaussian(&mut rng_v);
            }
            for i in 0..d {
                dy[i] = data.beta[i] * dl;
            }
            mat_vec_add(&data.sqrt_alpha, &xi, 1.0, &mut dy);
            for i in 0..d {
                yv[i] += dy[i];
                v[i] += xi[i];
            }
        }
        x += dw;
        l += dl;
        t += dt_clock;
    }
    if emitted <= p.n_record {
        return Err(LimitError::ClockStalled);
    }
    Ok(rec)
}

fn empty_record(d: usize, n_points: usize) -> LimitPathRecord {
    LimitPathRecord {
        d,
        times: Vec::with_capacity(n_points),
        x: Vec::with_capacity(n_points),
        zeta: Vec::with_capacity(n_points * d),
        l: Vec::with_capacity(n_points),
        v: Vec::with_capacity(n_points * d),
    }
}

fn push_state(rec: &mut LimitPathRecord, t: f64, x: f64, zeta: &[f64], l: f64, v: &[f64]) {
    rec.times.push(t);
    rec.x.push(x);
    rec.zeta.extend_from_slice(zeta);
    rec.l.push(l);
    rec.v.extend_from_slice(v);
}

/// Marginal law of the glued fast limit at one time, started at the
/// interface: sign probabilities weight the one-sided half-normal scales
/// by the reciprocal square roots of the diffusivities.
pub fn glued_marginal_cdf(a_plus: f64, a_minus: f64, t: f64, x: f64) -> f64 {
    let (sp, sm) = (a_plus.sqrt(), a_minus.sqrt());
    let p_plus = sm / (sp + sm);
    let p_minus = 1.0 - p_plus;
    if x >= 0.0 {
        p_minus + p_plus * (2.0 * crate::stats::normal_cdf(x / (sp * t.sqrt())) - 1.0)
    } else {
        2.0 * p_minus * crate::stats::normal_cdf(x / (sm * t.sqrt()))
    }
}

/// Mean interface local time of the glued fast limit started at the
/// interface: E L(t) = E |X(t)| by the Tanaka identity, evaluated under
/// the glued marginal.
pub fn glued_mean_local_time(a_plus: f64, a_minus: f64, t: f64) -> f64 {
    let (sp, sm) = (a_plus.sqrt(), a_minus.sqrt());
    (2.0 * t / std::f64::consts::PI).sqrt() * 2.0 * (sp * sm) / (sp + sm)
}
