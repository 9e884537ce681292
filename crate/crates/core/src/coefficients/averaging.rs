//! Averaged interface quantities of a coefficient set.
//!
//! The fast motion spends vanishing time at any fixed x != 0, so the
//! limiting dynamics only see three averages: the one-sided effective
//! diffusivities
//!
//! ```text
//! a±(y) = 1 / lim_{u -> ±inf} (1/u) ∫_0^u dv / |phi(±v, y)|^2
//! ```
//!
//! (reciprocals of one-sided Cesaro means), the interface drift
//!
//! ```text
//! beta(y) = ∫_R b2(x, y) / |phi(x, y)|^2 dx,
//! ```
//!
//! and the interface covariance
//!
//! ```text
//! alpha(y) = ∫_R (sigma sigma^T)(x, y) / |phi(x, y)|^2 dx,
//! ```
//!
//! which is symmetric positive semidefinite; its PSD square root drives
//! the local-time noise of the limit.

use super::{CoeffError, Coefficients};
use std::borrow::Cow;
use std::f64::consts::FRAC_PI_4;

/// One-sided Cesaro estimates with a stabilization diagnostic.
#[derive(Clone, Copy, Debug)]
pub struct ApmEstimate {
    pub a_plus: f64,
    pub a_minus: f64,
    /// Spread between the last two refinement levels (worst branch).
    pub error_est: f64,
    pub converged: bool,
    pub u_max: f64,
}

/// Estimates a±(y) by evaluating the Cesaro mean of 1/|phi|^2 at
/// u_max/4, u_max/2, u_max on each branch.
///
/// The returned error is the spread between the last two levels; the
/// estimate is flagged non-converged when that spread exceeds `tol`.
pub fn estimate_a_pm<C: Coefficients + ?Sized>(
    c: &C,
    y: &[f64],
    u_max: f64,
    tol: f64,
) -> ApmEstimate {
    assert!(u_max > 0.0 && tol > 0.0);
    // Panel width near pi/4 resolves unit-scale oscillations of the
    // profile; the checkpoint panel counts stay multiples of 4.
    let n = (((u_max / FRAC_PI_4).ceil() as usize).max(4) + 3) / 4 * 4;
    let branch = |sign: f64| -> (f64, f64) {
        let mut f = |v: f64| 1.0 / c.phi_norm_sq(sign * v, y);
        let cums =
            crate::quad::cumulative_checkpoints(&mut f, u_max, n, &[n / 4, n / 2, n]);
        let us = [u_max / 4.0, u_max / 2.0, u_max];
        let recips: Vec<f64> = cums
            .iter()
            .zip(us)
            .map(|(cum, u)| u / cum)
            .collect();
        ((recips[2] - recips[1]).abs(), recips[2])
    };
    let (err_p, a_plus) = branch(1.0);
    let (err_m, a_minus) = branch(-1.0);
    let error_est = err_p.max(err_m);
    ApmEstimate {
        a_plus,
        a_minus,
        error_est,
        converged: error_est.is_finite() && error_est <= tol && a_plus > 0.0 && a_minus > 0.0,
        u_max,
    }
}

/// Interface drift beta(y); returns the vector and the worst-component
/// quadrature error bound (tail included).
pub fn interface_drift_beta<C: Coefficients + ?Sized>(
    c: &C,
    y: &[f64],
    abs_tol: f64,
) -> Result<(Vec<f64>, f64), CoeffError> {
    let d = c.dims().d;
    let (c1, _) = c.ellipticity();
    let tail = |r: f64| c.b_hat_tail(r) / c1;
    let mut beta = vec![0.0; d];
    let mut err = 0.0f64;
    let mut buf = vec![0.0; d];
    for i in 0..d {
        let mut f = |x: f64| {
            c.b2(x, y, &mut buf);
            buf[i] / c.phi_norm_sq(x, y)
        };
        let (v, e) = crate::quad::integrate_line(&mut f, &tail, abs_tol)?;
        beta[i] = v;
        err = err.max(e);
    }
    Ok((beta, err))
}

/// Averaged interface covariance alpha(y) with its PSD square root.
#[derive(Clone, Debug)]
pub struct AlphaData {
    /// Row-major d x d, symmetric.
    pub alpha: Vec<f64>,
    /// Row-major d x d with sqrt_alpha * sqrt_alpha = alpha.
    pub sqrt_alpha: Vec<f64>,
    pub quad_err: f64,
}

/// Interface covariance alpha(y) = ∫ sigma sigma^T / |phi|^2 dx.
pub fn interface_diffusion_alpha<C: Coefficients + ?Sized>(
    c: &C,
    y: &[f64],
    abs_tol: f64,
    psd_jitter: f64,
) -> Result<AlphaData, CoeffError> {
    let super::Dims { d, k } = c.dims();
    let (c1, _) = c.ellipticity();
    let tail = |r: f64| c.sigma_hat_sq_tail(r) / c1;
    let mut alpha = vec![0.0; d * d];
    let mut err = 0.0f64;
    let mut sig = vec![0.0; d * k];
    for i in 0..d {
        for j in i..d {
            let mut f = |x: f64| {
                c.sigma(x, y, &mut sig);
                let mut dot = 0.0;
                for l in 0..k {
                    dot += sig[i * k + l] * sig[j * k + l];
                }
                dot / c.phi_norm_sq(x, y)
            };
            let (v, e) = crate::quad::integrate_line(&mut f, &tail, abs_tol)?;
            alpha[i * d + j] = v;
            alpha[j * d + i] = v;
            err = err.max(e);
        }
    }
    let sqrt_alpha = matrix_sqrt_psd(&alpha, d, psd_jitter)?;
    Ok(AlphaData {
        alpha,
        sqrt_alpha,
        quad_err: err,
    })
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// Returns (eigenvalues, V) with A = V diag(vals) V^T; V is row-major and
/// its columns are the eigenvectors. Intended for the small d of slow
/// components, not for large matrices.
pub fn jacobi_eigen_sym(a: &[f64], d: usize) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(a.len(), d * d);
    let mut a = a.to_vec();
    let mut v = vec![0.0; d * d];
    for i in 0..d {
        v[i * d + i] = 1.0;
    }
    let fro: f64 = a.iter().map(|x| x * x).sum();
    for _sweep in 0..100 {
        let off: f64 = (0..d)
            .flat_map(|p| ((p + 1)..d).map(move |q| (p, q)))
            .map(|(p, q)| a[p * d + q] * a[p * d + q])
            .sum();
        if off <= 1e-30 * fro.max(1e-300) {
            break;
        }
        for p in 0..d {
            for q in (p + 1)..d {
                let apq = a[p * d + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * d + p];
                let aqq = a[q * d + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let cos = 1.0 / (t * t + 1.0).sqrt();
                let sin = t * cos;
                let tau = sin / (1.0 + cos);
                a[p * d + p] = app - t * apq;
                a[q * d + q] = aqq + t * apq;
                a[p * d + q] = 0.0;
                a[q * d + p] = 0.0;
                for r in 0..d {
                    if r != p && r != q {
                        let arp = a[r * d + p];
                        let arq = a[r * d + q];
                        a[r * d + p] = arp - sin * (arq + tau * arp);
                        a[p * d + r] = a[r * d + p];
                        a[r * d + q] = arq + sin * (arp - tau * arq);
                        a[q * d + r] = a[r * d + q];
                    }
                }
                for r in 0..d {
                    let vrp = v[r * d + p];
                    let vrq = v[r * d + q];
                    v[r * d + p] = vrp - sin * (vrq + tau * vrp);
                    v[r * d + q] = vrq + sin * (vrp - tau * vrq);
                }
            }
        }
    }
    let vals = (0..d).map(|i| a[i * d + i]).collect();
    (vals, v)
}

/// PSD square root via eigendecomposition.
///
/// Eigenvalues in [-jitter, 0) are clamped to zero; anything below
/// -jitter reports the matrix as not PSD.
pub fn matrix_sqrt_psd(m: &[f64], d: usize, jitter: f64) -> Result<Vec<f64>, CoeffError> {
    let (vals, v) = jacobi_eigen_sym(m, d);
    let scale = vals.iter().fold(1.0f64, |acc, x| acc.max(x.abs()));
    let mut roots = Vec::with_capacity(d);
    for &lam in &vals {
        if lam < -jitter * scale {
            return Err(CoeffError::NotPsd { min_eig: lam });
        }
        roots.push(lam.max(0.0).sqrt());
    }
    let mut s = vec![0.0; d * d];
    for i in 0..d {
        for j in i..d {
            let mut acc = 0.0;
            for (l, &r) in roots.iter().enumerate() {
                acc += v[i * d + l] * r * v[j * d + l];
            }
            s[i * d + j] = acc;
            s[j * d + i] = acc;
        }
    }
    Ok(s)
}

/// All averaged interface quantities at one y.
#[derive(Clone, Debug)]
pub struct InterfaceData {
    pub d: usize,
    pub a_plus: f64,
    pub a_minus: f64,
    pub a_err: f64,
    pub beta: Vec<f64>,
    /// Row-major d x d.
    pub alpha: Vec<f64>,
    pub sqrt_alpha: Vec<f64>,
    pub quad_err: f64,
}

impl InterfaceData {
    /// Branch select with the x = 0 convention mapping to the + side.
    #[inline]
    pub fn a_at(&self, x: f64) -> f64 {
        if x >= 0.0 {
            self.a_plus
        } else {
            self.a_minus
        }
    }

    pub fn a_const(&self) -> Option<f64> {
        if (self.a_plus - self.a_minus).abs() <= 1e-12 * self.a_plus.abs().max(1.0) {
            Some(self.a_plus)
        } else {
            None
        }
    }
}

/// Tolerances for averaged-quantity evaluation.
#[derive(Clone, Copy, Debug)]
pub struct AveragingParams {
    pub u_max: f64,
    pub cesaro_tol: f64,
    pub quad_tol: f64,
    pub psd_jitter: f64,
}

impl Default for AveragingParams {
    fn default() -> Self {
        Self {
            u_max: 65536.0,
            cesaro_tol: 1e-4,
            quad_tol: 1e-7,
            psd_jitter: 1e-10,
        }
    }
}

/// Computes all averaged quantities at one y.
pub fn interface_data<C: Coefficients + ?Sized>(
    c: &C,
    y: &[f64],
    p: &AveragingParams,
) -> Result<InterfaceData, CoeffError> {
    let d = c.dims().d;
    let est = estimate_a_pm(c, y, p.u_max, p.cesaro_tol);
    if !est.converged {
        return Err(CoeffError::CesaroNotConverged {
            err: est.error_est,
            u_max: est.u_max,
        });
    }
    let (beta, beta_err) = interface_drift_beta(c, y, p.quad_tol)?;
    let alpha = interface_diffusion_alpha(c, y, p.quad_tol, p.psd_jitter)?;
    Ok(InterfaceData {
        d,
        a_plus: est.a_plus,
        a_minus: est.a_minus,
        a_err: est.error_est,
        beta,
        alpha: alpha.alpha,
        sqrt_alpha: alpha.sqrt_alpha,
        quad_err: beta_err.max(alpha.quad_err),
    })
}

/// Evaluator of averaged quantities with a cache for sets whose averages
/// do not depend on y (all bundled defaults).
pub struct InterfaceAverager<'c, C: Coefficients + ?Sized> {
    c: &'c C,
    params: AveragingParams,
    cache: Option<InterfaceData>,
}

impl<'c, C: Coefficients + ?Sized> InterfaceAverager<'c, C> {
    pub fn new(c: &'c C, params: AveragingParams) -> Result<Self, CoeffError> {
        let cache = if c.averaged_y_independent() {
            let y0 = vec![0.0; c.dims().d];
            Some(interface_data(c, &y0, &params)?)
        } else {
            None
        };
        Ok(Self { c, params, cache })
    }

    pub fn at(&self, y: &[f64]) -> Result<Cow<'_, InterfaceData>, CoeffError> {
        match &self.cache {
            Some(data) => Ok(Cow::Borrowed(data)),
            None => Ok(Cow::Owned(interface_data(self.c, y, &self.params)?)),
        }
    }

    pub fn coefficients(&self) -> &'c C {
        self.c
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{build_model, ModelOverrides};

    const SQRT_3: f64 = 1.732_050_807_568_877_2;
    const SQRT_PI: f64 = 1.772_453_850_905_516;

    #[test]
    fn cesaro_mean_of_two_plus_sin_hits_sqrt3() {
        // Frozen oracle: mean of 1/(2 + sin x) over a period is 1/sqrt(3),
        // so both one-sided effective diffusivities equal sqrt(3).
        let m = build_model(&ModelOverrides::by_name("two_plus_sin")).unwrap();
        let est = estimate_a_pm(&m, &[0.0], 65536.0, 1e-4);
        assert!(est.converged, "error_est {}", est.error_est);
        assert!((est.a_plus - SQRT_3).abs() < 1e-4, "a+ {}", est.a_plus);
        assert!((est.a_minus - SQRT_3).abs() < 1e-4, "a- {}", est.a_minus);
    }

    #[test]
    fn flat_profile_is_recovered_exactly() {
        let mut ov = ModelOverrides::by_name("trivial");
        ov.phi_sq = Some(2.5);
        let m = build_model(&ov).unwrap();
        let est = estimate_a_pm(&m, &[0.0], 1024.0, 1e-10);
        assert!(est.converged);
        assert!((est.a_plus - 2.5).abs() < 1e-12);
        assert!((est.a_minus - 2.5).abs() < 1e-12);
    }

    #[test]
    fn smooth_step_yields_asymmetric_branches() {
        let m = build_model(&ModelOverrides::by_name("smooth_step")).unwrap();
        let est = estimate_a_pm(&m, &[0.0], 65536.0, 1e-3);
        assert!(est.converged);
        assert!((est.a_plus - 4.0).abs() < 1e-3, "a+ {}", est.a_plus);
        assert!((est.a_minus - 1.0).abs() < 1e-3, "a- {}", est.a_minus);
    }

    #[test]
    fn gaussian_drift_beta_hits_sqrt_pi() {
        // Frozen oracle: integral of exp(-x^2) dx = sqrt(pi) over |phi|^2 = 1.
        let m = build_model(&ModelOverrides::by_name("gaussian_drift")).unwrap();
        let (beta, err) = interface_drift_beta(&m, &[0.0], 1e-7).unwrap();
        assert!((beta[0] - SQRT_PI).abs() < 1e-6, "beta {}", beta[0]);
        assert!(err < 1e-6);
    }

    #[test]
    fn gaussian_diffusion_alpha_hits_sqrt_pi_for_any_rho() {
        for rho in [0.0, 0.6, -0.9] {
            let mut ov = ModelOverrides::by_name("gaussian_diffusion");
            ov.rho = Some(rho);
            let m = build_model(&ov).unwrap();
            let a = interface_diffusion_alpha(&m, &[0.0], 1e-7, 1e-10).unwrap();
            assert!(
                (a.alpha[0] - SQRT_PI).abs() < 1e-6,
                "rho {rho}: alpha {}",
                a.alpha[0]
            );
            assert!((a.sqrt_alpha[0] - SQRT_PI.sqrt()).abs() < 1e-6);
        }
    }

    #[test]
    fn multidimensional_alpha_matches_closed_form() {
        let mut ov = ModelOverrides::by_name("gaussian_diffusion");
        ov.d = Some(2);
        ov.rho = Some(0.6);
        let m = build_model(&ov).unwrap();
        let a = interface_diffusion_alpha(&m, &[0.0, 0.0], 1e-7, 1e-10).unwrap();
        let refs = crate::coefficients::Coefficients::analytic_refs(&m, &[0.0, 0.0]);
        let want = refs.alpha.unwrap();
        for (got, want) in a.alpha.iter().zip(&want) {
            assert!((got - want).abs() < 1e-6, "{:?} vs {:?}", a.alpha, want);
        }
        // sqrt check: S S = alpha.
        let d = 2;
        for i in 0..d {
            for j in 0..d {
                let mut acc = 0.0;
                for l in 0..d {
                    acc += a.sqrt_alpha[i * d + l] * a.sqrt_alpha[l * d + j];
                }
                assert!((acc - a.alpha[i * d + j]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn matrix_sqrt_recovers_known_eigenstructure() {
        // [[2,1],[1,2]] has eigenvalues 1 and 3.
        let m = [2.0, 1.0, 1.0, 2.0];
        let (mut vals, _) = jacobi_eigen_sym(&m, 2);
        vals.sort_by(|a, b| a.total_cmp(b));
        assert!((vals[0] - 1.0).abs() < 1e-12 && (vals[1] - 3.0).abs() < 1e-12);
        let s = matrix_sqrt_psd(&m, 2, 1e-10).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let acc: f64 = (0..2).map(|l| s[i * 2 + l] * s[l * 2 + j]).sum();
                assert!((acc - m[i * 2 + j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let m = [1.0, 0.0, 0.0, -1.0];
        assert!(matches!(
            matrix_sqrt_psd(&m, 2, 1e-10),
            Err(CoeffError::NotPsd { .. })
        ));
    }

    #[test]
    fn averager_caches_y_independent_sets() {
        let m = build_model(&ModelOverrides::by_name("gaussian_full")).unwrap();
        let avg = InterfaceAverager::new(&m, AveragingParams::default()).unwrap();
        let d1 = avg.at(&[0.0]).unwrap();
        assert!(matches!(d1, Cow::Borrowed(_)));
        assert!((d1.beta[0] - SQRT_PI).abs() < 1e-6);
        assert!((d1.alpha[0] - SQRT_PI).abs() < 1e-6);
    }

    #[test]
    fn y_modulated_drift_is_evaluated_pointwise() {
        let mut ov = ModelOverrides::by_name("gaussian_drift");
        ov.b2_y_mod = Some(0.5);
        let m = build_model(&ov).unwrap();
        let avg = InterfaceAverager::new(&m, AveragingParams::default()).unwrap();
        let at1 = avg.at(&[1.0]).unwrap().beta[0];
        let at0 = avg.at(&[0.0]).unwrap().beta[0];
        let want1 = SQRT_PI * (1.0 + 0.5 * 1.0f64.tanh());
        assert!((at0 - SQRT_PI).abs() < 1e-6);
        assert!((at1 - want1).abs() < 1e-6, "{at1} vs {want1}");
    }
}
