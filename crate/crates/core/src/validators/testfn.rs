//! Test functions for the interface martingale problem.
//!
//! A test function f(x, w) enters the residual
//!
//! ```text
//! M = f(X_T, W_T) - f(X_0, W_0)
//!     - int [ a(x)/2 f_xx + drift . grad_w f ] dt
//!     - int [ kink + beta . grad_w f(0,.) + alpha : hess_w f(0,.) / 2 ] dL
//! ```
//!
//! where `kink` is half the jump of f_x across x = 0. Functions report
//! their own derivatives; a function whose reported interface part
//! vanishes identically (a glued function) exercises the interface
//! condition, and the negative control misreports its kink so the
//! validator must flag it.
//!
//! Glued functions are built as f = u - q(x) corr(w) where u is smooth,
//! q(x) = |x| chi(x) with chi a C^3 plateau cutoff (1 on |x| <= 3, 0 on
//! |x| >= 5), and corr = beta . grad_w u(0,.) + alpha : hess_w u(0,.) / 2.
//! Near the interface q is exactly |x|, so the kink of f is -corr and the
//! interface part cancels identically.

/// Order-7 smoothstep on [0, 1]: C^3 at both ends.
#[inline]
fn smoothstep7(t: f64) -> f64 {
    let t2 = t * t;
    t2 * t2 * (35.0 + t * (-84.0 + t * (70.0 - 20.0 * t)))
}

#[inline]
fn smoothstep7_d1(t: f64) -> f64 {
    let u = t * (1.0 - t);
    140.0 * u * u * u
}

#[inline]
fn smoothstep7_d2(t: f64) -> f64 {
    let u = 1.0 - t;
    420.0 * t * t * u * u * (1.0 - 2.0 * t)
}

/// Plateau cutoff: 1 on |x| <= 3, 0 on |x| >= 5, C^3 in between.
#[inline]
fn chi(r: f64) -> f64 {
    if r <= 3.0 {
        1.0
    } else if r >= 5.0 {
        0.0
    } else {
        smoothstep7((5.0 - r) / 2.0)
    }
}

#[inline]
fn chi_d1(r: f64) -> f64 {
    if r <= 3.0 || r >= 5.0 {
        0.0
    } else {
        -0.5 * smoothstep7_d1((5.0 - r) / 2.0)
    }
}

#[inline]
fn chi_d2(r: f64) -> f64 {
    if r <= 3.0 || r >= 5.0 {
        0.0
    } else {
        0.25 * smoothstep7_d2((5.0 - r) / 2.0)
    }
}

/// Kinked carrier q(x) = |x| chi(|x|): equals |x| near the interface,
/// compactly supported.
#[inline]
pub fn carrier(x: f64) -> f64 {
    let r = x.abs();
    r * chi(r)
}

/// Second derivative of the carrier away from x = 0 (zero on the plateau
/// and outside the support).
#[inline]
pub fn carrier_xx(x: f64) -> f64 {
    let r = x.abs();
    2.0 * chi_d1(r) + r * chi_d2(r)
}

/// Bounded univariate bases with three derivatives.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Base {
    Tanh,
    Gauss,
    WGauss,
    Sin,
}

impl Base {
    /// Returns (v, v', v'', v''').
    #[inline]
    fn eval(self, u: f64) -> (f64, f64, f64, f64) {
        match self {
            Base::Tanh => {
                let t = u.tanh();
                let s2 = 1.0 - t * t;
                (t, s2, -2.0 * t * s2, s2 * (4.0 * t * t - 2.0 * s2))
            }
            Base::Gauss => {
                let e = (-0.5 * u * u).exp();
                (e, -u * e, (u * u - 1.0) * e, u * (3.0 - u * u) * e)
            }
            Base::WGauss => {
                let e = (-0.5 * u * u).exp();
                (
                    u * e,
                    (1.0 - u * u) * e,
                    u * (u * u - 3.0) * e,
                    (-u.powi(4) + 6.0 * u * u - 3.0) * e,
                )
            }
            Base::Sin => (u.sin(), u.cos(), -u.sin(), -u.cos()),
        }
    }
}

/// A test function of the pair (x, w) reporting its own derivatives.
pub trait TestFunction: Sync + Send {
    fn name(&self) -> &str;
    fn value(&self, x: f64, w: &[f64]) -> f64;
    /// f_xx away from the interface.
    fn fxx(&self, x: f64, w: &[f64]) -> f64;
    /// Gradient in w at a general point (drift pairing).
    fn grad_w(&self, x: f64, w: &[f64], out: &mut [f64]);
    /// Reported half-jump of f_x across x = 0.
    fn kink(&self, w: &[f64]) -> f64;
    /// Gradient in w on the interface.
    fn grad_w0(&self, w: &[f64], out: &mut [f64]);
    /// Hessian in w on the interface (row-major d x d).
    fn hess_w0(&self, w: &[f64], out: &mut [f64]);
}

/// Smooth function of x alone; trivially glued.
pub struct PureX {
    base: Base,
    label: String,
}

impl TestFunction for PureX {
    fn name(&self) -> &str {
        &self.label
    }

    fn value(&self, x: f64, _w: &[f64]) -> f64 {
        self.base.eval(x).0
    }

    fn fxx(&self, x: f64, _w: &[f64]) -> f64 {
        self.base.eval(x).2
    }

    fn grad_w(&self, _x: f64, _w: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }

    fn kink(&self, _w: &[f64]) -> f64 {
        0.0
    }

    fn grad_w0(&self, _w: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }

    fn hess_w0(&self, _w: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
}

/// f = v(w_i) - q(x) corr(w), corr = beta_i v' + alpha_ii v'' / 2, so the
/// interface part vanishes for the interface operators (beta, alpha) the
/// function was built against.
pub struct GluedW {
    comp: usize,
    base: Base,
    beta_i: f64,
    alpha_ii: f64,
    label: String,
}

impl GluedW {
    #[inline]
    fn corr_parts(&self, w: &[f64]) -> (f64, f64, f64, f64, f64) {
        let (v, v1, v2, v3) = self.base.eval(w[self.comp]);
        let corr = self.beta_i * v1 + 0.5 * self.alpha_ii * v2;
        let corr_d = self.beta_i * v2 + 0.5 * self.alpha_ii * v3;
        (v, v1, v2, corr, corr_d)
    }
}

impl TestFunction for GluedW {
    fn name(&self) -> &str {
        &self.label
    }

    fn value(&self, x: f64, w: &[f64]) -> f64 {
        let (v, _, _, corr, _) = self.corr_parts(w);
        v - carrier(x) * corr
    }

    fn fxx(&self, x: f64, w: &[f64]) -> f64 {
        let (_, _, _, corr, _) = self.corr_parts(w);
        -carrier_xx(x) * corr
    }

    fn grad_w(&self, x: f64, w: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        let (_, v1, _, _, corr_d) = self.corr_parts(w);
        out[self.comp] = v1 - carrier(x) * corr_d;
    }

    fn kink(&self, w: &[f64]) -> f64 {
        let (_, _, _, corr, _) = self.corr_parts(w);
        -corr
    }

    fn grad_w0(&self, w: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        out[self.comp] = self.base.eval(w[self.comp]).1;
    }

    fn hess_w0(&self, w: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        let d = w.len();
        out[self.comp * d + self.comp] = self.base.eval(w[self.comp]).2;
    }
}

/// f = tanh(x) tanh(w_i): smooth across the interface and zero there, so
/// every interface term vanishes while the drift pairing is exercised
/// with an x-dependent weight.
pub struct CrossXW {
    comp: usize,
    label: String,
}

impl TestFunction for CrossXW {
    fn name(&self) -> &str {
        &self.label
    }

    fn value(&self, x: f64, w: &[f64]) -> f64 {
        x.tanh() * w[self.comp].tanh()
    }

    fn fxx(&self, x: f64, w: &[f64]) -> f64 {
        let t = x.tanh();
        -2.0 * t * (1.0 - t * t) * w[self.comp].tanh()
    }

    fn grad_w(&self, x: f64, w: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        let t = w[self.comp].tanh();
        out[self.comp] = x.tanh() * (1.0 - t * t);
    }

    fn kink(&self, _w: &[f64]) -> f64 {
        0.0
    }

    fn grad_w0(&self, _w: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }

    fn hess_w0(&self, _w: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
}

/// Negative control: f = q(x) has a genuine unit kink at the interface
/// but reports no interface part at all. A sound validator must reject
/// it with a residual drift of one unit of local time.
pub struct KinkControl;

impl TestFunction for KinkControl {
    fn name(&self) -> &str {
        "kink_control"
    }

    fn value(&self, x: f64, _w: &[f64]) -> f64 {
        carrier(x)
    }

    fn fxx(&self, x: f64, _w: &[f64]) -> f64 {
        carrier_xx(x)
    }

    fn grad_w(&self, _x: f64, _w: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }

    fn kink(&self, _w: &[f64]) -> f64 {
        0.0
    }

    fn grad_w0(&self, _w: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }

    fn hess_w0(&self, _w: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
}

/// The standard zoo of glued functions for interface operators
/// (beta_eff, alpha_eff): at least seven functions, mixing pure-x,
/// pure-w glued, and cross structure. `alpha_eff` is row-major d x d.
pub fn gluing_test_functions(
    d: usize,
    beta_eff: &[f64],
    alpha_eff: &[f64],
) -> Vec<Box<dyn TestFunction>> {
    assert_eq!(beta_eff.len(), d);
    assert_eq!(alpha_eff.len(), d * d);
    let glued = |comp: usize, base: Base, label: &str| -> Box<dyn TestFunction> {
        Box::new(GluedW {
            comp,
            base,
            beta_i: beta_eff[comp],
            alpha_ii: alpha_eff[comp * d + comp],
            label: label.to_string(),
        })
    };
    let mut fns: Vec<Box<dyn TestFunction>> = vec![
        Box::new(PureX {
            base: Base::Tanh,
            label: "tanh_x".into(),
        }),
        Box::new(PureX {
            base: Base::Gauss,
            label: "gauss_x".into(),
        }),
        glued(0, Base::Tanh, "tanh_w1_glued"),
        glued(0, Base::Sin, "sin_w1_glued"),
        glued(0, Base::Gauss, "gauss_w1_glued"),
        glued(0, Base::WGauss, "wgauss_w1_glued"),
        Box::new(CrossXW {
            comp: 0,
            label: "tanh_x_tanh_w1".into(),
        }),
    ];
    if d >= 2 {
        fns.push(glued(1, Base::Tanh, "tanh_w2_glued"));
    }
    fns
}

/// The negative control paired with [`gluing_test_functions`].
pub fn kink_control() -> Box<dyn TestFunction> {
    Box::new(KinkControl)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn interface_part(f: &dyn TestFunction, w: &[f64], beta: &[f64], alpha: &[f64]) -> f64 {
        let d = w.len();
        let mut g = vec![0.0; d];
        let mut h = vec![0.0; d * d];
        f.grad_w0(w, &mut g);
        f.hess_w0(w, &mut h);
        let mut acc = f.kink(w);
        for i in 0..d {
            acc += beta[i] * g[i];
            for j in 0..d {
                acc += 0.5 * alpha[i * d + j] * h[i * d + j];
            }
        }
        acc
    }

    #[test]
    fn carrier_has_unit_kink_and_smooth_tails() {
        assert_eq!(carrier(0.0), 0.0);
        // Plateau: exactly |x| with zero curvature.
        assert_eq!(carrier(1.7), 1.7);
        assert_eq!(carrier(-2.9), 2.9);
        assert_eq!(carrier_xx(2.5), 0.0);
        // Support ends at 5.
        assert_eq!(carrier(5.1), 0.0);
        assert_eq!(carrier_xx(6.0), 0.0);
        // One-sided slopes at the origin.
        let h = 1e-7;
        assert!((carrier(h) / h - 1.0).abs() < 1e-9);
        assert!((carrier(-h) / h - 1.0).abs() < 1e-9);
        // The cutoff is C^2 at the seams: curvature decays quadratically
        // toward both, so probes at 1e-5 sit under 1e-7.
        assert!(carrier_xx(3.0 + 1e-5).abs() < 1e-7);
        assert!(carrier_xx(5.0 - 1e-5).abs() < 1e-7);
    }

    #[test]
    fn carrier_second_derivative_matches_finite_differences() {
        let h = 1e-4;
        for &x in &[3.3, 3.9, 4.4, 4.9, -3.5, -4.2] {
            let fd = (carrier(x + h) - 2.0 * carrier(x) + carrier(x - h)) / (h * h);
            assert!(
                (fd - carrier_xx(x)).abs() < 1e-5,
                "x {x}: fd {fd} vs {}",
                carrier_xx(x)
            );
        }
    }

    #[test]
    fn base_derivatives_match_finite_differences() {
        let h = 1e-5;
        for base in [Base::Tanh, Base::Gauss, Base::WGauss, Base::Sin] {
            for &u in &[-1.7, -0.3, 0.0, 0.6, 2.2] {
                let (_, v1, v2, v3) = base.eval(u);
                let vp = |u: f64| base.eval(u).0;
                let fd1 = (vp(u + h) - vp(u - h)) / (2.0 * h);
                let fd2 = (vp(u + h) - 2.0 * vp(u) + vp(u - h)) / (h * h);
                let d2 = |u: f64| base.eval(u).2;
                let fd3 = (d2(u + h) - d2(u - h)) / (2.0 * h);
                assert!((fd1 - v1).abs() < 1e-7, "{base:?} v' at {u}");
                assert!((fd2 - v2).abs() < 1e-4, "{base:?} v'' at {u}");
                assert!((fd3 - v3).abs() < 1e-4, "{base:?} v''' at {u}");
            }
        }
    }

    #[test]
    fn zoo_interface_parts_vanish_identically() {
        let beta = [0.9, -0.4];
        let alpha = [1.3, 0.2, 0.2, 0.7];
        let fns = gluing_test_functions(2, &beta, &alpha);
        assert!(fns.len() >= 7);
        for f in &fns {
            for &w0 in &[-1.2, 0.0, 0.8] {
                for &w1 in &[-0.5, 1.9] {
                    let part = interface_part(f.as_ref(), &[w0, w1], &beta, &alpha);
                    assert!(
                        part.abs() < 1e-14,
                        "{} leaks {part} at ({w0}, {w1})",
                        f.name()
                    );
                }
            }
        }
    }

    #[test]
    fn control_hides_a_real_kink() {
        let beta = [0.9];
        let alpha = [1.3];
        let f = kink_control();
        // Reported interface part is zero...
        assert_eq!(interface_part(f.as_ref(), &[0.3], &beta, &alpha), 0.0);
        // ...but the actual one-sided slopes jump by 2.
        let h = 1e-7;
        let right = (f.value(h, &[0.0]) - f.value(0.0, &[0.0])) / h;
        let left = (f.value(0.0, &[0.0]) - f.value(-h, &[0.0])) / h;
        assert!((right - 1.0).abs() < 1e-9);
        assert!((left + 1.0).abs() < 1e-9);
    }

    #[test]
    fn glued_values_and_derivatives_are_consistent() {
        let beta = [0.7];
        let alpha = [0.9];
        let fns = gluing_test_functions(1, &beta, &alpha);
        let w = [0.4];
        let h = 1e-4;
        for f in &fns {
            // fxx vs finite differences away from the kink.
            for &x in &[0.9, 3.6, -4.1] {
                let fd =
                    (f.value(x + h, &w) - 2.0 * f.value(x, &w) + f.value(x - h, &w)) / (h * h);
                assert!(
                    (fd - f.fxx(x, &w)).abs() < 2e-4,
                    "{} fxx at {x}: fd {fd} vs {}",
                    f.name(),
                    f.fxx(x, &w)
                );
            }
            // grad_w vs finite differences at a general point.
            let x = 1.3;
            let mut g = vec![0.0];
            f.grad_w(x, &w, &mut g);
            let fd = (f.value(x, &[w[0] + h]) - f.value(x, &[w[0] - h])) / (2.0 * h);
            assert!(
                (fd - g[0]).abs() < 1e-6,
                "{} grad_w: fd {fd} vs {}",
                f.name(),
                g[0]
            );
        }
    }
}
