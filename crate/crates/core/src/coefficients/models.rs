//! Bundled analytic coefficient sets and the name-based registry.
//!
//! Experiments select a model by name plus parameter overrides; there is
//! no runtime expression parsing. Every bundled set has known envelopes,
//! exact tail integrals, and closed-form averaged quantities where they
//! exist, so oracle tests can pin values ahead of simulation.

use super::{AnalyticRefs, CoeffError, Coefficients, Dims};
use serde::{Deserialize, Serialize};

const SQRT_PI: f64 = 1.772_453_850_905_516;

/// Fast diffusivity profile |phi(x)|^2; phi itself points along the first
/// noise coordinate.
#[derive(Clone, Debug, PartialEq)]
pub enum PhiKind {
    /// |phi|^2 = v.
    Const { v: f64 },
    /// |phi|^2 = 2 + sin x; one-sided averages both equal sqrt(3).
    TwoPlusSin,
    /// C^1 monotone ramp from `left` (x <= -1) to `right` (x >= 1), so the
    /// one-sided averages differ: a+ = right, a- = left.
    SmoothStep { left: f64, right: f64 },
}

impl PhiKind {
    #[inline]
    pub fn phi_sq(&self, x: f64) -> f64 {
        match self {
            PhiKind::Const { v } => *v,
            PhiKind::TwoPlusSin => 2.0 + x.sin(),
            PhiKind::SmoothStep { left, right } => {
                if x <= -1.0 {
                    *left
                } else if x >= 1.0 {
                    *right
                } else {
                    let mid = 0.5 * (left + right);
                    let half = 0.5 * (right - left);
                    mid + half * (std::f64::consts::FRAC_PI_2 * x).sin()
                }
            }
        }
    }

    fn ellipticity(&self) -> (f64, f64) {
        match self {
            PhiKind::Const { v } => (0.99 * v, 1.01 * v),
            PhiKind::TwoPlusSin => (0.99, 3.03),
            PhiKind::SmoothStep { left, right } => (0.99 * left, 1.01 * right),
        }
    }

    fn a_pm(&self) -> (f64, f64) {
        match self {
            PhiKind::Const { v } => (*v, *v),
            PhiKind::TwoPlusSin => (3.0f64.sqrt(), 3.0f64.sqrt()),
            PhiKind::SmoothStep { left, right } => (*right, *left),
        }
    }
}

/// Unperturbed slow drift b1.
#[derive(Clone, Debug, PartialEq)]
pub enum B1Kind {
    Zero,
    /// b1(y) = rate * y.
    Linear { rate: f64 },
    /// b1(y) = omega * (y2, -y1); requires d = 2.
    Rotation { omega: f64 },
}

/// Integrable slow drift perturbation b2.
#[derive(Clone, Debug, PartialEq)]
pub enum PerturbKind {
    Zero,
    /// b2(x, y) = amp * exp(-x^2) * (1 + y_mod * tanh(y1)) * e1.
    Gaussian { amp: f64, y_mod: f64 },
}

/// Integrable noise perturbation sigma (d x k with k = d + 1).
#[derive(Clone, Debug, PartialEq)]
pub enum SigmaKind {
    Zero,
    /// Row i: amp * exp(-x^2/2) * (rho * e1 + sqrt(1 - rho^2) * e_{i+2}).
    /// rho couples the slow noise to the fast driving coordinate; the
    /// averaged covariance alpha is independent of rho for d = 1.
    Gaussian { amp: f64, rho: f64 },
}

/// A bundled coefficient set.
#[derive(Clone, Debug)]
pub struct Model {
    pub name: String,
    d: usize,
    k: usize,
    pub phi_kind: PhiKind,
    pub b1_kind: B1Kind,
    pub b2_kind: PerturbKind,
    pub sigma_kind: SigmaKind,
    c1: f64,
    c2: f64,
}

#[inline]
fn gauss_full(x: f64) -> f64 {
    let s = x * x;
    if s > 120.0 {
        0.0
    } else {
        (-s).exp()
    }
}

#[inline]
fn gauss_half(x: f64) -> f64 {
    let s = 0.5 * x * x;
    if s > 120.0 {
        0.0
    } else {
        (-s).exp()
    }
}

impl Coefficients for Model {
    fn dims(&self) -> Dims {
        Dims {
            d: self.d,
            k: self.k,
        }
    }

    fn ellipticity(&self) -> (f64, f64) {
        (self.c1, self.c2)
    }

    #[inline]
    fn phi(&self, x: f64, _y: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        out[0] = self.phi_kind.phi_sq(x).sqrt();
    }

    #[inline]
    fn phi_norm_sq(&self, x: f64, _y: &[f64]) -> f64 {
        self.phi_kind.phi_sq(x)
    }

    #[inline]
    fn b1(&self, y: &[f64], out: &mut [f64]) {
        match &self.b1_kind {
            B1Kind::Zero => out.fill(0.0),
            B1Kind::Linear { rate } => {
                for (o, v) in out.iter_mut().zip(y) {
                    *o = rate * v;
                }
            }
            B1Kind::Rotation { omega } => {
                out[0] = omega * y[1];
                out[1] = -omega * y[0];
            }
        }
    }

    fn b1_jac(&self, _y: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        match &self.b1_kind {
            B1Kind::Zero => {}
            B1Kind::Linear { rate } => {
                for i in 0..self.d {
                    out[i * self.d + i] = *rate;
                }
            }
            B1Kind::Rotation { omega } => {
                out[1] = *omega;
                out[self.d] = -*omega;
            }
        }
    }

    #[inline]
    fn b2(&self, x: f64, y: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        if let PerturbKind::Gaussian { amp, y_mod } = &self.b2_kind {
            let g = gauss_full(x);
            if g > 0.0 {
                let m = if *y_mod == 0.0 {
                    1.0
                } else {
                    1.0 + y_mod * y[0].tanh()
                };
                out[0] = amp * g * m;
            }
        }
    }

    #[inline]
    fn sigma(&self, x: f64, _y: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        if let SigmaKind::Gaussian { amp, rho } = &self.sigma_kind {
            let h = gauss_half(x);
            if h > 0.0 {
                let diag = amp * h * (1.0 - rho * rho).sqrt();
                let shared = amp * h * rho;
                for i in 0..self.d {
                    out[i * self.k] = shared;
                    out[i * self.k + i + 1] = diag;
                }
            }
        }
    }

    fn b_hat(&self, x: f64) -> f64 {
        match &self.b2_kind {
            PerturbKind::Zero => 0.0,
            PerturbKind::Gaussian { amp, y_mod } => {
                amp.abs() * (1.0 + y_mod.abs()) * gauss_full(x)
            }
        }
    }

    fn sigma_hat_sq(&self, x: f64) -> f64 {
        match &self.sigma_kind {
            SigmaKind::Zero => 0.0,
            SigmaKind::Gaussian { amp, .. } => self.d as f64 * amp * amp * gauss_full(x),
        }
    }

    fn b_hat_tail(&self, r: f64) -> f64 {
        match &self.b2_kind {
            PerturbKind::Zero => 0.0,
            PerturbKind::Gaussian { amp, y_mod } => {
                amp.abs() * (1.0 + y_mod.abs()) * SQRT_PI * crate::stats::erfc(r)
            }
        }
    }

    fn sigma_hat_sq_tail(&self, r: f64) -> f64 {
        match &self.sigma_kind {
            SigmaKind::Zero => 0.0,
            SigmaKind::Gaussian { amp, .. } => {
                self.d as f64 * amp * amp * SQRT_PI * crate::stats::erfc(r)
            }
        }
    }

    fn is_b1_zero(&self) -> bool {
        matches!(self.b1_kind, B1Kind::Zero)
    }

    fn is_b2_zero(&self) -> bool {
        matches!(self.b2_kind, PerturbKind::Zero)
    }

    fn is_sigma_zero(&self) -> bool {
        matches!(self.sigma_kind, SigmaKind::Zero)
    }

    fn averaged_y_independent(&self) -> bool {
        !matches!(self.b2_kind, PerturbKind::Gaussian { y_mod, .. } if y_mod != 0.0)
    }

    fn analytic_refs(&self, y: &[f64]) -> AnalyticRefs {
        let (a_plus, a_minus) = self.phi_kind.a_pm();
        let mut refs = AnalyticRefs {
            a_plus: Some(a_plus),
            a_minus: Some(a_minus),
            beta: None,
            alpha: None,
        };
        // Closed forms exist only over a flat profile where the integral
        // of exp(-x^2)/|phi|^2 factorizes.
        if let PhiKind::Const { v } = self.phi_kind {
            match &self.b2_kind {
                PerturbKind::Zero => {
                    refs.beta = Some(vec![0.0; self.d]);
                }
                PerturbKind::Gaussian { amp, y_mod } => {
                    let m = 1.0 + y_mod * y[0].tanh();
                    let mut beta = vec![0.0; self.d];
                    beta[0] = amp * m * SQRT_PI / v;
                    refs.beta = Some(beta);
                }
            }
            match &self.sigma_kind {
                SigmaKind::Zero => {
                    refs.alpha = Some(vec![0.0; self.d * self.d]);
                }
                SigmaKind::Gaussian { amp, rho } => {
                    let scale = amp * amp * SQRT_PI / v;
                    let mut alpha = vec![0.0; self.d * self.d];
                    for i in 0..self.d {
                        for j in 0..self.d {
                            alpha[i * self.d + j] = if i == j {
                                scale
                            } else {
                                scale * rho * rho
                            };
                        }
                    }
                    refs.alpha = Some(alpha);
                }
            }
        }
        refs
    }
}

/// Registry entry.
#[derive(Clone, Copy, Debug)]
pub struct ModelInfo {
    pub name: &'static str,
    pub summary: &'static str,
}

pub fn registry() -> &'static [ModelInfo] {
    &[
        ModelInfo {
            name: "trivial",
            summary: "|phi|^2 = 1, no perturbation; X is a standard Brownian motion",
        },
        ModelInfo {
            name: "two_plus_sin",
            summary: "|phi|^2 = 2 + sin x, no perturbation; a+ = a- = sqrt(3)",
        },
        ModelInfo {
            name: "smooth_step",
            summary: "|phi|^2 ramps 1 -> 4 across the interface; a+ = 4, a- = 1",
        },
        ModelInfo {
            name: "gaussian_drift",
            summary: "Gaussian b2, sigma = 0; drift-driven deviations (beta = sqrt(pi))",
        },
        ModelInfo {
            name: "gaussian_diffusion",
            summary: "Gaussian sigma, b2 = 0, linear b1; diffusive deviations (alpha = sqrt(pi))",
        },
        ModelInfo {
            name: "gaussian_full",
            summary: "Gaussian b2 and sigma, b1 = 0; long-time interface diffusion",
        },
        ModelInfo {
            name: "gaussian_step",
            summary: "Gaussian b2 and sigma over the 1 -> 4 ramp; asymmetric long-time limit",
        },
    ]
}

/// Parameter overrides applied on top of a named bundled model.
///
/// Unknown keys are rejected at parse time; overrides that do not apply to
/// the chosen base model are rejected at build time.
#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ModelOverrides {
    pub name: String,
    pub d: Option<usize>,
    /// Flat profile value |phi|^2 (Const profiles only).
    pub phi_sq: Option<f64>,
    /// SmoothStep plateau levels.
    pub phi_left: Option<f64>,
    pub phi_right: Option<f64>,
    /// Linear b1 rate; switches b1 on for models with b1 = 0.
    pub b1_rate: Option<f64>,
    /// Rotation b1 angular rate (requires d = 2).
    pub b1_omega: Option<f64>,
    pub b2_amp: Option<f64>,
    pub b2_y_mod: Option<f64>,
    pub sigma_amp: Option<f64>,
    pub rho: Option<f64>,
    /// Declared ellipticity window overrides (for falsification tests).
    pub c1: Option<f64>,
    pub c2: Option<f64>,
}

impl ModelOverrides {
    pub fn by_name(name: &str) -> Self {
        Self {
            name: name.to_string(),
            ..Self::default()
        }
    }
}

/// Builds a bundled model with overrides applied.
pub fn build_model(ov: &ModelOverrides) -> Result<Model, CoeffError> {
    let known: Vec<&str> = registry().iter().map(|m| m.name).collect();
    let (phi_kind, b1_kind, b2_kind, sigma_kind) = match ov.name.as_str() {
        "trivial" => (
            PhiKind::Const { v: 1.0 },
            B1Kind::Zero,
            PerturbKind::Zero,
            SigmaKind::Zero,
        ),
        "two_plus_sin" => (
            PhiKind::TwoPlusSin,
            B1Kind::Zero,
            PerturbKind::Zero,
            SigmaKind::Zero,
        ),
        "smooth_step" => (
            PhiKind::SmoothStep {
                left: 1.0,
                right: 4.0,
            },
            B1Kind::Zero,
            PerturbKind::Zero,
            SigmaKind::Zero,
        ),
        "gaussian_drift" => (
            PhiKind::Const { v: 1.0 },
            B1Kind::Zero,
            PerturbKind::Gaussian {
                amp: 1.0,
                y_mod: 0.0,
            },
            SigmaKind::Zero,
        ),
        "gaussian_diffusion" => (
            PhiKind::Const { v: 1.0 },
            B1Kind::Linear { rate: -0.5 },
            PerturbKind::Zero,
            SigmaKind::Gaussian { amp: 1.0, rho: 0.6 },
        ),
        "gaussian_full" => (
            PhiKind::Const { v: 1.0 },
            B1Kind::Zero,
            PerturbKind::Gaussian {
                amp: 1.0,
                y_mod: 0.0,
            },
            SigmaKind::Gaussian { amp: 1.0, rho: 0.6 },
        ),
        "gaussian_step" => (
            PhiKind::SmoothStep {
                left: 1.0,
                right: 4.0,
            },
            B1Kind::Zero,
            PerturbKind::Gaussian {
                amp: 1.0,
                y_mod: 0.0,
            },
            SigmaKind::Gaussian { amp: 1.0, rho: 0.0 },
        ),
        other => {
            return Err(CoeffError::UnknownModel(
                other.to_string(),
                known.join(", "),
            ))
        }
    };

    let d = ov.d.unwrap_or(1);
    if d == 0 {
        return Err(CoeffError::InvalidParameter("d must be positive".into()));
    }

    let invalid = |field: &'static str| CoeffError::InvalidOverride {
        field,
        model: ov.name.clone(),
    };

    let phi_kind = match (phi_kind, ov.phi_sq, ov.phi_left, ov.phi_right) {
        (PhiKind::Const { .. }, Some(v), None, None) => {
            if v <= 0.0 {
                return Err(CoeffError::InvalidParameter(
                    "phi_sq must be positive".into(),
                ));
            }
            PhiKind::Const { v }
        }
        (kind @ PhiKind::Const { .. }, None, None, None) => kind,
        (PhiKind::SmoothStep { left, right }, None, l, r) => {
            let (left, right) = (l.unwrap_or(left), r.unwrap_or(right));
            if left <= 0.0 || right <= 0.0 {
                return Err(CoeffError::InvalidParameter(
                    "smooth step levels must be positive".into(),
                ));
            }
            PhiKind::SmoothStep { left, right }
        }
        (kind @ PhiKind::TwoPlusSin, None, None, None) => kind,
        (_, Some(_), _, _) => return Err(invalid("phi_sq")),
        (_, _, _, _) => return Err(invalid("phi_left/phi_right")),
    };

    let b1_kind = match (&b1_kind, ov.b1_rate, ov.b1_omega) {
        (_, Some(_), Some(_)) => {
            return Err(CoeffError::InvalidParameter(
                "b1_rate and b1_omega are mutually exclusive".into(),
            ))
        }
        (_, Some(rate), None) => {
            if rate == 0.0 {
                B1Kind::Zero
            } else {
                B1Kind::Linear { rate }
            }
        }
        (_, None, Some(omega)) => {
            if d != 2 {
                return Err(CoeffError::InvalidParameter(
                    "rotation b1 requires d = 2".into(),
                ));
            }
            B1Kind::Rotation { omega }
        }
        (kind, None, None) => (*kind).clone(),
    };

    let b2_kind = match (&b2_kind, ov.b2_amp, ov.b2_y_mod) {
        (PerturbKind::Zero, None, None) => PerturbKind::Zero,
        (PerturbKind::Zero, _, _) => return Err(invalid("b2_amp/b2_y_mod")),
        (PerturbKind::Gaussian { amp, y_mod }, a, m) => PerturbKind::Gaussian {
            amp: a.unwrap_or(*amp),
            y_mod: m.unwrap_or(*y_mod),
        },
    };

    let sigma_kind = match (&sigma_kind, ov.sigma_amp, ov.rho) {
        (SigmaKind::Zero, None, None) => SigmaKind::Zero,
        (SigmaKind::Zero, _, _) => return Err(invalid("sigma_amp/rho")),
        (SigmaKind::Gaussian { amp, rho }, a, r) => {
            let rho = r.unwrap_or(*rho);
            if !(-1.0..=1.0).contains(&rho) {
                return Err(CoeffError::InvalidParameter(
                    "rho must lie in [-1, 1]".into(),
                ));
            }
            SigmaKind::Gaussian {
                amp: a.unwrap_or(*amp),
                rho,
            }
        }
    };

    let k = if matches!(sigma_kind, SigmaKind::Zero) {
        1
    } else {
        d + 1
    };
    let (c1_def, c2_def) = phi_kind.ellipticity();
    let c1 = ov.c1.unwrap_or(c1_def);
    let c2 = ov.c2.unwrap_or(c2_def);
    if !(c1 > 0.0 && c1 < c2) {
        return Err(CoeffError::InvalidParameter(format!(
            "ellipticity window ({c1}, {c2}) is not ordered"
        )));
    }

    Ok(Model {
        name: ov.name.clone(),
        d,
        k,
        phi_kind,
        b1_kind,
        b2_kind,
        sigma_kind,
        c1,
        c2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_names_build() {
        for info in registry() {
            let m = build_model(&ModelOverrides::by_name(info.name)).unwrap();
            assert_eq!(m.name, info.name);
            let Dims { d, k } = m.dims();
            assert!(d >= 1 && k >= 1);
        }
    }

    #[test]
    fn unknown_model_is_rejected_with_candidates() {
        let err = build_model(&ModelOverrides::by_name("nope")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("nope") && msg.contains("two_plus_sin"));
    }

    #[test]
    fn inapplicable_override_is_rejected() {
        let mut ov = ModelOverrides::by_name("trivial");
        ov.sigma_amp = Some(2.0);
        assert!(build_model(&ov).is_err());
    }

    #[test]
    fn sigma_layout_matches_row_major_d_by_k() {
        let mut ov = ModelOverrides::by_name("gaussian_diffusion");
        ov.d = Some(2);
        ov.rho = Some(0.6);
        let m = build_model(&ov).unwrap();
        let Dims { d, k } = m.dims();
        assert_eq!((d, k), (2, 3));
        let mut sig = vec![0.0; d * k];
        m.sigma(0.0, &[0.0, 0.0], &mut sig);
        let rt = (1.0f64 - 0.36).sqrt();
        let want = [0.6, rt, 0.0, 0.6, 0.0, rt];
        for (got, want) in sig.iter().zip(want) {
            assert!((got - want).abs() < 1e-12, "{sig:?}");
        }
        // Row norms: sigma sigma^T diagonal equals amp^2 e^{-x^2}.
        for i in 0..d {
            let row = &sig[i * k..(i + 1) * k];
            let norm_sq: f64 = row.iter().map(|v| v * v).sum();
            assert!((norm_sq - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn shared_noise_column_couples_x_and_y() {
        let m = build_model(&ModelOverrides::by_name("gaussian_diffusion")).unwrap();
        let Dims { d, k } = m.dims();
        assert_eq!((d, k), (1, 2));
        let mut phi = vec![0.0; k];
        m.phi(0.3, &[0.0], &mut phi);
        assert!(phi[0] > 0.0 && phi[1] == 0.0);
        let mut sig = vec![0.0; d * k];
        m.sigma(0.3, &[0.0], &mut sig);
        // sigma row has weight rho on the coordinate driving X.
        assert!(sig[0] != 0.0);
    }

    #[test]
    fn smooth_step_profile_is_c1_at_the_joints() {
        let m = build_model(&ModelOverrides::by_name("smooth_step")).unwrap();
        let h = 1e-6;
        for x0 in [-1.0, 1.0] {
            let left = (m.phi_norm_sq(x0, &[0.0]) - m.phi_norm_sq(x0 - h, &[0.0])) / h;
            let right = (m.phi_norm_sq(x0 + h, &[0.0]) - m.phi_norm_sq(x0, &[0.0])) / h;
            assert!(left.abs() < 1e-4 && right.abs() < 1e-4, "{left} {right}");
        }
        assert_eq!(m.phi_norm_sq(-5.0, &[0.0]), 1.0);
        assert_eq!(m.phi_norm_sq(5.0, &[0.0]), 4.0);
    }

    #[test]
    fn envelope_tails_are_exact_for_gaussian_perturbations() {
        let m = build_model(&ModelOverrides::by_name("gaussian_full")).unwrap();
        // Tail at 0 is the full mass sqrt(pi).
        assert!((m.b_hat_tail(0.0) - SQRT_PI).abs() < 1e-6);
        assert!(m.b_hat_tail(4.0) < 1e-6);
        assert!(m.sigma_hat_sq_tail(4.0) < 1e-6);
    }
}
