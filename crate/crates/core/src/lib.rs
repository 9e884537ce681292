//! Simulation and verification toolkit for ODE systems perturbed by a
//! null-recurrent diffusion.
//!
//! The object of study is the fast-slow system
//!
//! ```text
//! dX(t) = phi(X(t)/eps, Y(t)) dW(t),                          X scalar
//! dY(t) = [b1(Y(t)) + b2(X(t)/eps, Y(t))] dt
//!         + sigma(X(t)/eps, Y(t)) dW(t),                      Y in R^d
//! ```
//!
//! driven by one shared k-dimensional Brownian motion W. The fast
//! coordinate X/eps is null recurrent, so classical averaging does not
//! apply: the perturbations b2 and sigma are integrable in x and act only
//! through the occupation of a shrinking neighbourhood of the interface
//! x = 0, i.e. through the local time of X at zero.
//!
//! The toolkit simulates the prelimit system, constructs the limiting
//! interface diffusions (local-time driven equations glued at x = 0 with
//! half-half flux weights), and validates the convergence statements by
//! Monte Carlo statistics: Kolmogorov-Smirnov marginal comparison,
//! martingale-problem residuals for glued test functions, excursion exit
//! statistics, and moment bounds.
//!
//! Module map:
//! - [`coefficients`]: coefficient sets, assumption checks, averaged
//!   interface quantities (one-sided diffusivities `a±`, drift `beta`,
//!   covariance `alpha`).
//! - [`engine`]: Euler-Maruyama prelimit simulation, deterministic flow,
//!   path persistence.
//! - [`local_time`]: symmetric local time estimators (band occupation and
//!   Tanaka inversion).
//! - [`limits`]: limiting processes via time change of a Brownian motion
//!   and local-time driven slow components.
//! - [`excursions`]: interface excursion statistics (exit laws, boundary
//!   increment limits, occupation times).
//! - [`validators`]: statistical checks tying prelimit ensembles to the
//!   limits.
//! - [`harness`]: experiment configuration, orchestration, reports, plot
//!   emission.

pub mod coefficients;
pub mod engine;
pub mod excursions;
pub mod harness;
pub mod limits;
pub mod local_time;
pub mod quad;
pub mod rng;
pub mod stats;
pub mod validators;

/// Crate version string used in report provenance.
pub fn version() -> &'static str {
    env!("CARGO_PKG_VERSION")
}
