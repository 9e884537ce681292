//! Config-driven experiment orchestration: load a declarative experiment
//! description, gate the regime against the model's structure, run the
//! regime's validator pipeline deterministically, and write a report
//! (JSON), a summary table (CSV), data tables (CSV), and plot scripts.
//!
//! Reproducibility contract: the pair (config, master seed) fully
//! determines every numeric output. Worker count only changes wall time,
//! never bytes in any CSV; wall times live in the JSON report only.

mod pipeline;
mod plots;

pub use plots::emit_plots;

use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coefficients::{build_model, Coefficients, Model, ModelOverrides};
use crate::limits::Regime;

#[derive(Debug, Error)]
pub enum HarnessError {
    /// Configuration problems: parse failures, invalid values, regime
    /// and model mismatches, missing inputs.
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

/// Experiment kind: one of the three limit regimes, or the supporting
/// lemma suite (interface statistics, averaging, scaling bounds).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RegimeChoice {
    DeviationDiffusive,
    DeviationDrift,
    Longtime,
    LemmaSuite,
}

impl RegimeChoice {
    /// The limit regime, when the experiment targets one.
    pub fn regime(self) -> Option<Regime> {
        match self {
            RegimeChoice::DeviationDiffusive => Some(Regime::DeviationDiffusive),
            RegimeChoice::DeviationDrift => Some(Regime::DeviationDrift),
            RegimeChoice::Longtime => Some(Regime::Longtime),
            RegimeChoice::LemmaSuite => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            RegimeChoice::DeviationDiffusive => "deviation_diffusive",
            RegimeChoice::DeviationDrift => "deviation_drift",
            RegimeChoice::Longtime => "longtime",
            RegimeChoice::LemmaSuite => "lemma_suite",
        }
    }
}

fn default_eps() -> Vec<f64> {
    vec![0.1, 0.05, 0.025]
}
fn default_horizons() -> Vec<f64> {
    vec![1.0]
}
fn default_n_paths() -> usize {
    10_000
}
fn default_seed() -> u64 {
    1
}

/// Ensemble sizes and ladders.
#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    /// Strictly decreasing ladder of scale separations.
    pub eps: Vec<f64>,
    /// Horizons in the regime's clock; the first one drives the
    /// path-level validators.
    pub horizons: Vec<f64>,
    pub n_paths: usize,
    pub master_seed: u64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            eps: default_eps(),
            horizons: default_horizons(),
            n_paths: default_n_paths(),
            master_seed: default_seed(),
        }
    }
}

/// Discretization policy.
#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    /// Prelimit step is step_safety * eps^2 in the original clock.
    pub step_safety: f64,
    /// Fine step of limit constructions.
    pub limit_dt: f64,
    /// Local-time band half-width; absent means 2 sqrt(limit_dt).
    pub band: Option<f64>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            step_safety: 0.1,
            limit_dt: 2e-4,
            band: None,
        }
    }
}

/// Validator thresholds. Defaults match the documented desk-scale gates.
#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValidatorConfig {
    /// Final Kolmogorov-Smirnov distance allowed at the smallest eps.
    pub ks_final: f64,
    /// Noise floors of slack allowed in the KS monotonicity check.
    pub ks_floors: f64,
    /// Standard errors allowed on glued-function martingale residuals.
    pub martingale_z: f64,
    /// Standard errors the hidden-kink control must exceed.
    pub control_z: f64,
    /// Relative tolerance for quadrature-targeted means.
    pub rel_tol: f64,
    pub martingale_paths: usize,
    pub martingale_dt: f64,
    /// Excursion schedule exponent (barrier eps^(base - 2 gamma)).
    pub excursion_gamma: f64,
    /// Epsilon ladder for the excursion table; defaults to the schedule
    /// ladder. Excursion paths are short, so this can go finer than the
    /// marginal comparisons afford.
    pub excursion_eps: Option<Vec<f64>>,
    /// Path count for the excursion table; defaults to the schedule's.
    pub excursion_paths: Option<usize>,
    /// Moment order of the tightness check.
    pub tightness_p: f64,
}

impl Default for ValidatorConfig {
    fn default() -> Self {
        Self {
            ks_final: 0.06,
            ks_floors: 2.0,
            martingale_z: 3.0,
            control_z: 5.0,
            rel_tol: 0.10,
            martingale_paths: 600,
            martingale_dt: 1e-4,
            excursion_gamma: 0.45,
            excursion_eps: None,
            excursion_paths: None,
            tightness_p: 8.0,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
        }
    }
}

/// A complete experiment description. Parsed from a single declarative
/// text file; unknown keys are rejected.
#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub regime: RegimeChoice,
    pub model: ModelOverrides,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub validators: ValidatorConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl ExperimentConfig {
    pub fn from_str_toml(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn from_path(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        Self::from_str_toml(&text)
    }

    /// Validates values and regime gating; returns the built model.
    /// Errors are enumerated, one human-readable line each.
    pub fn validate(&self) -> Result<Model, HarnessError> {
        let mut errs = Vec::new();
        if self.name.trim().is_empty() {
            errs.push("name must be nonempty".to_string());
        }
        let s = &self.schedule;
        if s.eps.is_empty() {
            errs.push("schedule.eps must be nonempty".to_string());
        }
        if s.eps.iter().any(|e| !(*e > 0.0 && *e <= 1.0)) {
            errs.push("schedule.eps entries must lie in (0, 1]".to_string());
        }
        if s.eps.windows(2).any(|w| w[1] >= w[0]) {
            errs.push("schedule.eps must be strictly decreasing".to_string());
        }
        if s.horizons.is_empty() || s.horizons.iter().any(|t| !(*t > 0.0)) {
            errs.push("schedule.horizons must be nonempty and positive".to_string());
        }
        if s.n_paths < 8 {
            errs.push("schedule.n_paths must be at least 8".to_string());
        }
        let g = &self.grid;
        if !(g.step_safety > 0.0 && g.step_safety <= 1.0) {
            errs.push("grid.step_safety must lie in (0, 1]".to_string());
        }
        if !(g.limit_dt > 0.0 && g.limit_dt <= 0.01) {
            errs.push("grid.limit_dt must lie in (0, 0.01]".to_string());
        }
        if let Some(b) = g.band {
            if !(b > 0.0) {
                errs.push("grid.band must be positive when given".to_string());
            }
        }
        let v = &self.validators;
        for (name, val) in [
            ("validators.ks_final", v.ks_final),
            ("validators.ks_floors", v.ks_floors),
            ("validators.martingale_z", v.martingale_z),
            ("validators.control_z", v.control_z),
            ("validators.rel_tol", v.rel_tol),
            ("validators.martingale_dt", v.martingale_dt),
        ] {
            if !(val > 0.0) {
                errs.push(format!("{name} must be positive"));
            }
        }
        if v.martingale_paths < 8 {
            errs.push("validators.martingale_paths must be at least 8".to_string());
        }
        if !(v.excursion_gamma > 0.0 && v.excursion_gamma < 0.5) {
            errs.push("validators.excursion_gamma must lie in (0, 0.5)".to_string());
        }
        if let Some(eps) = &v.excursion_eps {
            if eps.is_empty() || eps.iter().any(|e| !(*e > 0.0 && *e <= 1.0)) {
                errs.push("validators.excursion_eps entries must lie in (0, 1]".to_string());
            }
            if eps.windows(2).any(|w| w[1] >= w[0]) {
                errs.push("validators.excursion_eps must be strictly decreasing".to_string());
            }
        }
        if v.excursion_paths.is_some_and(|n| n < 8) {
            errs.push("validators.excursion_paths must be at least 8".to_string());
        }
        if !(v.tightness_p >= 2.0) {
            errs.push("validators.tightness_p must be at least 2".to_string());
        }
        if self.output.dir.as_os_str().is_empty() {
            errs.push("output.dir must be nonempty".to_string());
        }

        let model = match build_model(&self.model) {
            Ok(m) => Some(m),
            Err(e) => {
                errs.push(format!("model: {e}"));
                None
            }
        };
        if let Some(m) = &model {
            match self.regime {
                RegimeChoice::DeviationDrift if !m.is_sigma_zero() => {
                    errs.push(
                        "regime deviation_drift requires a model with sigma = 0".to_string(),
                    );
                }
                RegimeChoice::Longtime if !m.is_b1_zero() => {
                    errs.push("regime longtime requires a model with b1 = 0".to_string());
                }
                _ => {}
            }
        }
        match (errs.is_empty(), model) {
            (true, Some(m)) => Ok(m),
            _ => Err(HarnessError::Config(errs.join("\n"))),
        }
    }
}

/// Row verdict. Pass iff |value - target| <= threshold; inconclusive
/// when the statistical error exceeds half the threshold.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

impl Verdict {
    pub fn judge(value: f64, stderr: f64, target: f64, threshold: f64) -> Verdict {
        if stderr > threshold / 2.0 {
            Verdict::Inconclusive
        } else if (value - target).abs() <= threshold {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
            Verdict::Inconclusive => "inconclusive",
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// One validator outcome: a measured value against a target with an
/// acceptance threshold and the statistical error of the measurement.
#[derive(Clone, Debug, Deserialize, Serialize)]
pub struct StatRow {
    pub experiment: String,
    pub metric: String,
    pub value: f64,
    /// Monte Carlo standard error or quadrature error bound.
    pub stderr: f64,
    pub target: f64,
    pub threshold: f64,
    pub verdict: Verdict,
    pub n_samples: usize,
    /// Wall time of the step that produced this row (JSON only; never
    /// written to CSV).
    pub wall_ms: u64,
}

impl StatRow {
    pub fn new(
        experiment: &str,
        metric: &str,
        value: f64,
        stderr: f64,
        target: f64,
        threshold: f64,
        n_samples: usize,
    ) -> Self {
        Self {
            experiment: experiment.to_string(),
            metric: metric.to_string(),
            value,
            stderr,
            target,
            threshold,
            verdict: Verdict::judge(value, stderr, target, threshold),
            n_samples,
            wall_ms: 0,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
pub struct Provenance {
    pub version: String,
    pub wall_ms: u64,
    pub workers: usize,
}

/// Full outcome of one experiment run.
#[derive(Clone, Debug, Deserialize, Serialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub rows: Vec<StatRow>,
    /// Pass iff every non-inconclusive row passes.
    pub overall: Verdict,
    /// Step-level error messages (partial failures).
    pub notes: Vec<String>,
    pub provenance: Provenance,
}

impl ExperimentReport {
    pub fn overall_pass(&self) -> bool {
        self.overall == Verdict::Pass
    }
}

fn overall_verdict(rows: &[StatRow], notes: &[String]) -> Verdict {
    let all_pass = rows
        .iter()
        .filter(|r| r.verdict != Verdict::Inconclusive)
        .all(|r| r.verdict == Verdict::Pass);
    if all_pass && notes.is_empty() {
        Verdict::Pass
    } else {
        Verdict::Fail
    }
}

/// Serializes a float with 17 significant digits, enough to round-trip
/// f64 exactly.
pub(crate) fn fmt_f(v: f64) -> String {
    format!("{v:.16e}")
}

pub(crate) fn write_csv(path: &Path, header: &str, lines: &[String]) -> io::Result<()> {
    let mut s = String::with_capacity(header.len() + 1 + lines.len() * 96);
    s.push_str(header);
    s.push('\n');
    for l in lines {
        s.push_str(l);
        s.push('\n');
    }
    fs::write(path, s)
}

pub(crate) fn summary_lines(rows: &[StatRow]) -> Vec<String> {
    rows.iter()
        .map(|r| {
            format!(
                "{},{},{},{},{},{},{},{}",
                r.experiment,
                r.metric,
                fmt_f(r.value),
                fmt_f(r.stderr),
                fmt_f(r.target),
                fmt_f(r.threshold),
                r.verdict.label(),
                r.n_samples
            )
        })
        .collect()
}

pub(crate) const SUMMARY_HEADER: &str =
    "experiment,metric,value,stderr,target,threshold,verdict,n_samples";

/// Runs the experiment pipeline for the config's regime, writes
/// report.json, summary.csv, the data CSVs, and the plot scripts into
/// the output directory, and returns the report.
///
/// A failing validator step is isolated: it contributes a failed row and
/// a note, and the remaining steps still run.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    workers: usize,
) -> Result<ExperimentReport, HarnessError> {
    run_with(cfg, workers, false)
}

/// Runs only the prelimit-vs-limit marginal comparison for a config whose
/// regime has a limit law, writing the same report and table files.
pub fn run_compare(
    cfg: &ExperimentConfig,
    workers: usize,
) -> Result<ExperimentReport, HarnessError> {
    if cfg.regime.regime().is_none() {
        return Err(HarnessError::Config(
            "compare requires a regime with a limit law (deviation_diffusive, \
             deviation_drift, longtime)"
                .to_string(),
        ));
    }
    run_with(cfg, workers, true)
}

fn run_with(
    cfg: &ExperimentConfig,
    workers: usize,
    compare_only: bool,
) -> Result<ExperimentReport, HarnessError> {
    let model = cfg.validate()?;
    let out = cfg.output.dir.clone();
    fs::create_dir_all(&out)?;
    let started = Instant::now();

    let mut p = pipeline::Pipeline {
        cfg,
        model: &model,
        out: out.clone(),
        workers: workers.max(1),
        rows: Vec::new(),
        notes: Vec::new(),
        io_errors: Vec::new(),
    };
    if compare_only {
        pipeline::run_compare_pipeline(&mut p);
    } else {
        pipeline::run_pipeline(&mut p);
    }
    let (rows, notes, io_errors) = (p.rows, p.notes, p.io_errors);
    if let Some(e) = io_errors.into_iter().next() {
        return Err(HarnessError::Io(e));
    }

    let overall = overall_verdict(&rows, &notes);
    let report = ExperimentReport {
        config: cfg.clone(),
        rows,
        overall,
        notes,
        provenance: Provenance {
            version: crate::version().to_string(),
            wall_ms: started.elapsed().as_millis() as u64,
            workers: workers.max(1),
        },
    };
    write_report(&report, &out)?;
    emit_plots(&report, &out)?;
    Ok(report)
}

/// Writes report.json and summary.csv for a report into `dir`.
pub fn write_report(report: &ExperimentReport, dir: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(dir)?;
    let json = serde_json::to_string_pretty(report)
        .map_err(|e| HarnessError::Config(format!("report serialization: {e}")))?;
    fs::write(dir.join("report.json"), json)?;
    write_csv(
        &dir.join("summary.csv"),
        SUMMARY_HEADER,
        &summary_lines(&report.rows),
    )?;
    Ok(())
}

/// Reads a previously written report.json from a run directory.
pub fn read_report(dir: &Path) -> Result<ExperimentReport, HarnessError> {
    let path = dir.join("report.json");
    let text = fs::read_to_string(&path)
        .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::Config(format!("report.json: {e}")))
}
