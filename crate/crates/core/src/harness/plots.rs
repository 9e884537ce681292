//! Plot-script emission. Each figure is a standalone python script that
//! reads its CSVs by path relative to its own location and writes a PNG
//! next to them, so a report directory can be copied anywhere and
//! re-rendered. Scripts whose input CSVs are missing are skipped.

use std::fs;
use std::path::{Path, PathBuf};

use super::{ExperimentReport, HarnessError, RegimeChoice};

const PRELUDE: &str = r#"import csv
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

HERE = os.path.dirname(os.path.abspath(__file__))


def load(name):
    with open(os.path.join(HERE, name), newline="") as f:
        return list(csv.DictReader(f))


def col(rows, name):
    return [float(r[name]) for r in rows]
"#;

const CONVERGENCE: &str = r#""""Marginal distance to the limit law as the scale parameter shrinks."""
{PRELUDE}
rows = load("ks_table.csv")
fig, ax = plt.subplots(figsize=(6, 4))
for obs in sorted({r["observable"] for r in rows}):
    sub = [r for r in rows if r["observable"] == obs]
    eps = col(sub, "epsilon")
    ax.loglog(eps, col(sub, "d_stat"), "o-", label=f"distance ({obs})")
    ax.loglog(eps, col(sub, "floor"), ":", color="gray")
ax.set_xlabel("epsilon")
ax.set_ylabel("KS distance")
ax.invert_xaxis()
ax.legend()
ax.set_title("marginal convergence (dotted: sampling floor)")
fig.tight_layout()
fig.savefig(os.path.join(HERE, "convergence.png"), dpi=150)
"#;

const SAMPLE_PATHS: &str = r#""""Prelimit fast/slow trajectories next to one glued limit path."""
{PRELUDE}
pre = load("prelimit_path.csv")
lim = load("limit_path.csv")
fig, axes = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
axes[0].plot(col(pre, "time"), col(pre, "x"), lw=0.6, label="prelimit X")
axes[0].plot(col(lim, "time"), col(lim, "x"), lw=0.8, alpha=0.8, label="limit X")
axes[0].axhline(0.0, color="k", lw=0.4)
axes[0].set_ylabel("fast component")
axes[0].legend(loc="upper right")
axes[1].plot(col(pre, "time"), col(pre, "zeta1"), lw=0.8, label="prelimit zeta")
axes[1].plot(col(lim, "time"), col(lim, "zeta1"), lw=0.8, label="limit zeta")
axes[1].set_xlabel("time")
axes[1].set_ylabel("slow component 1")
axes[1].legend(loc="upper right")
fig.tight_layout()
fig.savefig(os.path.join(HERE, "sample_paths.png"), dpi=150)
"#;

const STAIRCASE: &str = r#""""Limit slow path flat off the interface: the local-time staircase."""
{PRELUDE}
lim = load("limit_path.csv")
t = col(lim, "time")
fig, ax = plt.subplots(figsize=(7, 4))
ax.plot(t, col(lim, "zeta1"), lw=0.9, label="slow component 1")
ax.plot(t, col(lim, "l"), lw=0.9, label="local time at 0")
ax2 = ax.twinx()
ax2.plot(t, col(lim, "x"), lw=0.4, color="gray", alpha=0.6)
ax2.set_ylabel("fast component", color="gray")
ax.set_xlabel("time")
ax.set_ylabel("slow / local time")
ax.legend(loc="upper left")
ax.set_title("slow motion accrues only on the interface")
fig.tight_layout()
fig.savefig(os.path.join(HERE, "local_time_staircase.png"), dpi=150)
"#;

const MARTINGALE: &str = r#""""Martingale-problem residuals per test function, in z units."""
{PRELUDE}
rows = load("martingale.csv")
names = [r["function"] for r in rows]
z = col(rows, "z")
fig, ax = plt.subplots(figsize=(7, 4))
ax.bar(range(len(z)), z, color=["tab:red" if n == "control" else "tab:blue" for n in names])
for lvl in (-3, 3):
    ax.axhline(lvl, color="k", lw=0.6, ls="--")
ax.set_xticks(range(len(names)))
ax.set_xticklabels(names, rotation=45, ha="right")
ax.set_ylabel("z score of mean residual")
ax.set_title("generator residuals (control should break the band)")
fig.tight_layout()
fig.savefig(os.path.join(HERE, "martingale_residuals.png"), dpi=150)
"#;

const OCCUPATION: &str = r#""""Interface-band occupation fraction scaling linearly in band width."""
{PRELUDE}
rows = load("occupation.csv")
b = col(rows, "band")
f = col(rows, "fraction")
n = len(b)
sxx = sum(x * x for x in b) - sum(b) ** 2 / n
sxy = sum(x * y for x, y in zip(b, f)) - sum(b) * sum(f) / n
slope = sxy / sxx
icpt = (sum(f) - slope * sum(b)) / n
fig, ax = plt.subplots(figsize=(6, 4))
ax.plot(b, f, "o", label="measured")
ax.plot([0.0] + b, [icpt] + [icpt + slope * x for x in b], "-", label="linear fit")
ax.set_xlabel("band half-width")
ax.set_ylabel("occupation fraction")
ax.legend()
ax.set_title("occupation near the interface")
fig.tight_layout()
fig.savefig(os.path.join(HERE, "occupation_fit.png"), dpi=150)
"#;

const EXIT_STATS: &str = r#""""Exit probabilities and mean exit times across barrier sizes."""
{PRELUDE}
rows = load("exit_stats.csv")
center = [r for r in rows if float(r["x0"]) == 0.0]
fig, axes = plt.subplots(1, 2, figsize=(9, 4))
d = col(center, "delta")
axes[0].errorbar(
    [float(r["x0"]) / float(r["delta"]) for r in rows],
    col(rows, "p_right"),
    yerr=[3 * float(r["p_right_se"]) for r in rows],
    fmt="o",
)
axes[0].axhline(0.5, color="k", lw=0.5, ls=":")
axes[0].set_xlabel("start point / barrier")
axes[0].set_ylabel("P(exit right)")
axes[1].loglog(d, col(center, "mean_time"), "o-", label="measured")
axes[1].loglog(d, [x * x for x in d], "--", label="quadratic reference")
axes[1].set_xlabel("barrier half-width")
axes[1].set_ylabel("mean exit time")
axes[1].legend()
fig.tight_layout()
fig.savefig(os.path.join(HERE, "exit_statistics.png"), dpi=150)
"#;

const INTEGRAL: &str = r#""""Time-integral functional scaling in the scale parameter and horizon."""
{PRELUDE}
rows = load("integral_bound.csv")
hs = sorted({r["horizon"] for r in rows}, key=float)
es = sorted({r["epsilon"] for r in rows}, key=float)
fig, axes = plt.subplots(1, 2, figsize=(9, 4))
for h in hs:
    sub = [r for r in rows if r["horizon"] == h]
    if len(sub) > 1:
        axes[0].loglog(col(sub, "epsilon"), col(sub, "mean"), "o-", label=f"T={float(h):g}")
axes[0].set_xlabel("epsilon")
axes[0].set_ylabel("mean integral")
axes[0].legend()
for e in es:
    sub = [r for r in rows if r["epsilon"] == e]
    if len(sub) > 1:
        axes[1].loglog(col(sub, "horizon"), col(sub, "mean"), "s-", label=f"eps={float(e):g}")
axes[1].set_xlabel("horizon")
axes[1].legend()
fig.tight_layout()
fig.savefig(os.path.join(HERE, "integral_scaling.png"), dpi=150)
"#;

/// (script file name, template, CSVs it reads)
type Figure = (&'static str, &'static str, &'static [&'static str]);

fn figures(regime: RegimeChoice) -> &'static [Figure] {
    const DEVIATION: &[Figure] = &[
        ("convergence.py", CONVERGENCE, &["ks_table.csv"]),
        (
            "sample_paths.py",
            SAMPLE_PATHS,
            &["prelimit_path.csv", "limit_path.csv"],
        ),
        ("local_time_staircase.py", STAIRCASE, &["limit_path.csv"]),
        ("martingale_residuals.py", MARTINGALE, &["martingale.csv"]),
    ];
    const LONGTIME: &[Figure] = &[
        ("convergence.py", CONVERGENCE, &["ks_table.csv"]),
        (
            "sample_paths.py",
            SAMPLE_PATHS,
            &["prelimit_path.csv", "limit_path.csv"],
        ),
        ("local_time_staircase.py", STAIRCASE, &["limit_path.csv"]),
        ("martingale_residuals.py", MARTINGALE, &["martingale.csv"]),
        ("occupation_fit.py", OCCUPATION, &["occupation.csv"]),
    ];
    const LEMMA: &[Figure] = &[
        ("exit_statistics.py", EXIT_STATS, &["exit_stats.csv"]),
        ("occupation_fit.py", OCCUPATION, &["occupation.csv"]),
        ("integral_scaling.py", INTEGRAL, &["integral_bound.csv"]),
    ];
    match regime {
        RegimeChoice::DeviationDiffusive | RegimeChoice::DeviationDrift => DEVIATION,
        RegimeChoice::Longtime => LONGTIME,
        RegimeChoice::LemmaSuite => LEMMA,
    }
}

/// Writes one python script per figure whose input CSVs are present in
/// `dir`, and returns the script paths.
pub fn emit_plots(report: &ExperimentReport, dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    let mut written = Vec::new();
    if report.rows.is_empty() {
        return Ok(written);
    }
    for (name, template, inputs) in figures(report.config.regime) {
        if !inputs.iter().all(|c| dir.join(c).is_file()) {
            continue;
        }
        let body = template.replace("{PRELUDE}", PRELUDE);
        let path = dir.join(name);
        fs::write(&path, body)?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scripts_reference_only_their_declared_inputs() {
        for regime in [
            RegimeChoice::DeviationDiffusive,
            RegimeChoice::DeviationDrift,
            RegimeChoice::Longtime,
            RegimeChoice::LemmaSuite,
        ] {
            for (name, template, inputs) in figures(regime) {
                assert!(name.ends_with(".py"));
                for csv in *inputs {
                    assert!(
                        template.contains(csv),
                        "{name} must read {csv}"
                    );
                }
                let n_loads = template.matches("load(\"").count();
                assert_eq!(n_loads, inputs.len(), "{name} declares all inputs");
            }
        }
    }

    #[test]
    fn missing_inputs_skip_scripts() {
        let dir = tempfile::tempdir().unwrap();
        // A report whose directory holds no CSVs yields no scripts.
        let cfg: crate::harness::ExperimentConfig = toml::from_str(
            r#"
                name = "t"
                regime = "lemma_suite"
                [model]
                name = "trivial"
            "#,
        )
        .unwrap();
        let mut report = ExperimentReport {
            config: cfg,
            rows: vec![],
            overall: crate::harness::Verdict::Pass,
            notes: vec![],
            provenance: crate::harness::Provenance {
                version: "0".into(),
                wall_ms: 0,
                workers: 1,
            },
        };
        std::fs::write(dir.path().join("occupation.csv"), "band,fraction\n").unwrap();
        // A rowless report never plots, even with inputs on disk.
        let written = emit_plots(&report, dir.path()).unwrap();
        assert!(written.is_empty());
        report
            .rows
            .push(crate::harness::StatRow::new("t", "m", 1.0, 0.1, 1.0, 1.0, 8));
        let written = emit_plots(&report, dir.path()).unwrap();
        assert_eq!(written.len(), 1);
        let text = std::fs::read_to_string(&written[0]).unwrap();
        assert!(text.contains("matplotlib.use(\"Agg\")"));
        assert!(!text.contains("{PRELUDE}"));
    }
}
