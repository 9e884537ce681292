//! Command-line front end: config-driven experiment runs, standalone
//! marginal comparisons, interface quadratures, and plot-script emission.
//! Exit codes: 0 all validators pass, 1 a validator failed, 2 config or
//! environment error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use nullrec::coefficients::{
    build_model, registry, AveragingParams, Coefficients, InterfaceAverager, ModelOverrides,
};
use nullrec::harness::{
    emit_plots, read_report, run_compare, run_experiment, ExperimentConfig, ExperimentReport,
    HarnessError,
};

#[derive(Parser)]
#[command(name = "nullrec", version, about = "Interface-diffusion limit toolkit")]
struct Cli {
    /// Override the config's master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker thread count (defaults to NULLREC_WORKERS, then 1).
    #[arg(long, global = true, env = "NULLREC_WORKERS")]
    workers: Option<usize>,

    /// Override the config's output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Parse and validate a config without simulating.
    ValidateConfig { config: PathBuf },
    /// Run the full validator pipeline for a config.
    Run { config: PathBuf },
    /// Print the interface quadratures of a bundled model.
    InterfaceStats {
        /// Model name from `list-models`.
        model: String,
        /// Slow-state evaluation point, comma separated (default: origin).
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        y: Option<Vec<f64>>,
    },
    /// Run only the prelimit-vs-limit marginal comparison for a config.
    Compare { config: PathBuf },
    /// Re-emit plot scripts for a completed report directory.
    Plots { dir: PathBuf },
    /// List bundled coefficient models.
    ListModels,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let workers = cli.workers.unwrap_or(1).max(1);
    let code = match &cli.cmd {
        Cmd::ValidateConfig { config } => validate_config(config, &cli),
        Cmd::Run { config } => run(config, &cli, workers, false),
        Cmd::Compare { config } => run(config, &cli, workers, true),
        Cmd::InterfaceStats { model, y } => interface_stats(model, y.as_deref()),
        Cmd::Plots { dir } => plots(dir),
        Cmd::ListModels => list_models(),
    };
    ExitCode::from(code)
}

fn fail(e: &HarnessError) -> u8 {
    eprintln!("error: {e}");
    2
}

/// Applies --seed and --out on top of a parsed config.
fn load_config(path: &Path, cli: &Cli) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg = ExperimentConfig::from_path(path)?;
    if let Some(seed) = cli.seed {
        cfg.schedule.master_seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output.dir = out.clone();
    }
    Ok(cfg)
}

fn validate_config(path: &Path, cli: &Cli) -> u8 {
    match load_config(path, cli).and_then(|cfg| cfg.validate().map(|_| cfg)) {
        Ok(cfg) => {
            println!(
                "ok: experiment '{}' ({}, model {})",
                cfg.name,
                cfg.regime.label(),
                cfg.model.name
            );
            0
        }
        Err(e) => fail(&e),
    }
}

fn run(path: &Path, cli: &Cli, workers: usize, compare_only: bool) -> u8 {
    let cfg = match load_config(path, cli) {
        Ok(c) => c,
        Err(e) => return fail(&e),
    };
    let res = if compare_only {
        run_compare(&cfg, workers)
    } else {
        run_experiment(&cfg, workers)
    };
    match res {
        Ok(report) => {
            print_report(&report);
            if report.overall_pass() {
                0
            } else {
                1
            }
        }
        Err(e) => fail(&e),
    }
}

fn print_report(report: &ExperimentReport) {
    for row in &report.rows {
        println!(
            "{:12} {:32} value={:>13.6e} target={:>13.6e} thr={:>12.6e} se={:>12.6e}",
            row.verdict.label(),
            row.metric,
            row.value,
            row.target,
            row.threshold,
            row.stderr
        );
    }
    for note in &report.notes {
        println!("note: {note}");
    }
    println!(
        "overall: {} ({} rows, {} ms, out: {})",
        report.overall.label(),
        report.rows.len(),
        report.provenance.wall_ms,
        report.config.output.dir.display()
    );
}

fn interface_stats(model_name: &str, y: Option<&[f64]>) -> u8 {
    let overrides = ModelOverrides::by_name(model_name);
    let model = match build_model(&overrides) {
        Ok(m) => m,
        Err(e) => return fail(&HarnessError::Config(e.to_string())),
    };
    let d = model.dims().d;
    let y0 = match y {
        Some(v) if v.len() == d => v.to_vec(),
        Some(v) => {
            return fail(&HarnessError::Config(format!(
                "--y needs {d} components for model {model_name}, got {}",
                v.len()
            )))
        }
        None => vec![0.0; d],
    };
    let avg = match InterfaceAverager::new(&model, AveragingParams::default()) {
        Ok(a) => a,
        Err(e) => return fail(&HarnessError::Config(e.to_string())),
    };
    let data = match avg.at(&y0) {
        Ok(d) => d,
        Err(e) => return fail(&HarnessError::Config(e.to_string())),
    };
    println!("model: {model_name}  (y = {y0:?})");
    println!("a_plus   = {:.17e}", data.a_plus);
    println!("a_minus  = {:.17e}", data.a_minus);
    println!("a_err    = {:.3e}", data.a_err);
    for (i, b) in data.beta.iter().enumerate() {
        println!("beta[{i}]  = {b:.17e}");
    }
    for i in 0..d {
        let row: Vec<String> = (0..d)
            .map(|j| format!("{:.17e}", data.alpha[i * d + j]))
            .collect();
        println!("alpha[{i}] = [{}]", row.join(", "));
    }
    println!("quad_err = {:.3e}", data.quad_err);
    0
}

fn plots(dir: &Path) -> u8 {
    let report = match read_report(dir) {
        Ok(r) => r,
        Err(e) => return fail(&e),
    };
    let written = match emit_plots(&report, dir) {
        Ok(w) => w,
        Err(e) => return fail(&e),
    };
    if written.is_empty() && !report.rows.is_empty() {
        return fail(&HarnessError::Config(format!(
            "no figure inputs found in {} (CSV tables missing)",
            dir.display()
        )));
    }
    for path in &written {
        println!("{}", path.display());
    }
    0
}

fn list_models() -> u8 {
    for info in registry() {
        println!("{:18} {}", info.name, info.summary);
    }
    0
}
