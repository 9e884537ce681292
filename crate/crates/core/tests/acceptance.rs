//! Acceptance gate: ten end-to-end checks at full desk scale, one test
//! and one printed pass line per criterion. Tolerances are the stated
//! acceptance values, not tuned-down versions; seeds are fixed so every
//! number below is reproducible.

use std::process::Command;

use nullrec::coefficients::{
    build_model, AveragingParams, Coefficients, InterfaceAverager, Model, ModelOverrides,
};
use nullrec::engine::{par_map_paths, simulate_path, SimMode, SimParams};
use nullrec::excursions::{boundary_increment_limits, excursion_exit_stats, ExcursionScheduleParams, ExitParams};
use nullrec::limits::{
    build_deviation_limit, build_longtime_limit, glued_mean_local_time, DeviationKind, FlowTable,
    LimitParams, Regime,
};
use nullrec::local_time::{band_local_time_with_qv, default_band, tanaka_local_time};
use nullrec::stats::mean_stderr;
use nullrec::validators::{
    check_integral_functional_bound, check_tightness_moments, compare_marginals,
    validate_deviation_martingale, validate_longtime_martingale, IntegralBoundParams,
    MarginalCompareParams, MartingaleParams, Observable, PsiKind, TightnessParams,
};

const SQRT_PI: f64 = 1.7724538509055159;
const SQRT_3: f64 = 1.7320508075688772;
const SQRT_2: f64 = std::f64::consts::SQRT_2;
const EL_BM_1: f64 = 0.7978845608028654; // E|W(1)| = sqrt(2/pi)

fn model(name: &str) -> Model {
    build_model(&ModelOverrides::by_name(name)).expect("bundled model builds")
}

fn quadratures(m: &Model) -> nullrec::coefficients::InterfaceData {
    let avg = InterfaceAverager::new(m, AveragingParams::default()).unwrap();
    avg.at(&vec![0.0; m.dims().d]).unwrap().into_owned()
}

#[test]
fn c01_interface_quadrature_oracles() {
    let sin = quadratures(&model("two_plus_sin"));
    let ep = (sin.a_plus - SQRT_3).abs().max((sin.a_minus - SQRT_3).abs());
    assert!(ep <= 1e-4, "2+sin side averages off sqrt(3) by {ep:.2e}");

    let drift = quadratures(&model("gaussian_drift"));
    let eb = (drift.beta[0] - SQRT_PI).abs();
    assert!(eb <= 1e-6, "drift quadrature off sqrt(pi) by {eb:.2e}");

    let diff = quadratures(&model("gaussian_diffusion"));
    let ea = (diff.alpha[0] - SQRT_PI).abs();
    assert!(ea <= 1e-6, "covariance quadrature off sqrt(pi) by {ea:.2e}");
    println!(
        "c01 interface quadrature oracles: pass (a err {ep:.1e}, beta err {eb:.1e}, alpha err {ea:.1e})"
    );
}

#[test]
fn c02_local_time_estimators() {
    let m = model("trivial");
    let dt = 1e-4;
    let n = 10_000;
    let mut sp = SimParams::new(1.0, 1.0, 1);
    sp.dt_factor = dt;
    sp.n_record = (1.0 / dt) as usize;
    let band = default_band(dt);
    let pairs: Vec<(f64, f64)> = par_map_paths(n, 20_260_102, 1, |i, s| {
        let mut rng = s.stream(i, 0);
        let rec = simulate_path(&m, &sp, SimMode::Deviation, &mut rng).unwrap();
        let b = *band_local_time_with_qv(&rec.x, &rec.x_qv, band, 0.0)
            .last()
            .unwrap();
        let t = *tanaka_local_time(&rec.x, 0.0).last().unwrap();
        (b, t)
    });
    let (bm, _) = mean_stderr(&pairs.iter().map(|p| p.0).collect::<Vec<_>>()).unwrap();
    let (tm, _) = mean_stderr(&pairs.iter().map(|p| p.1).collect::<Vec<_>>()).unwrap();
    let rb = (bm - EL_BM_1).abs() / EL_BM_1;
    let rt = (tm - EL_BM_1).abs() / EL_BM_1;
    assert!(rb <= 0.03, "band estimator off by {:.1}%", 100.0 * rb);
    assert!(rt <= 0.03, "tanaka estimator off by {:.1}%", 100.0 * rt);
    let gap = (bm - tm).abs();
    assert!(gap <= 0.05, "estimator means differ by {gap:.3}");
    println!(
        "c02 local time estimators: pass (band {bm:.4}, tanaka {tm:.4}, target {EL_BM_1:.4}, mean gap {gap:.4})"
    );
}

#[test]
fn c03_exit_statistics() {
    let m = model("trivial");
    let n = 10_000;
    let mut lines = Vec::new();

    // Exit side frequencies from the center and from half-barrier.
    let mut p = ExitParams::new(1.0, 0.2, 0.0);
    p.n_paths = n;
    p.master_seed = 20_260_103;
    let center = excursion_exit_stats(&m, &p).unwrap();
    let zc = (center.p_right - 0.5).abs() / center.p_right_se;
    assert!(zc <= 3.0, "center exit frequency {} ({zc:.1} se)", center.p_right);

    let mut p = ExitParams::new(1.0, 0.2, 0.1);
    p.n_paths = n;
    p.master_seed = 20_260_104;
    let off = excursion_exit_stats(&m, &p).unwrap();
    let zo = (off.p_right - 0.75).abs() / off.p_right_se;
    assert!(zo <= 3.0, "half-barrier exit frequency {} ({zo:.1} se)", off.p_right);
    lines.push(format!("p(0)={:.3}, p(delta/2)={:.3}", center.p_right, off.p_right));

    // Mean exit time delta^2 for the flat profile, every barrier size.
    for (k, delta) in [0.2, 0.1, 0.05].into_iter().enumerate() {
        let mut p = ExitParams::new(1.0, delta, 0.0);
        p.n_paths = n;
        p.master_seed = 20_260_105 + k as u64;
        let s = excursion_exit_stats(&m, &p).unwrap();
        let rel = (s.mean_time - delta * delta).abs() / (delta * delta);
        assert!(rel <= 0.05, "mean exit time at delta {delta}: {:.2}% off", 100.0 * rel);
    }
    lines.push("exit times within 5% of delta^2".to_string());

    // Cubic slow increment over barrier: the remainder ratio shrinks.
    let mg = model("gaussian_full");
    let mut thirds = Vec::new();
    for (k, delta) in [0.2, 0.1, 0.05].into_iter().enumerate() {
        let mut p = ExitParams::new(1.0, delta, 0.0);
        p.n_paths = n;
        p.master_seed = 20_260_108 + k as u64;
        let s = excursion_exit_stats(&mg, &p).unwrap();
        thirds.push(s.third_abs_over_delta);
    }
    assert!(
        thirds[0] > thirds[1] && thirds[1] > thirds[2],
        "cubic remainder ratio not decreasing: {thirds:?}"
    );
    lines.push(format!(
        "E|dY|^3/delta decreasing: {:.2e} > {:.2e} > {:.2e}",
        thirds[0], thirds[1], thirds[2]
    ));
    println!("c03 exit statistics: pass ({})", lines.join("; "));
}

#[test]
fn c04_boundary_increment_limits() {
    let m = model("gaussian_full");
    let mut p = ExcursionScheduleParams::from_gamma(Regime::Longtime, vec![0.05, 0.035], 0.48, 1);
    p.n_paths = 70_000;
    p.master_seed = 20_260_110;
    let table = boundary_increment_limits(&m, &p).unwrap();
    let last = table.rows.last().unwrap();
    let rd = (last.mean_dz_over_delta[0] - SQRT_PI).abs() / SQRT_PI;
    let rc = (last.dzdz_over_delta[0] - SQRT_PI).abs() / SQRT_PI;
    assert!(rd <= 0.10, "excursion drift per barrier {:.4} is {:.1}% off sqrt(pi)",
        last.mean_dz_over_delta[0], 100.0 * rd);
    assert!(rc <= 0.10, "excursion covariance per barrier {:.4} is {:.1}% off sqrt(pi)",
        last.dzdz_over_delta[0], 100.0 * rc);
    println!(
        "c04 boundary increment limits: pass (drift {:.4} [{:.1}% off], covariance {:.4} [{:.1}% off] at eps {})",
        last.mean_dz_over_delta[0],
        100.0 * rd,
        last.dzdz_over_delta[0],
        100.0 * rc,
        last.epsilon
    );
}

/// Shared KS ladder protocol: monotone within 2 floors, small final
/// distance, self-comparison at the sampling noise floor.
fn ks_protocol(
    m: &Model,
    regime: Regime,
    eps: Vec<f64>,
    obs: Observable,
    final_tol: f64,
    seed: u64,
) -> (f64, f64, f64) {
    let mut p = MarginalCompareParams::new(1.0, 1, eps);
    p.n_prelimit = 10_000;
    p.n_limit = 20_000;
    p.observable = obs;
    p.master_seed = seed;
    let t = compare_marginals(m, regime, &p).unwrap();
    for w in t.rows.windows(2) {
        assert!(
            w[1].d_stat <= w[0].d_stat + 2.0 * w[0].floor.max(w[1].floor),
            "distances not monotone within 2 floors: {:?}",
            t.rows.iter().map(|r| r.d_stat).collect::<Vec<_>>()
        );
    }
    let last = t.rows.last().unwrap();
    assert!(
        last.d_stat <= final_tol,
        "final distance {:.4} above {final_tol}",
        last.d_stat
    );
    assert!(
        t.limit_self_d <= 1.25 * t.limit_self_floor,
        "self comparison {:.4} above floor {:.4}",
        t.limit_self_d,
        t.limit_self_floor
    );
    (last.d_stat, t.limit_self_d, t.limit_self_floor)
}

#[test]
fn c05_diffusive_marginal_convergence() {
    let m = model("gaussian_diffusion");
    let (d, sd, floor) = ks_protocol(
        &m,
        Regime::DeviationDiffusive,
        vec![0.1, 0.05, 0.025],
        Observable::Slow(0),
        0.06,
        20_260_111,
    );
    println!(
        "c05 diffusive marginal convergence: pass (final KS {d:.4} <= 0.06, self {sd:.4} at floor {floor:.4})"
    );
}

#[test]
fn c06_drift_marginal_convergence_and_mean() {
    let m = model("gaussian_drift");
    let (d, sd, floor) = ks_protocol(
        &m,
        Regime::DeviationDrift,
        vec![0.1, 0.05, 0.025],
        Observable::Slow(0),
        0.06,
        20_260_112,
    );

    // Limit mean oracle: drift quadrature times expected local time.
    let avg = InterfaceAverager::new(&m, AveragingParams::default()).unwrap();
    let lp = {
        let mut lp = LimitParams::new(1.0, 1);
        lp.n_record = 4;
        lp
    };
    let flow = FlowTable::for_params(&m, &lp).unwrap();
    let finals = par_map_paths(10_000, 20_260_113, 1, |i, s| {
        build_deviation_limit(&m, &avg, &flow, DeviationKind::Drift, &lp, s, i)
            .unwrap()
            .final_zeta()[0]
    });
    let (mean, _) = mean_stderr(&finals).unwrap();
    let rel = (mean - SQRT_2).abs() / SQRT_2;
    assert!(rel <= 0.05, "drift limit mean {mean:.4} is {:.1}% off sqrt(2)", 100.0 * rel);
    println!(
        "c06 drift marginal convergence and mean: pass (final KS {d:.4} <= 0.06, self {sd:.4} at floor {floor:.4}, mean {mean:.4} vs sqrt(2))"
    );
}

#[test]
fn c07_longtime_marginals_and_cantor_support() {
    let m = model("gaussian_full");
    // Prelimit cost scales like 1/eps^4 here, so the ladder stops at 0.1.
    let (dx, _, _) = ks_protocol(
        &m,
        Regime::Longtime,
        vec![0.2, 0.15, 0.1],
        Observable::Fast,
        0.08,
        20_260_114,
    );
    let (dy, _, _) = ks_protocol(
        &m,
        Regime::Longtime,
        vec![0.2, 0.15, 0.1],
        Observable::Slow(0),
        0.08,
        20_260_115,
    );

    // Support of the slow motion: increments vanish off the interface
    // band on every recorded step, and band occupation scales linearly.
    let dt = 2e-4;
    let mut lp = LimitParams::new(1.0, 1);
    lp.dt = dt;
    lp.n_record = (1.0 / dt) as usize;
    let avg = InterfaceAverager::new(&m, AveragingParams::default()).unwrap();
    let band = default_band(dt);
    let recs = par_map_paths(200, 20_260_116, 1, |i, s| {
        build_longtime_limit(&m, &avg, &lp, s, i).unwrap()
    });
    let (mut off, mut off_zero) = (0u64, 0u64);
    let bands: Vec<f64> = (1..=4).map(|k| k as f64 * band).collect();
    let mut fracs = vec![0.0; bands.len()];
    for rec in &recs {
        for j in 0..rec.n_points() - 1 {
            if rec.x[j].abs() >= band && rec.x[j + 1].abs() >= band {
                off += 1;
                if rec.zeta_at(j) == rec.zeta_at(j + 1) {
                    off_zero += 1;
                }
            }
        }
        let occ = nullrec::excursions::occupation_times(&rec.x, dt, &bands);
        for (k, o) in occ.iter().enumerate() {
            fracs[k] += o / recs.len() as f64;
        }
    }
    assert_eq!(off_zero, off, "slow increments found off the interface band");
    let (_, _, r2) = nullrec::stats::linear_fit(&bands, &fracs).unwrap();
    assert!(r2 >= 0.95, "occupation fraction vs band width fit r2 {r2:.3}");
    println!(
        "c07 longtime marginals and cantor support: pass (KS fast {dx:.4}, slow {dy:.4} <= 0.08; {off} off-band steps all flat; occupation r2 {r2:.3})"
    );
}

#[test]
fn c08_martingale_residuals_and_control() {
    let cases: [(&str, Option<DeviationKind>); 3] = [
        ("gaussian_diffusion", Some(DeviationKind::Diffusive)),
        ("gaussian_drift", Some(DeviationKind::Drift)),
        ("gaussian_full", None),
    ];
    let mut summary = Vec::new();
    for (k, (name, kind)) in cases.into_iter().enumerate() {
        let m = model(name);
        let mut p = MartingaleParams::new(1.0, 1);
        p.master_seed = 20_260_117 + k as u64;
        let rep = match kind {
            Some(kind) => validate_deviation_martingale(&m, kind, &p),
            None => validate_longtime_martingale(&m, &p),
        }
        .unwrap();
        assert!(
            rep.rows.len() >= 5,
            "{name}: only {} gluing test functions",
            rep.rows.len()
        );
        for row in &rep.rows {
            assert!(
                row.z.abs() <= 3.0,
                "{name}/{}: residual at {:.1} se",
                row.name,
                row.z
            );
        }
        assert!(
            rep.control.z.abs() > 5.0,
            "{name}: control residual only {:.1} se (no power)",
            rep.control.z
        );
        let worst = rep
            .rows
            .iter()
            .map(|r| r.z.abs())
            .fold(0.0f64, f64::max);
        summary.push(format!(
            "{name}: {} fns, worst {worst:.2} se, control {:.0} se",
            rep.rows.len(),
            rep.control.z.abs()
        ));
    }
    println!("c08 martingale residuals and control: pass ({})", summary.join("; "));
}

#[test]
fn c09_tightness_and_integral_scaling() {
    let m = model("gaussian_diffusion");
    let p = TightnessParams::new(1.0, 1);
    let rep = check_tightness_moments(&m, Regime::DeviationDiffusive, &p).unwrap();
    assert!(
        rep.slope >= 1.5,
        "p = 8 structure function exponent {:.2} below 1.5",
        rep.slope
    );

    let ip = IntegralBoundParams::new(1);
    let ib = check_integral_functional_bound(&m, PsiKind::Indicator, &ip).unwrap();
    let dev = (ib.eps_slope - 1.0).abs();
    assert!(
        dev <= 0.3,
        "integral functional ratio drifts in eps: slope {:.2}",
        ib.eps_slope
    );
    println!(
        "c09 tightness and integral scaling: pass (exponent {:.2} >= 1.5, eps slope {:.2} in 1 +- 0.3)",
        rep.slope, ib.eps_slope
    );
}

#[test]
fn c10_deterministic_csv_outputs() {
    let bin = env!("CARGO_BIN_EXE_nullrec");
    let root: std::path::PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", ".."].iter().collect();
    let cfg = root.join("configs/quick_smoke.toml");
    let tmp = tempfile::tempdir().unwrap();
    let (o1, o3) = (tmp.path().join("w1"), tmp.path().join("w3"));
    for (out, workers) in [(&o1, "1"), (&o3, "3")] {
        let status = Command::new(bin)
            .args(["run", cfg.to_str().unwrap(), "--workers", workers, "--out"])
            .arg(out)
            .status()
            .unwrap();
        assert!(status.success(), "run with {workers} workers failed");
    }
    let mut compared = 0;
    for entry in std::fs::read_dir(&o1).unwrap() {
        let name = entry.unwrap().file_name();
        if std::path::Path::new(&name)
            .extension()
            .is_some_and(|e| e == "csv")
        {
            let a = std::fs::read(o1.join(&name)).unwrap();
            let b = std::fs::read(o3.join(&name)).unwrap();
            assert_eq!(a, b, "{name:?} differs between worker counts");
            compared += 1;
        }
    }
    assert!(compared >= 4, "only {compared} CSV files compared");
    println!(
        "c10 deterministic csv outputs: pass ({compared} CSV files byte-identical across 1 and 3 workers)"
    );
}
