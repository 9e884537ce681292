"""Smoke test for the nullrec_py bindings.

Prefers the pip-installed module; if absent, loads the cargo-built
cdylib straight from target/release. Exercises each exported function
once with cheap parameters and checks a few closed-form values.

Run: python3 python/smoke_test.py
"""

import math
import sys
from pathlib import Path

WORKSPACE = Path(__file__).resolve().parent.parent


def load_module():
    try:
        import nullrec_py

        return nullrec_py
    except ImportError:
        pass
    import importlib.util

    for stem in ("libnullrec_py.so", "libnullrec_py.dylib", "nullrec_py.dll"):
        for profile in ("release", "debug"):
            candidate = WORKSPACE / "target" / profile / stem
            if candidate.exists():
                spec = importlib.util.spec_from_file_location("nullrec_py", candidate)
                module = importlib.util.module_from_spec(spec)
                spec.loader.exec_module(module)
                return module
    sys.exit(
        "nullrec_py not installed and no cdylib found; run\n"
        "  pip install --no-build-isolation ./crates/py\n"
        "or\n"
        "  cargo build --release -p nullrec-py --features extension-module"
    )


def check(label, ok):
    if not ok:
        sys.exit(f"FAIL {label}")


def main():
    nr = load_module()
    sqrt_pi = math.sqrt(math.pi)

    check("version", isinstance(nr.version(), str) and nr.version())

    models = dict(nr.list_models())
    check("list_models", {"trivial", "gaussian_full", "two_plus_sin"} <= set(models))

    stats = nr.interface_stats("gaussian_full")
    check("beta=sqrt_pi", abs(stats["beta"][0] - sqrt_pi) < 1e-6)
    check("alpha=sqrt_pi", abs(stats["alpha"][0][0] - sqrt_pi) < 1e-6)
    check("a_limits", abs(stats["a_plus"] - 1.0) < 1e-6 and abs(stats["a_minus"] - 1.0) < 1e-6)

    sim = nr.simulate("trivial", 0.1, 1.0, n_paths=200, dt_factor=0.05, n_record=8, seed=7)
    sim2 = nr.simulate("trivial", 0.1, 1.0, n_paths=200, dt_factor=0.05, n_record=8, seed=7)
    check("simulate deterministic", sim["x"] == sim2["x"] and sim["y"] == sim2["y"])
    check("simulate shape", len(sim["x"]) == 200 and len(sim["times"]) == 8 + 1)
    mean_abs = sum(abs(p[-1]) for p in sim["x"]) / len(sim["x"])
    check("E|X(1)| near sqrt(2/pi)", abs(mean_abs - math.sqrt(2.0 / math.pi)) < 0.15)

    path = nr.simulate("trivial", 1.0, 1.0, n_paths=1, dt_factor=1e-4, n_record=10_000, seed=3)
    xs = path["x"][0]
    band = nr.band_local_time(xs, 1e-4)
    tanaka = nr.tanaka_local_time(xs)
    check("local time estimators agree", abs(band[-1] - tanaka[-1]) < 0.12)

    glued = nr.glued_mean_local_time(1.0, 1.0, 1.0)
    check("glued mean local time", abs(glued - math.sqrt(2.0 / math.pi)) < 1e-12)

    lp = nr.limit_path("gaussian_full", "longtime", 1.0, dt=2e-4, seed=5)
    check("limit_path keys", set(lp) >= {"times", "x", "l", "zeta"})
    check("limit_path lengths", len(lp["times"]) == len(lp["x"]) == len(lp["l"]))
    check("local time nondecreasing", all(b >= a for a, b in zip(lp["l"], lp["l"][1:])))

    d, p = nr.ks_distance([float(i) for i in range(100)], [float(i) for i in range(100)])
    check("ks identical samples", d == 0.0 and p > 0.99)
    d2, _ = nr.ks_distance([0.0] * 50, [1.0] * 50)
    check("ks disjoint samples", d2 == 1.0)

    config = (WORKSPACE / "configs" / "quick_smoke.toml").read_text()
    out = nr.run_experiment_toml(config, workers=1)
    check("run_experiment overall", out["overall"] == "pass")
    check("run_experiment rows", len(out["rows"]) > 10)
    check("run_experiment row verdicts", all(row[-1] in ("pass", "fail", "inconclusive") for row in out["rows"]))

    print("smoke_test ok:", nr.version(), f"({len(out['rows'])} harness rows)")


if __name__ == "__main__":
    main()
