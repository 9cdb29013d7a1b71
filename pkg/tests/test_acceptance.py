"""End-to-end acceptance checks, one per criterion.

Each test prints a ``PASS``/``FAIL`` line with the measured quantities and
runtime, then asserts.  Most criteria run the bundled scenario config, so the
same numbers are reproducible with ``singsde run <scenario>``.
"""
import time

import numpy as np
import pytest
import yaml

from singsde.mckean_vlasov import EmpiricalMeasure, wasserstein, wasserstein_brute_force
from singsde.scenarios import bundled_config_path, run_config

pytestmark = pytest.mark.slow


@pytest.fixture
def report(capsys):
    def emit(number, title, ok, detail, elapsed, limit):
        ok = bool(ok) and elapsed < limit
        line = f"{'PASS' if ok else 'FAIL'} criterion {number:>2} {title}: {detail} [{elapsed:.1f}s / {limit:.0f}s]"
        with capsys.disabled():
            print("\n" + line)
        assert ok, line
    return emit


def _bundled(name, **override):
    cfg = yaml.safe_load(bundled_config_path(name).read_text())
    cfg.pop("output", None)
    cfg.update(override)
    return cfg


def _run(name, **kw):
    t0 = time.perf_counter()
    res = run_config(_bundled(name), **kw)
    return res, time.perf_counter() - t0


def _failed(res):
    return "all assertions hold" if res.passed else "failed " + ", ".join(res.failed_ids)


def test_criterion_01_em_rate(report):
    res, dt = _run("gbm-em-rate")
    m = res.metrics
    ok = 0.4 <= m["slope"] <= 0.6 and m["r2"] >= 0.98
    report(1, "EM strong rate", ok, f"slope {m['slope']:.3f}, R^2 {m['r2']:.4f}", dt, 60)


def test_criterion_02_correction_matrices(report):
    res, dt = _run("correction-matrices")
    m = res.metrics
    ok = m["s_within"] and m["c_within"]
    report(2, "correction matrices", ok, f"max |s|/se {m['max_s_z']:.2f}, max |c - I/2|/se {m['max_c_z']:.2f}", dt, 120)


def test_criterion_03_wong_zakai(report):
    res, dt = _run("wong-zakai-limit")
    m = res.metrics
    ok = m["strictly_decreasing"] and m["final_mean_z"] <= 3 and m["envelope_ok"]
    report(3, "Wong-Zakai limit", ok,
           f"decreasing {m['strictly_decreasing']}, final mean z {m['final_mean_z']:.2g}, envelope {m['envelope_ok']}",
           dt, 180)


def test_criterion_04_two_step(report):
    res, dt = _run("two-step")
    m = res.metrics
    ok = m["decreasing"] and m["hfn_satisfied"]
    report(4, "two-step scheme", ok,
           f"decreasing {m['decreasing']}, hfn {m['hfn_satisfied']}, clamp events {m['clamp_events']}", dt, 300)


def test_criterion_05_negative_norm(report):
    res, dt = _run("negative-norm")
    m = res.metrics
    ok = m["decreasing"] and -0.7 <= m["slope_k"] <= -0.3 and m["lp_spread"] <= 1.01 and m["error_spread"] >= 2
    report(5, "negative-norm stability", ok,
           f"slope in k {m['slope_k']:.3f}, slope vs W^-1,p {m['negative_norm_slope']:.3f}, "
           f"L^p spread {m['lp_spread']:.4f}, error spread {m['error_spread']:.2f}", dt, 180)


def test_criterion_06_stability_linear(report):
    res, dt = _run("stability-linear")
    m = res.metrics
    ok = all(0.8 <= m[k] <= 1.2 for k in ("slope_m1", "slope_m2"))
    report(6, "stability linearity", ok, f"slopes m=1 {m['slope_m1']:.3f}, m=2 {m['slope_m2']:.3f}; {_failed(res)}",
           dt, 120)


def test_criterion_07_mkv_oracle(report):
    res, dt = _run("mkv-fixed-point")
    m = res.metrics
    ok = m["converged"] and m["mean_max_z"] <= 3 and m["variance_max_z"] <= 3
    report(7, "McKean-Vlasov oracle", ok,
           f"iterations {m['iterations']}, max mean z {m['mean_max_z']:.2f}, max variance z {m['variance_max_z']:.2f}",
           dt, 120)


def test_criterion_08_chaos(report):
    res, dt = _run("mkv-chaos")
    m = res.metrics
    report(8, "propagation of chaos", m["slope"] <= -0.3, f"slope {m['slope']:.3f}, R^2 {m['r2']:.3f}", dt, 180)


def test_criterion_09_wasserstein_exact(report):
    g = np.random.default_rng(20240909)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(200):
        N, d = int(g.integers(1, 7)), int(g.integers(1, 4))
        a, b = EmpiricalMeasure(g.normal(size=(N, d))), EmpiricalMeasure(g.normal(size=(N, d)))
        for m in (1, 2):
            worst = max(worst, abs(wasserstein(a, b, m, "exact-assignment") - wasserstein_brute_force(a, b, m)))
    dt = time.perf_counter() - t0
    report(9, "Wasserstein exactness", worst <= 1e-12, f"max deviation {worst:.2e} over 400 comparisons", dt, 30)


def test_criterion_10_convolution_bound(report):
    res, dt = _run("convolution-bound")
    m = res.metrics
    report(10, "convolution bound", m["max_over_median"] <= 3.0,
           f"constant {m['median_ratio']:.3f}, max/median {m['max_over_median']:.3f}", dt, 60)


def test_criterion_11_functionals(report):
    res, dt = _run("khasminskii")
    m = res.metrics
    ok = m["constant_rel_error"] <= 1e-12 and m["envelope_finite"]
    report(11, "functional estimates", ok,
           f"constant case rel error {m['constant_rel_error']:.1e}, envelope C {m['envelope_constant']:.3f}", dt, 60)


@pytest.mark.parametrize("name", ["gbm-em-rate", "correction-matrices"])
def test_criterion_12_determinism(report, tmp_path, name):
    t0 = time.perf_counter()
    blobs = []
    for workers in (1, 4):
        out = tmp_path / f"w{workers}"
        run_config(_bundled(name), out_dir=out, workers=workers)
        blobs.append({p.name: p.read_bytes() for p in sorted(out.glob("*.csv"))})
    dt = time.perf_counter() - t0
    same = blobs[0] == blobs[1] and len(blobs[0]) > 0
    report(12, f"determinism ({name})", same, f"{len(blobs[0])} CSV file(s) byte-identical for 1 vs 4 workers",
           dt, 600)
