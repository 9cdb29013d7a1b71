import json

import numpy as np
import pytest

from singsde.reports import ConvergenceReport, fit_rate


def test_exact_power_law():
    n = np.array([4.0, 8, 16, 32, 64])
    fit = fit_rate(n, 3.0 * n ** -0.5)
    assert fit.slope == pytest.approx(-0.5, abs=1e-12)
    assert fit.r2 == pytest.approx(1.0, abs=1e-12)
    assert np.exp(fit.intercept) == pytest.approx(3.0, rel=1e-12)


def test_constant_values_flat():
    fit = fit_rate([1, 2, 4, 8], [0.3] * 4)
    assert fit.slope == pytest.approx(0.0, abs=1e-12) and fit.r2 == 1.0


def test_noisy_power_law_recovered():
    g = np.random.default_rng(7)
    n = 2.0 ** np.arange(2, 12)
    vals = n ** -1.0 * np.exp(0.05 * g.standard_normal(n.size))
    assert fit_rate(n, vals).slope == pytest.approx(-1.0, abs=0.05)


def test_too_few_rows_rejected():
    with pytest.raises(ValueError):
        fit_rate([1, 2], [1, 2])
    with pytest.raises(ValueError):
        fit_rate([1, 2, 3], [1, 0, -1])


def test_report_outputs(tmp_path):
    rep = ConvergenceReport("n", "error", anchor="demo")
    for n in (2, 4, 8):
        rep.add(n=n, error=1.0 / n, stderr=0.01, ok=True)
    rep.to_csv(tmp_path / "r.csv")
    rep.to_json(tmp_path / "r.json")
    rep.to_dat(tmp_path / "r.dat")
    assert (tmp_path / "r.csv").read_text().splitlines()[0] == "n,error,stderr,ok"
    data = json.loads((tmp_path / "r.json").read_text())
    assert data["fit"]["slope"] == pytest.approx(-1.0)
    assert (tmp_path / "r.dat").read_text().splitlines()[0] == "# n error stderr"
    assert ConvergenceReport("n", "error").fit is None
