import json

import pytest
import yaml

from singsde.cli import main
from singsde.scenarios import SCENARIOS, ConfigError, bundled_config_path, run_config, validate_config

SMALL_GBM = {
    "scenario": "gbm-em-rate",
    "seed": 99,
    "params": {"paths": 2500, "levels": [3, 4, 5, 6]},
    "assertions": [{"id": "rate", "metric": "slope", "min": 0.4, "max": 0.6}],
}


def _write(tmp_path, cfg, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(cfg))
    return str(path)


def test_bundled_configs_validate():
    for name in SCENARIOS:
        assert bundled_config_path(name).exists()
        validate_config(yaml.safe_load(bundled_config_path(name).read_text()))


@pytest.mark.parametrize("mutate", [
    lambda c: c["params"].update(levels=[]),
    lambda c: c.update(assertions=[]),
    lambda c: c["assertions"][0].update(metric="nonsense"),
    lambda c: c.update(scenario="no-such-scenario"),
    lambda c: c.update(seed=-1),
    lambda c: c["assertions"].append(dict(c["assertions"][0])),
], ids=["empty-schedule", "no-assertions", "unknown-metric", "unknown-scenario", "bad-seed", "duplicate-id"])
def test_invalid_configs_exit_2(tmp_path, mutate):
    cfg = json.loads(json.dumps(SMALL_GBM))
    mutate(cfg)
    with pytest.raises(ConfigError):
        validate_config(cfg)
    assert main(["validate", _write(tmp_path, cfg)]) == 2
    assert main(["run", _write(tmp_path, cfg), "--out", str(tmp_path / "o")]) == 2


def test_unknown_field_rejected(tmp_path):
    cfg = {"scenario": "stability-linear", "seed": 1, "params": {"drift": {"name": "mystery"}},
           "assertions": [{"id": "a", "metric": "slope_m1", "min": 0}]}
    assert main(["validate", _write(tmp_path, cfg)]) == 2


def test_run_gbm_small(tmp_path, capsys):
    assert main(["run", _write(tmp_path, SMALL_GBM), "--out", str(tmp_path / "o"), "--dat"]) == 0
    summary = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert summary["passed"] and 0.4 <= summary["metrics"]["slope"] <= 0.6
    assert (tmp_path / "o" / "em_rate.dat").exists()
    assert "PASS rate" in capsys.readouterr().out


def test_failed_assertion_exit_1(tmp_path):
    cfg = json.loads(json.dumps(SMALL_GBM))
    cfg["assertions"][0].update(min=5.0, max=6.0)
    assert main(["run", _write(tmp_path, cfg), "--out", str(tmp_path / "o")]) == 1


def test_rerun_and_worker_count_identical(tmp_path, monkeypatch):
    outs = []
    for i, workers in enumerate(("1", "3", "3")):
        monkeypatch.setenv("SINGSDE_WORKERS", workers)
        d = tmp_path / f"o{i}"
        run_config(SMALL_GBM, out_dir=d, workers=int(workers))
        outs.append(((d / "em_rate.csv").read_bytes(), (d / "summary.json").read_bytes()))
    assert outs[0] == outs[1] == outs[2]


def test_seed_override(tmp_path, monkeypatch):
    a = run_config(SMALL_GBM, seed=5).metrics["slope"]
    monkeypatch.setenv("SINGSDE_SEED", "5")
    assert run_config(SMALL_GBM).metrics["slope"] == a
    assert run_config(SMALL_GBM, seed=6).metrics["slope"] != a


def test_list_and_describe(capsys):
    assert main(["list-scenarios"]) == 0
    out = capsys.readouterr().out
    assert all(name in out for name in SCENARIOS)
    assert main(["describe", "two-step", "--schema"]) == 0
    out = capsys.readouterr().out
    assert "hfn_constant" in out and "parameter schema" in out
    assert main(["describe", "nope"]) == 2
