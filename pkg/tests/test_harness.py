import json
import os
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from tracerhom import cli, config, harness
from tracerhom.effective import EffectiveModel
from tracerhom.field import reference_modes

ROOT = Path(__file__).resolve().parents[1]
SMOKE = ROOT / "configs" / "smoke.toml"


@pytest.fixture(scope="module")
def smoke():
    return config.load(SMOKE)


@pytest.fixture(scope="module")
def smoke_effective():
    return EffectiveModel.constant(np.array([[0.82, -0.41], [-0.41, 0.82]]), (0.0, 0.0))


def test_shipped_configs_parse():
    for f in (ROOT / "configs").glob("*.toml"):
        cfg = config.load(f)
        assert cfg.modes.N == 3


def test_ridge_config_profiles():
    cfg = config.load(ROOT / "configs" / "ridge.toml")
    assert not cfg.modes.is_stationary
    assert cfg.solver.grid_y == (-1.0, -0.5, 0.0, 0.5, 1.0)


@pytest.mark.parametrize("text", [
    "[experiment]\neps_list = [0.1, 0.2]",
    "[experiment]\neps_list = [1.5]",
    "[experiment]\nn_paths = 10",
    "[experiment]\nmetrics = ['energy']",
    "[experiment]\nseed = -1",
    "[experiment]\ncolour = 'red'",
    "[solver]\nbogus = 1",
])
def test_invalid_configs(text):
    with pytest.raises(ValueError):
        config.loads(text)


def test_content_hash(smoke):
    h = smoke.content_hash()
    assert h == config.load(SMOKE).content_hash()
    assert replace(smoke, output_dir="elsewhere").content_hash() == h
    assert replace(smoke, solver=replace(smoke.solver, threads=4)).content_hash() == h
    assert smoke.with_overrides(seed=12).content_hash() != h
    assert json.loads(json.dumps(smoke.to_dict()))["modes"]["k"][2] == [1.0, 1.0]


def test_initial_conditions():
    x = np.array([[0.0, 0.0], [3.0, 0.0]])
    assert np.allclose(harness.initial_condition({"kind": "bump"})(x), [1.0, np.exp(-4.5)])
    assert np.allclose(harness.initial_condition({"kind": "constant", "value": 2})(x), 2.0)
    t = harness.initial_condition({"kind": "tanh", "normal": [2, 0]})(x)
    assert t[0] == 0.5 and t[1] > 0.99
    with pytest.raises(ValueError):
        harness.initial_condition({"kind": "box"})


def test_probe_averages():
    m = reference_modes()
    y = np.zeros((2, 2))
    assert np.allclose(harness.PROBES["a1sq"].average(y, m), 0.25)
    assert np.allclose(harness.PROBES["energy"].average(y, m), 6 * 0.25)
    assert np.allclose(harness.PROBES["w1"].average(y, m), 0.0, atol=1e-14)
    yy = np.array([[1.0, 2.0]])
    assert harness.PROBES["y_only"].average(yy, m)[0] == 3.0


def test_amplitude_free_probe_averages_exactly(smoke):
    t, Ie, Ib = harness.averaging_paths(smoke, 0.4, harness.PROBES["y_only"], 8,
                                        harness.RngStream(0))
    assert np.array_equal(Ie, Ib)
    assert t[0] == 0.0 and Ie.shape == (8, t.size)


def test_convergence_smoke_and_determinism(smoke, smoke_effective, tmp_path):
    a = harness.run_convergence(smoke, smoke_effective, out=str(tmp_path / "a"))
    b = harness.run_convergence(smoke, smoke_effective, out=str(tmp_path / "b"))
    for name in ("report.json", "metrics.csv", "covariance_curve.csv", "endpoints_eps0.4.csv"):
        assert (tmp_path / "a" / "converge" / name).read_bytes() == (tmp_path / "b" / "converge" / name).read_bytes()
    assert set(a.flags) == {"sliced_w1_monotone", "cov_rel_err_monotone"}
    row = a.per_eps[0]
    assert {"cov_rel_err", "cov_rel_err_se", "sliced_w1", "sliced_w1_se"} <= set(row)
    assert len(row["covariance_curve"]) == smoke.solver.n_curve
    rep = json.loads((tmp_path / "a" / "converge" / "report.json").read_text())
    assert rep["provenance"]["config_hash"] == smoke.content_hash()
    assert rep["provenance"]["modes_fingerprint"] == smoke.modes.fingerprint()


def test_scalar_constant_data_has_no_spread(smoke, smoke_effective):
    rep = harness.run_passive_scalar(smoke, {"kind": "constant", "value": 1.0}, smoke_effective,
                                     write=False)
    assert rep["homogeneous"]
    for row in rep["per_eps"]:
        assert row["w1"] == 0.0 and row["max_abs_err_rel"] < 1e-12


def test_scalar_smoke(smoke, smoke_effective, tmp_path):
    rep = harness.run_passive_scalar(smoke, None, smoke_effective, out=str(tmp_path))
    assert len(rep["probes"]) == 9
    assert all((tmp_path / "scalar" / f).exists() for f in ("report.json", "probes.csv"))
    assert all(r["max_abs_err_rel"] < 0.2 for r in rep["per_eps"])


def test_averaging_report(smoke, tmp_path):
    rep = harness.run_averaging_check(smoke, "a1sq", out=str(tmp_path))
    assert [r["eps"] for r in rep["per_eps"]] == list(smoke.eps_list)
    assert (tmp_path / "average" / "sup_diff_a1sq.csv").exists()
    assert all(r["q10"] <= r["median"] <= r["q90"] for r in rep["per_eps"])


def test_cli(tmp_path, capsys):
    assert cli.main(["simulate", "--config", str(SMOKE), "--out", str(tmp_path),
                     "--n-paths", "100"]) == 0
    assert (tmp_path / "simulate" / "eps0.2.csv").exists()
    bad = tmp_path / "bad.toml"
    bad.write_text("[experiment]\nn_paths = 3\n")
    assert cli.main(["converge", "--config", str(bad)]) == 2
    assert "bad configuration" in capsys.readouterr().err
