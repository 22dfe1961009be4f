import json
import time

import numpy as np
import pytest

from homogspde.cli import main
from homogspde.coefficients import make_constant, make_power
from homogspde.experiments import (
    ConfigError,
    identity_checks,
    make_plan,
    ou_mode_variance,
    parse_config_text,
    resolve_settings,
    run_ensemble,
    run_plan,
    validate_config,
)
from homogspde.integrator import TrajectorySeed
from homogspde.model import ModelConfig, laplacian

SMALL = "n = 1\nm = 9\nN = 32\nT = 0.05\ntrajectories = 4\n"


def test_parse_config_text():
    s = parse_config_text("""
        # comment line
        n = 3
        N = 256      # distinct from n
        eps_grid = 0.4, 0.2 0.1
        dt = auto
        shape = power
        workers = auto
    """)
    assert s == {"n": 3, "N": 256, "eps_grid": (0.4, 0.2, 0.1), "dt": "auto",
                 "shape": "power", "workers": None}
    with pytest.raises(ConfigError, match="unknown key"):
        parse_config_text("bogus = 1")
    with pytest.raises(ConfigError, match="bad value"):
        parse_config_text("m = many")
    with pytest.raises(ConfigError, match="malformed"):
        parse_config_text("m = 3\nm = 5")


def test_flags_override_file_override_defaults():
    s = resolve_settings("power-sweep", {"eps_grid": (0.5, 0.25), "m": 17}, {"m": 9, "seed": None})
    assert s["shape"] == "power" and s["eps_grid"] == (0.5, 0.25) and s["m"] == 9 and s["seed"] == 1
    with pytest.raises(ConfigError):
        resolve_settings("nope")


def test_validate_config_examples():
    v = validate_config(ModelConfig(op=laplacian(0.1, a0=-1.0)), "martingale-check")
    assert any("A*(1)=0 required" in x for x in v)
    v = validate_config(ModelConfig(shape=make_constant(1.0)), "eps-sweep")
    assert any("kappa > 0 required" in x for x in v)
    assert validate_config(ModelConfig(), "eps-sweep") == []
    assert validate_config(ModelConfig(), "martingale-check") == []
    assert validate_config(ModelConfig(shape=make_power(2.0)), "power-sweep") == []
    assert validate_config(ModelConfig(), "ou-control")


def test_plan_validation_rejects_before_simulating(tmp_path):
    s = resolve_settings("eps-sweep", parse_config_text(SMALL + "eps_grid = 0.1 0.2\n"),
                         {"out": str(tmp_path / "x")})
    with pytest.raises(ConfigError, match="strictly decreasing"):
        run_plan(make_plan("eps-sweep", s))
    assert not (tmp_path / "x").exists()
    s = resolve_settings("single-run", parse_config_text(SMALL), {"trajectories": 1})
    with pytest.raises(ConfigError, match="trajectories >= 2"):
        run_plan(make_plan("single-run", s))


def test_identity_checks_all_pass_quickly():
    t = time.perf_counter()
    checks = identity_checks()
    assert time.perf_counter() - t < 1.0
    assert all(c.passed for c in checks), [c.name for c in checks if not c.passed]
    names = {c.name for c in checks}
    assert {"kappa_canonical", "ibp_identity_eps=0.5", "sum_de_sq_n=4",
            "power_coefficient_gamma=3_x=2"} <= names


def test_ou_mode_variance():
    assert ou_mode_variance(1.0, 0.0, 2.0) == 2.0
    assert ou_mode_variance(2.0, -0.1, 0.5) == pytest.approx(4 * (1 - np.exp(-0.1)) / 0.2)


def _read(path):
    return path.read_bytes()


def test_sweep_tables_are_reproducible(tmp_path):
    outs = []
    for k, workers in enumerate((1, 2, 1)):
        d = tmp_path / f"run{k}"
        s = resolve_settings("eps-sweep", parse_config_text(SMALL + "batch_size = 2\n"),
                             {"out": str(d), "workers": workers})
        rec = run_plan(make_plan("eps-sweep", s))
        assert rec.exit_code == 0
        outs.append(d)
    for name in ("ensemble.csv", "scaling.csv"):
        assert _read(outs[0] / name) == _read(outs[1] / name) == _read(outs[2] / name)
    header = (outs[0] / "scaling.csv").read_text().splitlines()[0].split(",")
    assert header[:6] == ["eps", "I", "ci_half", "slope", "r2", "pass"]
    row = (outs[0] / "scaling.csv").read_text().splitlines()[1].split(",")
    assert row[0] == "0.40000000000000002"  # 17 significant digits
    meta = json.loads((outs[0] / "metadata.json").read_text())
    assert meta["plan"]["scenario"] == "eps-sweep" and "duration_s" in meta and "version" in meta


def test_simulate_writes_trajectory_table(tmp_path):
    s = resolve_settings("single-run", parse_config_text(SMALL), {"out": str(tmp_path)})
    rec = run_plan(make_plan("single-run", s))
    lines = (tmp_path / "trajectory_diag.csv").read_text().splitlines()
    assert lines[0].split(",")[:6] == ["time", "l2_sq", "h1_sq", "grad_l1", "grad_l2g", "mean"]
    assert len(lines) - 1 == len(rec.tables["trajectory_diag"].rows)
    assert {line.split(",")[8] for line in lines[1:]} == {"0", "1", "2", "3"}
    ens = (tmp_path / "ensemble.csv").read_text().splitlines()
    assert ens[0].startswith("time,functional,mean,ci_half")


def test_run_ensemble_is_partition_independent():
    cfg = ModelConfig(n=1, m=9, N=32, T=0.02)
    a = run_ensemble(cfg, 3, 5, batch_size=5)
    b = run_ensemble(cfg, 3, 5, batch_size=2, workers=2)
    for x, y in zip(a.completed, b.completed):
        assert x.seed == y.seed
        np.testing.assert_allclose(x.final_state, y.final_state, rtol=1e-12, atol=1e-15)


def test_cli_exit_codes(tmp_path, capsys):
    assert main(["verify", "--out", str(tmp_path / "v")]) == 0
    assert (tmp_path / "v" / "identities.csv").exists()
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("a0 = -1\n")
    assert main(["martingale", "--config", str(cfg), "--out", str(tmp_path / "m")]) == 2
    assert "A*(1)=0" in capsys.readouterr().err
    assert main(["simulate", "--eps", "-1", "--out", str(tmp_path / "s")]) == 2
    assert main(["simulate", "--config", str(tmp_path / "missing.cfg")]) == 2
    # slopes far beyond the power-case step floor: every trajectory is excluded
    code = main(["simulate", "--shape", "power", "--n", "1", "--m", "9", "--N", "32",
                 "--psi0", "0 3000", "--T", "0.01", "--trajectories", "2",
                 "--out", str(tmp_path / "p")])
    assert code == 3
    code = main(["ou-control", "--n", "1", "--m", "9", "--N", "32", "--trajectories", "50",
                 "--out", str(tmp_path / "ou")])
    assert code == 0
    assert (tmp_path / "ou" / "ou_control.csv").read_text().startswith("check_name,computed")
