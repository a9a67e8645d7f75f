import json

import numpy as np
import pytest

from qpiston.harness.cli import main
from qpiston.harness.io import read_table

SMALL = "K = 6\nT = 0.05\ndt = 1e-4\nauto_dt = false\npressure_ratio = 1.1\n"


@pytest.fixture
def small_config(tmp_path):
    path = tmp_path / "small.toml"
    path.write_text(SMALL)
    return path


def test_simulate_is_bitwise_deterministic(tmp_path, small_config):
    for run in ("a", "b"):
        assert main(["simulate", "--config", str(small_config), "--out", str(tmp_path / run)]) == 0
    a = (tmp_path / "a" / "trajectory.csv").read_bytes()
    assert a == (tmp_path / "b" / "trajectory.csv").read_bytes()
    cols, meta = read_table(tmp_path / "a" / "trajectory.csv")
    assert {"t", "L", "V", "U", "P", "W_fric", "purity", "pop_1"} <= set(cols)
    assert json.loads(meta["params"])["K"] == 6
    assert (tmp_path / "a" / "final_state.txt").read_text().startswith("# pure K=6")


def test_flags_override_config(tmp_path, small_config):
    assert main(["simulate", "--config", str(small_config), "--out", str(tmp_path), "--k", "4", "--dt", "5e-5"]) == 0
    cols, meta = read_table(tmp_path / "trajectory.csv")
    params = json.loads(meta["params"])
    assert params["K"] == 4 and params["dt"] == 5e-5
    assert "pop_4" in cols and "pop_5" not in cols


def test_validation_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text("M = -1\n")
    assert main(["simulate", "--config", str(bad), "--out", str(tmp_path)]) == 2
    assert capsys.readouterr().err.startswith("configuration: M:")


def test_wall_crash_exit_code(tmp_path, capsys):
    cfg = tmp_path / "crash.toml"
    cfg.write_text("K = 4\nT = 2.0\ndt = 1e-3\nauto_dt = false\n")
    code = main(["simulate", "--config", str(cfg), "--out", str(tmp_path), "--mode", "constant_velocity",
                 "--velocity", "-1"])
    assert code == 4
    assert capsys.readouterr().err.startswith("wall-crash:")


def test_sweep_subcommand(tmp_path, small_config):
    assert main(["sweep", "--config", str(small_config), "--out", str(tmp_path), "--values", "0.9,1.1"]) == 0
    cols, meta = read_table(tmp_path / "sweep.csv")
    assert np.allclose(cols["pressure_ratio"], [0.9, 1.1])
    assert "figure" in meta


def test_scenario_with_plots(tmp_path, small_config):
    assert main(["scenario", "mass_regimes", "--config", str(small_config), "--out", str(tmp_path), "--plot"]) == 0
    files = sorted(p.name for p in (tmp_path / "mass_regimes").iterdir())
    assert "summary.csv" in files and any(f.endswith(".png") for f in files)
    for f in (tmp_path / "mass_regimes").glob("*.csv"):
        assert "# figure: " in f.read_text()


def test_jarzynski_subcommand(tmp_path, small_config):
    assert main(["jarzynski", "--config", str(small_config), "--out", str(tmp_path)]) == 0
    cols, meta = read_table(tmp_path / "thermo.csv")
    assert np.max(np.abs(cols["jarzynski_difference"])) < 1e-3
    assert "# figure: " in (tmp_path / "work_distribution_T.csv").read_text()


def test_convergence_subcommand(tmp_path, small_config):
    assert main(["convergence", "--config", str(small_config), "--out", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "convergence.json").read_text())
    assert report
