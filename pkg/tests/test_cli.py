import json

import numpy as np
import pytest

from ivpb.cli import EXIT_CONFIG, EXIT_OK, main


def _write_config(tmp_path, text):
    path = tmp_path / "run.cfg"
    path.write_text(text)
    return str(path)


SMALL = """
grid.cells = 16
velocity.nodes = 12
kinetic.T = 0.05
kinetic.n_samples = 2
kinetic.dt_max = 0.01
"""


def test_unknown_command_rejected(capsys):
    with pytest.raises(SystemExit):
        main(["explode"])


def test_bad_config_exits_2(tmp_path):
    cfg = _write_config(tmp_path, "physics.beta = 2.0")
    assert main(["euler", "--config", cfg, "--out", str(tmp_path / "out")]) == (
        EXIT_CONFIG
    )


def test_odd_nodes_exits_2(tmp_path):
    cfg = _write_config(tmp_path, "velocity.nodes = 15")
    assert main(["euler", "--config", cfg, "--out", str(tmp_path / "out")]) == (
        EXIT_CONFIG
    )


def test_sweep_needs_three_epsilons(tmp_path, capsys):
    cfg = _write_config(tmp_path, SMALL + "kinetic.epsilons = 0.2, 0.1\n")
    out = str(tmp_path / "out")
    assert main(["sweep", "--config", cfg, "--out", out]) == EXIT_CONFIG
    assert "need >= 3 epsilons" in capsys.readouterr().err


def test_sweep_bad_ratio_exits_2(tmp_path, capsys):
    cfg = _write_config(tmp_path, SMALL + "kinetic.epsilons = 0.2, 0.1, 0.04\n")
    out = str(tmp_path / "out")
    assert main(["sweep", "--config", cfg, "--out", out]) == EXIT_CONFIG
    assert "ratio 2" in capsys.readouterr().err


def test_euler_then_cascade_reuses_trajectory(tmp_path):
    cfg = _write_config(tmp_path, SMALL)
    out1 = str(tmp_path / "euler_out")
    assert main(["euler", "--config", cfg, "--out", out1]) == EXIT_OK
    manifest = json.loads((tmp_path / "euler_out" / "manifest.json").read_text())
    assert "euler_trajectory.csv" in manifest["artifacts"]
    assert (tmp_path / "euler_out" / "euler_trajectory.npz").exists()
    assert "grid.cells = 16" in manifest["config"]

    cfg2 = _write_config(
        tmp_path,
        SMALL + f"cascade.trajectory = {out1}/euler_trajectory\n",
    )
    out2 = str(tmp_path / "cascade_out")
    assert main(["cascade", "--config", cfg2, "--out", out2]) == EXIT_OK
    m2 = json.loads((tmp_path / "cascade_out" / "manifest.json").read_text())
    assert len(m2["trajectory_checksum"]) == 64
    assert m2["hydro_leakage"] <= 1e-3
    assert (tmp_path / "cascade_out" / "expansion.npz").exists()


def test_kinetic_snapshots(tmp_path):
    cfg = _write_config(tmp_path, SMALL + "kinetic.epsilons = 0.4, 0.2, 0.1\n")
    out = str(tmp_path / "out")
    assert main(["kinetic", "--config", cfg, "--out", out]) == EXIT_OK
    manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
    for eps in ("0.4", "0.2", "0.1"):
        assert f"kinetic_eps{eps}.npz" in manifest["artifacts"]
        with np.load(tmp_path / "out" / f"kinetic_eps{eps}.npz") as data:
            assert data["F"].shape == (16, 12**3)
            assert np.min(data["F"]) >= -1e-12 * np.max(data["F"])


def test_sweep_artifacts(tmp_path):
    cfg = _write_config(tmp_path, SMALL + "kinetic.epsilons = 0.4, 0.2, 0.1\n")
    out = str(tmp_path / "out")
    assert main(["sweep", "--config", cfg, "--out", out]) == EXIT_OK
    csv_text = (tmp_path / "out" / "sweep.csv").read_text()
    assert csv_text.startswith("epsilon,sup_dev,")
    assert len(csv_text.splitlines()) == 4
    payload = json.loads((tmp_path / "out" / "sweep.json").read_text())
    assert "fits" in payload and "rows" in payload


def test_manifest_records_versions(tmp_path):
    cfg = _write_config(tmp_path, SMALL)
    out = str(tmp_path / "out")
    assert main(["euler", "--config", cfg, "--out", out]) == EXIT_OK
    manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert "numpy" in manifest["versions"]
    assert manifest["versions"]["ivpb"]
    assert manifest["wall_time_s"] >= 0


def test_verify_subcommand(tmp_path, capsys):
    out = str(tmp_path / "out")
    assert main(["verify", "--out", out]) == EXIT_OK
    payload = json.loads((tmp_path / "out" / "verify.json").read_text())
    assert payload["all_passed"] is True
    names = {c["name"] for c in payload["checks"]}
    assert {
        "chi_orthonormality",
        "collision_conservation_fix",
        "L_symmetry",
        "L_coercivity_estimate_positive",
        "electron_series_closed_forms",
        "poisson_manufactured",
        "lyapunov_bracketing",
    } <= names
    printed = capsys.readouterr().out
    assert json.loads(printed)["all_passed"] is True
