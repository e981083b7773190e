import json
import math

import pytest

from multicusum.cli import main
from multicusum.io import read_csv


def run(*args):
    return main([str(a) for a in args])


def test_simulate_is_byte_reproducible(tmp_path):
    args = ["simulate", "--model", "constant:1", "--n", "2", "--tau", "0,inf", "--dt", "0.001",
            "--horizon", "50", "--seed", "7"]
    assert run(*args, "--out", tmp_path / "a") == 0
    assert run(*args, "--out", tmp_path / "b") == 0
    for name in ("paths.csv", "trace.csv"):
        a, b = (tmp_path / "a" / name).read_bytes(), (tmp_path / "b" / name).read_bytes()
        assert a == b
        assert a.startswith(b"# config_hash=") and b"seed=7" in a.splitlines()[0]
    assert sorted(p.name for p in (tmp_path / "a").iterdir()) == ["paths.csv", "trace.csv"]
    assert len(read_csv(tmp_path / "a" / "paths.csv")) == 50_001


def test_rotational_needs_two_sensors(tmp_path, capsys):
    assert run("simulate", "--model", "rotational", "--n", "3", "--tau", "0,inf,inf", "--out", tmp_path) == 1
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "ValueError" and "n_sensors == 2" in err["message"]


def test_bad_config_file(tmp_path, capsys):
    bad = tmp_path / "c.json"
    bad.write_text("{not json")
    assert run("simulate", "--config", bad, "--out", tmp_path) == 1
    assert json.loads(capsys.readouterr().err)["error"] == "UsageError"


def test_unwritable_output(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert run("calibrate", "--gamma", "5", "--out", blocker / "sub") == 1
    assert "error" in json.loads(capsys.readouterr().err)


def test_config_file_with_flag_override(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"gamma": 1000.0, "n": 2, "method": "asymptotic", "seed": 3}))
    assert run("calibrate", "--config", cfg, "--out", tmp_path / "o", "--n", "4") == 0
    out = json.loads((tmp_path / "o" / "calibration.json").read_text())
    assert out["result"]["threshold"] == pytest.approx(math.log(4000))
    assert out["provenance"]["seed"] == 3 and len(out["provenance"]["config_hash"]) == 16


def test_calibrate_exact(tmp_path, capsys):
    assert run("calibrate", "--gamma", repr(math.e - 2), "--out", tmp_path) == 0
    res = json.loads(capsys.readouterr().out)
    assert res["threshold"] == pytest.approx(1.0, abs=1e-9) and res["method"] == "ExactOneSensor"


def test_mc_false_alarm_and_report_without_pde(tmp_path, capsys):
    assert run("mc", "--experiment", "false_alarm", "--n", "2", "--threshold", "4", "--dt", "0.1",
               "--replications", "2000", "--out", tmp_path / "fa") == 0
    rows = read_csv(tmp_path / "fa" / "estimates.csv")
    assert list(rows[0]) == ["scenario_id", "gamma", "N", "threshold", "mean", "se", "reps", "censored"]
    assert float(rows[0]["mean"]) == pytest.approx(25.55, rel=0.1)
    assert run("report", tmp_path) == 0
    text = capsys.readouterr().out
    assert "PDE results: absent" in text
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["cross_validation"][0]["fd_gamma"] is None


def test_single_sensor_gap_column_near_zero(tmp_path):
    for g in (20, 100):
        assert run("mc", "--experiment", "delay", "--n", "1", "--gamma", g, "--dt", "0.002",
                   "--replications", "4000", "--out", tmp_path / f"d{g}") == 0
    assert run("report", "--out", tmp_path) == 0
    rep = json.loads((tmp_path / "report.json").read_text())
    assert len(rep["gap_table"]) == 2
    for row in rep["gap_table"]:
        assert row["N"] == 1 and abs(row["gap"]) < 3 * row["gap_se"]


def test_pde_then_report_cross_table(tmp_path):
    assert run("pde", "--epsilons", "0.25,0.2", "--thresholds", "4", "--product-epsilons", "0.25",
               "--dump-field", "true", "--out", tmp_path / "pde") == 0
    rows = read_csv(tmp_path / "pde" / "sweep.csv")
    assert list(rows[0]) == ["problem", "epsilon", "n_cells", "corner", "asymptote", "rel_err"]
    assert len(rows) == 4
    assert (tmp_path / "pde" / "field_MeanExitNoChange.csv").exists()
    assert run("mc", "--experiment", "false_alarm", "--n", "2", "--threshold", "4", "--dt", "0.1",
               "--replications", "2000", "--out", tmp_path / "fa") == 0
    assert run("report", tmp_path) == 0
    rep = json.loads((tmp_path / "report.json").read_text())
    row = rep["cross_validation"][0]
    assert rep["pde_present"] and row["fd_gamma"] == pytest.approx(25.55, rel=1e-3)
    assert all(row["agree"].values())


def test_equalizer_command(tmp_path):
    assert run("mc", "--experiment", "equalizer", "--n", "2", "--threshold", "2", "--dt", "0.01",
               "--replications", "1000", "--out", tmp_path) == 0
    summary = json.loads((tmp_path / "mc_summary.json").read_text())
    assert len(summary["equalizer"]["pairs"]) == 1
    assert len(read_csv(tmp_path / "estimates.csv")) == 2


def test_report_missing_directory(tmp_path):
    assert run("report", tmp_path / "nope") == 1
