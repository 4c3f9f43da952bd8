import json
import logging
import subprocess
import sys

import pytest

from gpsfuse import cli


def run(argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    d = tmp_path_factory.mktemp("sim")
    assert run(["simulate", "--duration", 20, "--shape", "figure-eight", "--seed", 3, "--out", d]) == 0
    return d


def test_simulate_writes_files(dataset):
    for name in ("imu.csv", "gps.csv", "odom.csv", "truth.csv", "scenario.json"):
        assert (dataset / name).exists()
    meta = json.loads((dataset / "scenario.json").read_text())
    assert meta["seed"] == 3 and meta["config"]["trajectory"]["duration"] == 20.0


def test_run_evaluate_round_trip(dataset, tmp_path):
    out, traj = tmp_path / "r.json", tmp_path / "traj.csv"
    rc = run(["run", "--imu", dataset / "imu.csv", "--gps", dataset / "gps.csv",
              "--odom", dataset / "odom.csv", "--truth", dataset / "truth.csv",
              "--out", out, "--trajectory-out", traj, "--states-out", tmp_path / "s.csv"])
    assert rc == 0
    rep = json.loads(out.read_text())
    assert rep["status"] == "ok" and rep["ate"]["mode"] == "raw-global"
    assert rep["ate"]["rmse"] < 0.4
    assert run(["evaluate", "--estimate", traj, "--truth", dataset / "truth.csv",
                "--out", tmp_path / "e.json"]) == 0
    ev = json.loads((tmp_path / "e.json").read_text())
    # trajectory in G, truth in W: the 4-DoF alignment absorbs the frame
    assert ev["mode"] == "aligned-4dof" and ev["rmse"] < 0.4


def test_geodetic_dataset(tmp_path):
    d = tmp_path / "geo"
    assert run(["simulate", "--duration", 10, "--seed", 1, "--geodetic", "--out", d]) == 0
    assert (d / "gps.csv").read_text().startswith("t,lat,lon,alt")
    assert run(["run", "--imu", d / "imu.csv", "--gps", d / "gps.csv", "--odom", d / "odom.csv",
                "--truth", d / "truth.csv", "--out", tmp_path / "r.json"]) == 0


def test_missing_file_returns_2(tmp_path, capsys):
    rc = run(["evaluate", "--estimate", tmp_path / "nope.csv", "--truth", tmp_path / "nope.csv"])
    assert rc == 2
    assert "error" in capsys.readouterr().err


def test_unknown_command_exits_nonzero():
    with pytest.raises(SystemExit) as e:
        run(["frobnicate"])
    assert e.value.code != 0


def test_config_file_overrides_flags(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text('dropout = "none"\n[trajectory]\nduration = 8.0\nshape = "straight"\n')
    d = tmp_path / "o"
    assert run(["simulate", "--duration", 30, "--shape", "loop", "--config", cfg, "--out", d]) == 0
    meta = json.loads((d / "scenario.json").read_text())
    assert meta["config"]["trajectory"]["duration"] == 8.0
    assert meta["config"]["trajectory"]["shape"] == "straight"


def test_scenario_run_and_events(tmp_path):
    out, ev = tmp_path / "r.json", tmp_path / "ev.jsonl"
    rc = run(["run", "--duration", 15, "--seeds", 5, "--out", out, "--events", ev,
              "--plot-dir", tmp_path / "plots"])
    assert rc == 0
    rep = json.loads(out.read_text())
    assert [r["seed"] for r in rep["repetitions"]] == [5]
    kinds = [json.loads(line)["event"] for line in ev.read_text().splitlines()]
    assert kinds[0] == "svd_init"
    assert any((tmp_path / "plots").iterdir())


def test_log_level_env(monkeypatch):
    monkeypatch.setenv(cli.LOG_ENV, "debug")
    root = logging.getLogger()
    saved = list(root.handlers), root.level
    root.handlers.clear()
    try:
        cli._setup_logging()
        assert root.level == logging.DEBUG
    finally:
        root.handlers[:] = saved[0]
        root.setLevel(saved[1])


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "gpsfuse", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "simulate" in r.stdout
