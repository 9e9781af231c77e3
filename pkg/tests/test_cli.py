import json
import subprocess
import sys

import pytest
import yaml

from streamkmeans.cli import main, resolve_seed, sweep_jobs

BASE = {
    "schema_version": 1,
    "distribution": {"type": "uniform", "low": 0.0, "high": 1.0},
    "k": 2,
    "schedule": {"policy": "generalized_lloyd", "alpha": 0.7, "beta": 0.8},
    "n_max": 2000,
    "seed": 1,
    "stride": 100,
}


def write_cfg(tmp_path, doc, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(doc))
    return str(path)


def test_run_writes_outputs(tmp_path):
    cfg = write_cfg(tmp_path, BASE)
    out = tmp_path / "r"
    assert main(["run", "--config", cfg, "--out", str(out)]) == 0
    assert {p.name for p in out.iterdir()} == {"trace.csv", "summary.json", "report.json"}
    summary = json.loads((out / "summary.json").read_text())
    assert summary["seed"] == 1 and summary["final_n"] == 2000


def test_run_refuses_overwrite(tmp_path, capsys):
    cfg = write_cfg(tmp_path, BASE)
    out = str(tmp_path / "r")
    assert main(["run", "--config", cfg, "--out", out]) == 0
    assert main(["run", "--config", cfg, "--out", out]) == 1
    assert "--force" in capsys.readouterr().err
    assert main(["run", "--config", cfg, "--out", out, "--force"]) == 0


def test_run_is_reproducible(tmp_path):
    cfg = write_cfg(tmp_path, BASE)
    main(["run", "--config", cfg, "--out", str(tmp_path / "a")])
    main(["run", "--config", cfg, "--out", str(tmp_path / "b")])
    assert (tmp_path / "a" / "trace.csv").read_bytes() == (tmp_path / "b" / "trace.csv").read_bytes()


def test_bad_alpha_is_config_error(tmp_path, capsys):
    doc = {**BASE, "schedule": {"policy": "generalized_lloyd", "alpha": 0.5, "beta": 0.8}}
    assert main(["run", "--config", write_cfg(tmp_path, doc), "--out", str(tmp_path / "r")]) == 1
    assert "2/3 < alpha < beta < 1" in capsys.readouterr().err
    assert not (tmp_path / "r").exists()


def test_config_errors(tmp_path):
    out = str(tmp_path / "r")
    assert main(["run", "--config", str(tmp_path / "missing.yaml"), "--out", out]) == 1
    doc = dict(BASE)
    del doc["schema_version"]
    assert main(["run", "--config", write_cfg(tmp_path, doc), "--out", out]) == 1
    assert main(["run", "--config", write_cfg(tmp_path, {**BASE, "schema_version": 9}), "--out", out]) == 1
    assert main(["run", "--config", write_cfg(tmp_path, {**BASE, "bogus": 1}), "--out", out]) == 1
    assert main(["run", "--config", write_cfg(tmp_path, BASE)]) == 1
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 1


def test_seed_precedence(monkeypatch):
    monkeypatch.delenv("STREAMKMEANS_SEED", raising=False)
    assert resolve_seed(None, 3) == 3
    monkeypatch.setenv("STREAMKMEANS_SEED", "11")
    assert resolve_seed(None, 3) == 11
    assert resolve_seed(5, 3) == 5


def test_seed_flag_reaches_summary(tmp_path, monkeypatch):
    monkeypatch.setenv("STREAMKMEANS_SEED", "11")
    cfg = write_cfg(tmp_path, BASE)
    main(["run", "--config", cfg, "--out", str(tmp_path / "e")])
    main(["run", "--config", cfg, "--out", str(tmp_path / "f"), "--seed", "12", "--stride", "500"])
    assert json.loads((tmp_path / "e" / "summary.json").read_text())["seed"] == 11
    f = json.loads((tmp_path / "f" / "summary.json").read_text())
    assert f["seed"] == 12 and f["config"]["stride"] == 500


def test_check_gradient(tmp_path):
    doc = {"schema_version": 1, "check_gradient": {"configs": 20}}
    assert main(["check-gradient", "--config", write_cfg(tmp_path, doc), "--out", str(tmp_path / "g")]) == 0
    assert json.loads((tmp_path / "g" / "report.json").read_text())["passed"]


def test_check_bounds_reports_stated_violation(tmp_path):
    doc = {"schema_version": 1, "check_bounds": {"r": [0.6931471805599453], "m_max": 500,
                                                  "harmonic_m_max": 50, "pairs": 50, "displacement_n": 500}}
    assert main(["check-bounds", "--config", write_cfg(tmp_path, doc), "--out", str(tmp_path / "ok")]) == 0
    doc["check_bounds"]["r"] = [0.1]
    assert main(["check-bounds", "--config", write_cfg(tmp_path, doc), "--out", str(tmp_path / "bad")]) == 2
    rep = json.loads((tmp_path / "bad" / "report.json").read_text())
    assert rep["horizon"][0]["lower_violations"] > 0 and rep["horizon_weak_bounds_hold"]


def test_concentration_cli(tmp_path):
    doc = {"schema_version": 1, "concentration": {"checkpoints": [3000], "runs": 2, "c": 1.0}}
    assert main(["concentration", "--config", write_cfg(tmp_path, doc), "--out", str(tmp_path / "c")]) == 0
    rep = json.loads((tmp_path / "c" / "report.json").read_text())
    assert rep["substituted"] and rep["checkpoints"][0]["runs"] == 2


def test_sweep_is_ordered_and_parallel_safe(tmp_path):
    doc = {**BASE, "n_max": 1000, "sweep": {"grid": {"schedule.policy": ["generalized_lloyd", "naive_lloyd"]},
                                            "seeds": [1, 2]}}
    cfg = write_cfg(tmp_path, doc)
    assert main(["sweep", "--config", cfg, "--out", str(tmp_path / "s1")]) == 0
    assert main(["sweep", "--config", cfg, "--out", str(tmp_path / "s2"), "--jobs", "2"]) == 0
    a = (tmp_path / "s1" / "sweep.csv").read_text()
    assert a == (tmp_path / "s2" / "sweep.csv").read_text()
    assert len(a.splitlines()) == 5
    for j in range(4):
        assert (tmp_path / "s1" / f"job_{j:04d}" / "trace.csv").read_bytes() == \
            (tmp_path / "s2" / f"job_{j:04d}" / "trace.csv").read_bytes()


def test_sweep_jobs_expansion():
    jobs = sweep_jobs({"seed": 4, "schedule": {"policy": "naive_lloyd"}}, {"grid": {"k": [2, 3]}, "runs": 2})
    assert [(j["k"], j["seed"]) for j in jobs] == [(2, 4), (2, 5), (3, 4), (3, 5)]


def test_plot(tmp_path, capsys):
    cfg = write_cfg(tmp_path, BASE)
    run_dir = tmp_path / "r"
    main(["run", "--config", cfg, "--out", str(run_dir)])
    assert main(["plot", str(run_dir)]) == 0
    svg = (run_dir / "trace.svg").read_text()
    assert svg.startswith("<?xml") and "config_hash" in svg
    assert main(["plot", str(run_dir)]) == 1
    assert main(["plot", str(run_dir), "--force"]) == 0
    assert (run_dir / "trace.svg").read_text() == svg
    empty = tmp_path / "empty"
    empty.mkdir()
    (empty / "trace.csv").write_text("n,I\n")
    assert main(["plot", str(empty)]) == 1
    assert "no rows" in capsys.readouterr().err


def test_console_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "streamkmeans.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "check-bounds" in res.stdout
