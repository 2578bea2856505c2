import csv
import io
import json
import subprocess
import sys

import numpy as np
import pytest

from covdist.errors import ConfigError
from covdist.harness import ExperimentConfig, load_config, main, run


def run_cli(*args, env=None):
    return subprocess.run(
        [sys.executable, "-m", "covdist", *args], capture_output=True, text=True, env=env
    )


ESTIMATE = ["estimate", "--rho1", "0.3", "--rho2", "0.6", "--M", "40", "--N1", "120", "--N2", "120", "--metric", "le", "--seed", "7"]


def test_estimate_cli_json_is_deterministic():
    a = run_cli(*ESTIMATE)
    b = run_cli(*ESTIMATE)
    assert a.returncode == 0, a.stderr
    assert a.stdout == b.stdout
    row = json.loads(a.stdout)["rows"][0]
    assert set(row) >= {"plugin", "consistent", "true", "seed", "version"}
    assert row["metric"] == "LE" and row["N1"] == 120
    assert abs(row["consistent"] - row["true"]) < abs(row["plugin"] - row["true"])


def test_malformed_config_reports_line(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{\n  "M": [10],\n  "trials": 3,\n}\n')
    r = run_cli("asymptotics", "--config", str(p))
    assert r.returncode == 1
    assert f"{p}:4:1" in r.stderr
    assert r.stdout == ""


@pytest.mark.parametrize(
    "body",
    [
        {"trials": 0},
        {"c": [1.0, 0.5]},
        {"M": [40, 20]},
        {"metrics": ["AIRM"]},
        {"unknown_key": 1},
        {"kind": "mse"},
    ],
)
def test_invalid_configs_exit_one(tmp_path, body):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(body))
    assert main(["histogram", "--config", str(p)]) == 1


def test_missing_config_file_exits_one(tmp_path, capsys):
    assert main(["asymptotics", "--config", str(tmp_path / "nope.json")]) == 1
    assert "nope.json" in capsys.readouterr().err


def test_numerical_failure_exits_two(tmp_path):
    # no node count can meet this tolerance, so the quadrature gives up
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps({"M": [10], "metrics": ["LE"], "quadrature": {"rtol": 1e-300}}))
    r = run_cli("asymptotics", "--config", str(p))
    assert r.returncode == 2, r.stderr
    assert "numerical" in r.stderr


def test_asymptotics_cli_matches_library(tmp_path):
    from covdist.asymptotics import PairSystem, asymptotic_law
    from covdist.spectral import toeplitz_model

    p = tmp_path / "fig1.json"
    p.write_text(json.dumps({"rho": [0.8, 0.4], "c": [0.1, 0.5], "M": [20], "metrics": ["EU", "KL"]}))
    out = tmp_path / "law.csv"
    assert main(["asymptotics", "--config", str(p), "--out", str(out)]) == 0
    rows = list(csv.DictReader(io.StringIO(out.read_text())))
    assert [r["metric"] for r in rows] == ["EU", "KL"]
    models = [toeplitz_model(0.8, 20), toeplitz_model(0.4, 20)]
    for r in rows:
        law = asymptotic_law(PairSystem(models, [200, 40], [(0, 1)], r["metric"]))
        assert float(r["d"]) == law.d[0]
        assert float(r["mean"]) == law.mean[0]
        assert float(r["var"]) == law.cov[0, 0]
        assert r["seed"] == "0" and r["version"] == "0.1.0"


def test_estimate_from_data_files(tmp_path, rng):
    Y1 = rng.standard_normal((5, 30))
    Y2 = 2 * rng.standard_normal((5, 40))
    np.save(tmp_path / "a.npy", Y1)
    np.savetxt(tmp_path / "b.csv", Y2, delimiter=",")
    out = tmp_path / "est.json"
    code = main(["estimate", "--data", str(tmp_path / "a.npy"), str(tmp_path / "b.csv"), "--out", str(out)])
    assert code == 0
    rows = json.loads(out.read_text())["rows"]
    assert [r["metric"] for r in rows] == ["EU", "KL", "LE"]
    assert all(r["true"] is None for r in rows)
    assert rows[0]["N1"] == 30 and rows[0]["N2"] == 40


def test_estimate_undersampled_reports_regime(capsys):
    code = main(["estimate", "--M", "20", "--N1", "10", "--N2", "10", "--metric", "EU", "--metric", "KL", "--format", "json"])
    assert code == 1
    assert "N > M" in capsys.readouterr().err


def test_estimate_undersampled_euclidean_only(capsys):
    code = main(["estimate", "--M", "20", "--N1", "10", "--N2", "10", "--metric", "EU"])
    assert code == 0
    row = json.loads(capsys.readouterr().out)["rows"][0]
    assert row["consistent"] is not None


def test_thread_count_does_not_change_output(tmp_path):
    cfg = {"rho": [0.3, 0.6], "c": [0.5], "M": [6, 10], "trials": 30, "seed": 3}
    p = tmp_path / "mse.json"
    p.write_text(json.dumps(cfg))
    a = run_cli("mse", "--config", str(p), "--threads", "1")
    b = run_cli("mse", "--config", str(p), "--threads", "4")
    env = {**__import__("os").environ, "COVDIST_THREADS": "3"}
    c = run_cli("mse", "--config", str(p), env=env)
    assert a.returncode == 0, a.stderr
    assert a.stdout == b.stdout == c.stdout


def test_clustering_runner_rows():
    cfg = load_config(None, "clustering", {"M": [12], "trials": 50, "profiles": [[2 / 3], [0.5, 1 / 3, 0.25]]})
    res = run(cfg, threads=2)
    assert len(res.rows) == 2
    r = res.rows[1]
    assert r["c_profile"] == "0.5/0.5/0.333333/0.333333/0.25/0.25"
    assert 0 <= r["theory"] <= 1 and 0 <= r["empirical"] <= 1
    assert r["ci_low"] <= r["empirical"] <= r["ci_high"]
    again = run(cfg, threads=1)
    assert again.rows == res.rows


def test_histogram_runner_ks_small():
    cfg = load_config(None, "histogram", {"M": [20], "trials": 400, "metrics": ["EU"], "seed": 1})
    res = run(cfg)
    row = res.rows[0]
    assert row["ks"] < 0.08
    assert len(res.payload["series"][0]["samples"]) == 400
    assert json.loads(res.to_json())["rows"][0]["metric"] == "EU"


def test_mse_runner_absolute_when_equal():
    cfg = load_config(None, "mse", {"rho": [0.6, 0.6], "M": [8], "trials": 20, "metrics": ["KL"]})
    rows = run(cfg).rows
    assert all(not r["normalized"] for r in rows)
    assert {r["estimator"] for r in rows} == {"consistent", "plugin"}


def test_config_defaults_and_counts():
    cfg = load_config(None, "histogram")
    assert cfg.sample_counts(40) == [400, 80]
    cfg = ExperimentConfig(kind="estimate", N=[50, 60], rho=[0.1, 0.2])
    assert cfg.sample_counts(40) == [50, 60]
    with pytest.raises(ConfigError):
        ExperimentConfig(kind="mse", c=None, N=None)


def test_bad_thread_env(monkeypatch, capsys):
    monkeypatch.setenv("COVDIST_THREADS", "many")
    assert main(["asymptotics", "--metric", "EU"]) == 1
    assert "COVDIST_THREADS" in capsys.readouterr().err


def test_shipped_configs_load():
    from pathlib import Path

    root = Path(__file__).resolve().parents[1] / "configs"
    paths = sorted(root.glob("*.json"))
    assert paths
    for p in paths:
        kind = json.loads(p.read_text())["kind"]
        cfg = load_config(str(p), kind)
        assert cfg.kind == kind
