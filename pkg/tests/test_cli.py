import csv
import json
import subprocess
import sys
from pathlib import Path

import pytest

from swarmfl.cli import main

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
SMOKE = str(CONFIGS / "smoke.json")


@pytest.mark.parametrize("name", ["default", "ablation", "noniid", "iid_control", "smoke"])
def test_validate_shipped_configs(name):
    assert main(["validate", str(CONFIGS / f"{name}.json")]) == 0


def test_validate_prints_materialized_config(capsys):
    assert main(["validate", "--config", str(CONFIGS / "default.json")]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["ok"] is True and doc["config"]["topology"]["n_devices"] == 100


def test_unknown_subcommand_is_usage_error(capsys):
    assert main(["frobnicate"]) == 2
    assert "invalid choice" in capsys.readouterr().err
    assert main([]) == 2
    assert main(["run"]) == 2
    assert main(["run", SMOKE, "--strategy", "dqn"]) == 2
    assert main(["run", SMOKE, "--threads", "0"]) == 2


def test_bad_config_gives_structured_diagnostics(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{\n  "n_rounds": -1,\n  "extra": true\n}')
    assert main(["validate", str(bad)]) == 1
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "config"
    assert {i["loc"] for i in err["issues"]} == {"n_rounds", "extra"}
    assert {i["line"] for i in err["issues"]} == {2, 3}
    assert main(["validate", str(tmp_path / "nope.json")]) == 1


def test_run_then_compare(tmp_path, capsys):
    out = tmp_path / "exp"
    assert main(["run", SMOKE, "--out-dir", str(out), "--strategy", "pso_aco,random_fixed", "--seed-override", "3"]) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["seeds"] == [3] and man["strategies"] == ["pso_aco", "random_fixed"]
    cmp_dir = tmp_path / "cmp"
    assert main(["compare", str(out), "--out-dir", str(cmp_dir)]) == 0
    with open(cmp_dir / "comparison.csv", newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["strategy"] for r in rows] == ["pso_aco", "random_fixed"]
    assert {"accuracy_mean", "accuracy_std", "comm_cost_mb_mean", "latency_s_mean", "participation_mean", "final_loss_mean"} <= set(rows[0])
    assert float(rows[0]["n_runs"]) == 1


def test_compare_accepts_configs(tmp_path):
    assert main(["compare", SMOKE, SMOKE, "--out-dir", str(tmp_path), "--strategy", "rule_based"]) == 0
    assert (tmp_path / "comparison.csv").exists()
    assert (tmp_path / "00_smoke" / "manifest.json").exists()


def test_out_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("SWARMFL_OUT_DIR", str(tmp_path / "envout"))
    assert main(["run", SMOKE, "--seed-override", "0"]) == 0
    assert (tmp_path / "envout" / "manifest.json").exists()


def test_ablate(tmp_path):
    assert main(["ablate", SMOKE, "--out-dir", str(tmp_path), "--seed-override", "0"]) == 0
    with open(tmp_path / "ablation.csv", newline="", encoding="utf-8") as fh:
        assert [r["strategy"] for r in csv.DictReader(fh)] == ["full", "no_pso", "no_aco", "edge_only"]


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "swarmfl", "validate", SMOKE], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    proc = subprocess.run([sys.executable, "-m", "swarmfl", "nope"], capture_output=True, text=True)
    assert proc.returncode == 2
