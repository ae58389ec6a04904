import json
import subprocess
import sys

import pytest

from storybooth.harness.cli import main
from storybooth.plan import StoryPrompt, mock_plan, serialize_plan
from storybooth.planner import API_KEY_ENV


@pytest.fixture
def config_file(tmp_path):
    (tmp_path / "plan.json").write_text(serialize_plan(mock_plan(StoryPrompt("duo", 2), 2, 0)))
    doc = {"plan_path": "plan.json", "grid": {"h": 4, "w": 4}, "steps": 4, "beta_d": 0.9,
           "dropout_enabled": True, "bounding": "cross", "merging": True,
           "merge_schedule": [{"t_high": 1000, "t_low": 950, "alpha": -0.5},
                              {"t_high": 950, "t_low": 600, "alpha": 0.4}],
           "seeds": {"noise": 1, "dropout": 2, "weights": 3}, "out_dir": "out"}
    path = tmp_path / "run.json"
    path.write_text(json.dumps(doc))
    return path


def test_run_writes_report_and_masks(config_file, capsys):
    assert main(["run", "--config", str(config_file), "--dump-masks"]) == 0
    out = config_file.parent / "out"
    assert (out / "report.json").exists() and (out / "leakage.csv").exists()
    assert (out / "masks" / "step000_layer0_cross.pgm").read_bytes().startswith(b"P5\n32 32\n")
    assert "report.json" in capsys.readouterr().out


def test_run_twice_is_byte_identical(config_file, tmp_path):
    assert main(["run", "--config", str(config_file), "--out-dir", str(tmp_path / "a")]) == 0
    assert main(["run", "--config", str(config_file), "--out-dir", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a" / "report.json").read_bytes() == (tmp_path / "b" / "report.json").read_bytes()


@pytest.mark.parametrize("argv", [
    ["run", "--config", "missing.json"],
    ["run"],
    ["run", "--config", "x.json", "--bogus"],
    ["frobnicate"],
    [],
    ["compare", "--config", "x.json", "--ablate", "nothing"],
])
def test_validation_errors_exit_1(argv, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(argv) == 1


def test_bad_config_value_exits_1(config_file):
    doc = json.loads(config_file.read_text())
    doc["beta_d"] = 2
    config_file.write_text(json.dumps(doc))
    assert main(["run", "--config", str(config_file)]) == 1


def test_compare_prints_table(config_file, capsys, tmp_path):
    out = tmp_path / "cmp.json"
    assert main(["compare", "--config", str(config_file), "--ablate", "bounding", "--seeds", "20",
                 "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert text.count("\n") >= 22 and "sign test" in text
    assert json.loads(out.read_text())["n"] == 20


def test_inspect_mask(config_file, tmp_path, capsys):
    plan = config_file.parent / "plan.json"
    assert main(["inspect-mask", "--plan", str(plan), "--grid", "4x4", "--out", str(tmp_path / "m")]) == 0
    assert "cross mask 32x32" in capsys.readouterr().out
    assert (tmp_path / "m" / "cross.pgm").exists()
    assert main(["inspect-mask", "--config", str(config_file), "--no-dropout"]) == 0
    assert main(["inspect-mask", "--plan", str(plan), "--grid", "4by4"]) == 1


def test_plan_mock_and_live_without_key(tmp_path, monkeypatch, capsys):
    out = tmp_path / "p.json"
    assert main(["plan", "--prompt", "a story", "--frames", "3", "--out", str(out)]) == 0
    assert len(json.loads(out.read_text())["frames"]) == 3
    monkeypatch.delenv(API_KEY_ENV, raising=False)
    assert main(["plan", "--prompt", "a story", "--frames", "3", "--live"]) == 1


def test_live_plan_transport_failure_exits_2(monkeypatch):
    monkeypatch.setenv(API_KEY_ENV, "k")
    argv = ["plan", "--prompt", "s", "--frames", "2", "--live", "--endpoint", "http://127.0.0.1:9/none",
            "--attempts", "1"]
    assert main(argv) == 2


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "storybooth.harness.cli", "run", "--config",
                           str(tmp_path / "missing.json")], capture_output=True, text=True)
    assert proc.returncode == 1
    assert "not found" in proc.stderr
