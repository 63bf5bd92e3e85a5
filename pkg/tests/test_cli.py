import json
import subprocess
import sys

import pytest

from leo_rrm.cli import EXIT_ERROR, EXIT_OK, EXIT_USAGE, main

SMALL = ["--override", "traffic.per_leo_count=1", "--quiet"]


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr().out.strip().splitlines()
    return code, (json.loads(out[-1]) if out else None)


def test_train_then_eval_and_sweeps(tmp_path, capsys):
    out = tmp_path / "run"
    code, doc = run(capsys, "train", "--seed", "2", "--out", str(out),
                    "--override", "trainer.episodes=2", "--override", "trainer.batch_size=16", *SMALL)
    assert code == EXIT_OK and doc["ok"] and doc["episodes"] == 2 and doc["seed"] == 2
    assert (out / "checkpoint.json").exists() and (out / "metrics.csv").exists()
    assert "seed: 2" in (out / "config.yaml").read_text()

    code, doc = run(capsys, "eval", "--checkpoint", str(out / "checkpoint.json"),
                    "--config", str(out / "config.yaml"), "--out", str(tmp_path / "ev"),
                    "--trace", "--quiet")
    assert code == EXIT_OK and 0.0 <= doc["completion_rate"] <= 1.0
    assert (tmp_path / "ev" / "trace-ep0.jsonl").exists()

    code, doc = run(capsys, "sweep-load", "--loads", "1,2", "--policy", "spg",
                    "--checkpoint", f"tf-darm={out / 'checkpoint.json'}",
                    "--out", str(tmp_path / "sl"), "--quiet")
    assert code == EXIT_OK and len(doc["rows"]) == 4
    assert (tmp_path / "sl" / "load.csv").exists()

    code, doc = run(capsys, "sweep-scale", "--scales", "3x8,4x6", "--policy", "ltg",
                    "--checkpoint", str(out / "checkpoint.json"), *SMALL)
    assert code == EXIT_OK and [r["policy"] for r in doc["rows"]] == ["ltg", "tf-darm"]

    png = tmp_path / "m.png"
    code, doc = run(capsys, "plot", f"a={out / 'metrics.csv'}", "--out", str(png), "--quiet")
    assert code == EXIT_OK and png.stat().st_size > 0
    code, doc = run(capsys, "plot", str(tmp_path / "sl" / "load.csv"), "--out", str(png))
    assert code == EXIT_OK


def test_eval_baseline(capsys):
    code, doc = run(capsys, "eval", "--policy", "spg", *SMALL)
    assert code == EXIT_OK and doc["constellation"] == "6*11"


def test_dump_topology(tmp_path, capsys):
    code, doc = run(capsys, "dump-topology", "--slots", "2", "--out", str(tmp_path), "--quiet")
    assert code == EXIT_OK and doc["satellites"] == 66 and doc["slots"] == 2
    lines = (tmp_path / "topology.csv").read_text().splitlines()
    assert len(lines) == doc["edges"] + 1


@pytest.mark.parametrize("argv", [
    ["eval", "--quiet"],
    ["eval", "--policy", "spg", "--checkpoint", "x.json", "--quiet"],
    ["train", "--override", "trainer.bogus=1", "--quiet"],
    ["train", "--override", "trainer.episodes=0", "--quiet"],
    ["sweep-load", "--policy", "spg", "--loads", "a,b", "--quiet"],
    ["sweep-scale", "--policy", "spg", "--scales", "4by3", "--quiet"],
    ["dump-topology", "--slots", "0", "--quiet"],
])
def test_config_errors_exit_1(argv, capsys):
    code, doc = run(capsys, *argv)
    assert code == EXIT_ERROR and doc == {"ok": False, "error": "config", "reason": doc["reason"]}


def test_missing_files_exit_1(tmp_path, capsys):
    code, doc = run(capsys, "eval", "--checkpoint", str(tmp_path / "none.json"), "--quiet")
    assert code == EXIT_ERROR and doc["error"] == "input"
    code, doc = run(capsys, "train", "--config", str(tmp_path / "none.yaml"), "--quiet")
    assert code == EXIT_ERROR and doc["error"] == "input"
    bad = tmp_path / "bad.json"
    bad.write_text("{}")
    code, doc = run(capsys, "eval", "--checkpoint", str(bad), "--quiet")
    assert code == EXIT_ERROR and doc["error"] == "input"


@pytest.mark.parametrize("argv", [[], ["fly"], ["train", "--policy", "spg"],
                                  ["eval", "--episodes", "many"]])
def test_usage_errors_exit_2(argv, capsys):
    assert main(argv) == EXIT_USAGE


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "leo_rrm", "eval", "--policy", "ltg", *SMALL],
                          capture_output=True, text=True, timeout=300)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["ok"] is True
