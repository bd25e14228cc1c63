import json
import subprocess
import sys

import pytest

from dvorl import buffer as buf
from dvorl.cli import main

from test_pipeline import SMALL

STAGE_ARTIFACTS = [
    "source.dvrb", "target.dvrb", "dve.dvnn", "dve_history.csv", "values.csv", "filtered.dvrb",
    "policy_baseline.dvqp", "policy_dvorl.dvqp", "eval_baseline.json", "eval_dvorl.json",
]


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(SMALL))
    return str(path)


def test_missing_threshold_names_field(tmp_path, capsys):
    data = json.loads(json.dumps(SMALL))
    del data["dve"]["selection_threshold"]
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(data))
    code = main(["run", "--config", str(path), "--out", str(tmp_path / "o")])
    err = capsys.readouterr().err
    assert code != 0
    assert "dve.selection_threshold" in err and err.startswith("error [config]")


def test_unknown_subcommand_fails():
    proc = subprocess.run([sys.executable, "-m", "dvorl.cli", "deploy", "--config", "x"], capture_output=True, text=True)
    assert proc.returncode != 0 and "invalid choice" in proc.stderr


def test_missing_input_is_stage_tagged(config, tmp_path, capsys):
    code = main(["filter", "--config", config, "--out", str(tmp_path / "empty")])
    assert code == 1
    assert capsys.readouterr().err.startswith("error [filter]: missing input")


def test_manual_stages_reproduce_run(config, tmp_path, capsys):
    auto, manual = tmp_path / "auto", tmp_path / "manual"
    assert main(["run", "--config", config, "--seed", "5", "--out", str(auto)]) == 0
    common = ["--config", config, "--seed", "5", "--out", str(manual)]
    for argv in (
        ["generate"],
        ["train-dve"],
        ["value"],
        ["filter"],
        ["train-rl", "--arm", "baseline"],
        ["train-rl", "--arm", "dvorl"],
        ["evaluate", "--arm", "baseline"],
        ["evaluate", "--arm", "dvorl"],
    ):
        assert main(argv[:1] + common + argv[1:]) == 0, argv
    for name in STAGE_ARTIFACTS:
        assert (manual / name).read_bytes() == (auto / name).read_bytes(), name
    out = capsys.readouterr().out
    assert "kept " in out and " of 2000 transitions" in out


def test_filter_threshold_override(config, tmp_path, capsys):
    out = tmp_path / "o"
    for cmd in (["generate"], ["train-dve"], ["value"]):
        assert main(cmd + ["--config", config, "--out", str(out)]) == 0
    capsys.readouterr()
    dest = tmp_path / "kept.dvrb"
    assert main(["filter", "--config", config, "--out", str(out), "--threshold", "0", "--output", str(dest)]) == 0
    assert capsys.readouterr().out.startswith("kept 2000 of 2000 transitions")
    assert len(buf.load(dest)) == 2000


def test_run_twice_identical(config, tmp_path):
    for d in ("a", "b"):
        assert main(["run", "--config", config, "--seed", "7", "--out", str(tmp_path / d)]) == 0
    for name in STAGE_ARTIFACTS + ["report.json"]:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name
    report = json.loads((tmp_path / "a" / "report.json").read_text())
    assert report["config"]["seed"] == 7


def test_bench_removal_subcommand(config, tmp_path, capsys):
    assert main(["bench-removal", "--config", config, "--out", str(tmp_path)]) == 0
    assert (tmp_path / "removal.csv").exists()
    assert "remove highest 0.4" in capsys.readouterr().out


def test_console_script_help():
    proc = subprocess.run([sys.executable, "-m", "dvorl.cli", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for name in ("generate", "train-dve", "value", "filter", "train-rl", "evaluate", "run", "bench-transfer", "bench-removal"):
        assert name in proc.stdout
