"""CLI pipeline stages, exit codes, and artifact wiring.

The full-chain test runs a reduced two-device corpus with a single training
epoch to keep runtime down; the heavyweight full-corpus path is exercised by
the acceptance suite.
"""
from __future__ import annotations

import json
import subprocess
import sys

import pytest

from fwdrift.cli import EXIT_MISSING, EXIT_OK, EXIT_USAGE, main

pytestmark = pytest.mark.filterwarnings("ignore::RuntimeWarning")


@pytest.fixture(scope="module")
def small_config(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "config.json"
    path.write_text(
        json.dumps(
            {
                "seed": 5,
                "devices": ["plug-alpha", "cam-vista"],
                "max_epochs": 1,
                "patience": 1,
            }
        )
    )
    return path


@pytest.fixture(scope="module")
def pipeline_root(tmp_path_factory, small_config):
    """Run the whole chain once; individual tests assert on its artifacts."""
    root = tmp_path_factory.mktemp("data")
    base = ["--config", str(small_config), "--data-root", str(root)]
    for stage in ("synth", "extract", "imagize", "pair", "train", "eval", "detect"):
        assert main(base + [stage]) == EXIT_OK, stage
    return root


def test_synth_artifacts(pipeline_root):
    assert (pipeline_root / "corpus.json").exists()
    assert (pipeline_root / "pcaps" / "plug-alpha-day01.pcap").exists()
    assert (pipeline_root / "pcaps" / "cam-vista-day11.pcap").exists()
    manifest = json.loads((pipeline_root / "manifest.json").read_text())
    assert set(manifest["stages"]) >= {"synth", "extract", "imagize", "pair", "train", "eval", "detect"}


def test_extract_and_imagize_artifacts(pipeline_root):
    assert (pipeline_root / "stats" / "plug-alpha-day03.csv").exists()
    index = (pipeline_root / "images" / "index.jsonl").read_text().strip().splitlines()
    assert len(index) == 2 * 11 * 30  # every window indexed, degenerate or not


def test_pair_artifacts(pipeline_root):
    pair_manifest = json.loads((pipeline_root / "pairs" / "pairs-manifest.json").read_text())
    assert pair_manifest["seed"] == 5
    train = pair_manifest["splits"]["train"]
    assert train["pairs"] == 2 * 2 * 900  # two devices, balanced labels
    change = pair_manifest["splits"]["test_change"]
    assert change["pairs"] == 4 * 900  # only the changer device


def test_eval_reports(pipeline_root):
    stable = json.loads((pipeline_root / "reports" / "accuracy-stable.json").read_text())
    assert set(stable) >= {"all_samples", "majority_samples", "majority_mean_threshold", "hedges_g", "seed"}
    for key in ("all_samples", "majority_samples", "majority_mean_threshold", "hedges_g"):
        assert 0.0 <= stable[key] <= 1.0
    assert (pipeline_root / "reports" / "scores-change.csv").exists()
    drift = json.loads((pipeline_root / "reports" / "drift-change.json").read_text())
    assert {row["device_id"] for row in drift["rows"]} == {"cam-vista"}
    assert {row["day_index"] for row in drift["rows"]} == {8, 9, 10, 11}


def test_detect_report(pipeline_root):
    detect = json.loads((pipeline_root / "reports" / "detect.json").read_text())
    days = {(r["device_id"], r["day"]) for r in detect["rows"]}
    assert ("plug-alpha", 4) in days
    assert ("cam-vista", 11) in days
    # the large-perturbation device must be flagged on its changed days
    flagged = {(r["device_id"], r["day"]) for r in detect["rows"] if r["change_detected"]}
    assert {("cam-vista", d) for d in (8, 9, 10, 11)} <= flagged


def test_report_command_prints_tables(pipeline_root, capsys):
    assert main(["--data-root", str(pipeline_root), "report"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "stable experiment" in out
    assert "Hedges' g" in out


def test_stage_ordering_enforced(tmp_path, small_config):
    empty = tmp_path / "empty"
    assert main(["--config", str(small_config), "--data-root", str(empty), "extract"]) == EXIT_MISSING
    assert main(["--config", str(small_config), "--data-root", str(empty), "train"]) == EXIT_MISSING
    assert main(["--data-root", str(empty), "report"]) == EXIT_MISSING


def test_bad_usage_exit_codes(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["no-such-command"])
    assert exc.value.code == EXIT_USAGE
    bad_cfg = tmp_path / "bad.json"
    bad_cfg.write_text('{"no_such_key": 1}')
    assert main(["--config", str(bad_cfg), "--data-root", str(tmp_path), "synth"]) == EXIT_USAGE
    assert main(["--runs", "0", "--data-root", str(tmp_path), "eval"]) == EXIT_USAGE


def test_console_entry_point_help():
    result = subprocess.run(
        [sys.executable, "-m", "fwdrift.cli", "--help"], capture_output=True, text=True
    )
    assert result.returncode == 0
    assert "synth" in result.stdout and "detect" in result.stdout
