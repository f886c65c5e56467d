#!/usr/bin/env python3
"""
End-to-end runs through the command line and the runner: exit codes, artifacts, determinism.
"""

import json
from dataclasses import replace
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

import main as runner
from conftest import write_config
from src.cli import main as cli_main
from src.cli import parse_args, validate_args
from src.errors import NumericalFailure
from src.run_config import ExperimentConfig


def _config(tmp_path, **values) -> ExperimentConfig:
    return ExperimentConfig.from_dict({"output_folder": str(tmp_path), **values})


def test_cell_run_writes_ahat(tmp_path):
    config = _config(tmp_path, command="cell", cell_resolution=256)
    progress = []
    assert runner.main(config, progress.append) == 0
    ahat = pd.read_csv(tmp_path / "cell_ahat.csv")
    assert ahat["value"].iloc[0] == pytest.approx(0.5, abs=1e-4)
    assert progress[-1] == 100
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["status"] == "success"
    assert "cell_ahat.csv" in manifest["artifacts"]
    assert manifest["config"]["command"] == "cell"
    summary = json.loads((tmp_path / "cell_summary.json").read_text())
    assert summary["command"] == "cell"


def test_zero_targets_give_zero_control(tmp_path):
    config = _config(
        tmp_path, command="control", scenario={"preset": "constant", "dimension": 1},
        epsilons=[0.125], T=2.0, targets={},
    )
    assert runner.main(config) == 0
    control = pd.read_csv(tmp_path / "control_control.csv")
    assert list(control.columns) == ["t", "boundary_node", "g"]
    np.testing.assert_array_equal(control["g"], 0.0)
    summary = json.loads((tmp_path / "control_summary.json").read_text())
    assert summary["residual_position"] == 0.0


def test_cli_runs_config_with_overrides(tmp_path):
    path = write_config(tmp_path, '{"command": "correctors", "epsilons": [0.125]}')
    out = tmp_path / "out"
    assert cli_main(["--config", str(path), "--out", str(out), "--seed", "7", "--log-level", "WARNING"]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["seed"] == 7
    assert manifest["config"]["log_level"] == "WARNING"
    table = pd.read_csv(out / "correctors_determinants.csv")
    assert table["within_bound"].all()


def test_invalid_config_exits_with_2(tmp_path):
    path = write_config(tmp_path, '{\n  "command": "cell",\n  "nodes_per_eps": 4\n}\n')
    assert cli_main(["--config", str(path), "--out", str(tmp_path)]) == 2


def test_missing_config_exits_with_2(tmp_path):
    assert cli_main(["--config", str(tmp_path / "absent.json")]) == 2


def test_validate_args_rejects_bad_threads(tmp_path):
    path = write_config(tmp_path, '{"command": "cell"}')
    args = parse_args(["--config", str(path), "--threads", "0"])
    with pytest.raises(ValueError, match="Threads"):
        validate_args(args)


def test_numerical_failure_keeps_partial_results(tmp_path, monkeypatch):
    partial = pd.DataFrame({"epsilon": [0.125], "metric": ["energy_error"], "value": [1e-3]})

    def failing(config, scenario):
        raise NumericalFailure("integration blew up at eps=0.0625", partial=partial)

    monkeypatch.setitem(runner.COMMANDS, "rate", failing)
    config = _config(tmp_path, command="rate", epsilons=[0.125, 0.0625])
    assert runner.main(config) == 3
    kept = pd.read_csv(tmp_path / "rate_partial.csv")
    assert kept["value"].iloc[0] == pytest.approx(1e-3)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["status"] == "numerical-failure"
    assert manifest["partial"] is True
    assert "blew up" in manifest["failures"][0]


def test_unexpected_exception_exits_with_3(tmp_path, monkeypatch):
    def broken(config, scenario):
        raise RuntimeError("unexpected")

    monkeypatch.setitem(runner.COMMANDS, "cell", broken)
    path = write_config(tmp_path, '{"command": "cell"}')
    assert cli_main(["--config", str(path), "--out", str(tmp_path)]) == 3


def test_bad_scenario_exits_with_2(tmp_path):
    config = _config(tmp_path, command="cell", scenario={"preset": "2D-laminate", "extents": [1.0]})
    assert runner.main(config) == 2
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["status"] == "config-error"


def test_runs_are_deterministic(tmp_path):
    first, second = tmp_path / "a", tmp_path / "b"
    for folder in (first, second):
        assert runner.main(_config(folder, command="cell", cell_resolution=64)) == 0
    for name in ("cell_ahat.csv", "cell_diagnostics.csv"):
        assert (first / name).read_bytes() == (second / name).read_bytes()


def test_report_is_written_on_request(tmp_path):
    config = _config(tmp_path, command="correctors", epsilons=[0.125], report=True)
    assert runner.main(config) == 0
    assert (tmp_path / "correctors_report.pdf").read_bytes().startswith(b"%PDF")


CONFIG_FOLDER = Path(__file__).resolve().parent.parent / "configs"


@pytest.mark.parametrize("path", sorted(CONFIG_FOLDER.glob("*.json")), ids=lambda p: p.stem)
def test_shipped_config_runs(path, tmp_path):
    config = replace(ExperimentConfig.from_json(path), output_folder=tmp_path)
    assert runner.main(config) == 0
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["status"] == "success"
    summary = json.loads((tmp_path / f"{config.command}_summary.json").read_text())
    assert summary["command"] == config.command
    if config.command == "observe":
        assert summary["lower_spread"] <= 10.0
        assert summary["upper_spread"] <= 10.0


def test_smooth_checker_rellich_residuals_decrease(tmp_path):
    config = replace(ExperimentConfig.from_json(CONFIG_FOLDER / "rellich_2d_smooth_checker.json"), output_folder=tmp_path)
    assert runner.main(config) == 0
    table = pd.read_csv(tmp_path / "rellich_residuals.csv")
    oscillating = table[table["operator"] == "oscillating"].sort_values("level")
    assert np.isfinite(oscillating["residual"]).all()
    assert np.all(np.diff(oscillating["residual"].to_numpy()) < 0)
