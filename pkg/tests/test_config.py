#!/usr/bin/env python3
"""
Tests for loading and validating experiment configurations.
"""

from pathlib import Path

import pytest

from conftest import write_config
from src.errors import ConfigError
from src.run_config import ExperimentConfig


def test_defaults_are_valid():
    config = ExperimentConfig.from_dict({"command": "cell"})
    assert config.scenario == {"preset": "1D-cosine"}
    assert config.method == "dense"
    assert config.output_folder == Path("output")


def test_unknown_key_names_key_and_line(tmp_path):
    path = write_config(tmp_path, '{\n  "command": "cell",\n  "epsilon": 0.1\n}\n')
    with pytest.raises(ConfigError) as info:
        ExperimentConfig.from_json(path)
    assert info.value.key == "epsilon"
    assert info.value.line == 3
    assert str(info.value).startswith("line 3: epsilon: ")


def test_invalid_json_reports_line(tmp_path):
    path = write_config(tmp_path, '{\n  "command": "cell",\n  "T": \n}\n')
    with pytest.raises(ConfigError, match="invalid JSON") as info:
        ExperimentConfig.from_json(path)
    assert info.value.line == 4


def test_missing_file_and_command(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        ExperimentConfig.from_json(tmp_path / "absent.json")
    with pytest.raises(ConfigError, match="command"):
        ExperimentConfig.from_dict({"T": 1.0})


@pytest.mark.parametrize(
    "raw, key",
    [
        ({"command": "cell", "epsilons": [0.1, 0.2]}, "epsilons"),
        ({"command": "cell", "epsilons": []}, "epsilons"),
        ({"command": "cell", "nodes_per_eps": 4}, "nodes_per_eps"),
        ({"command": "cell", "scenario": {"preset": "3D-foam"}}, "preset"),
        ({"command": "cell", "scenario": {}}, "scenario"),
        ({"command": "cell", "cfl": 1.5}, "cfl"),
        ({"command": "cell", "method": "lu"}, "method"),
        ({"command": "cell", "seed": -1}, "seed"),
        ({"command": "simulate"}, "command"),
        ({"command": "control", "targets": {"theta2": "x"}}, "targets"),
        ({"command": "rellich", "levels": [32]}, "levels"),
        ({"command": "observe", "T_sweep": [1.0, -2.0]}, "T_sweep"),
    ],
)
def test_invalid_values_name_the_key(raw, key):
    with pytest.raises(ConfigError) as info:
        ExperimentConfig.from_dict(raw)
    assert info.value.key == key


def test_missing_array_file(tmp_path):
    with pytest.raises(ConfigError, match="array file not found"):
        ExperimentConfig.from_dict({"command": "cell", "scenario": {"array_file": str(tmp_path / "a.txt")}})


def test_epsilons_are_coerced_to_floats():
    config = ExperimentConfig.from_dict({"command": "rate", "epsilons": [1, 0.5]})
    assert config.epsilons == [1.0, 0.5]


def test_output_paths(tmp_path):
    config = ExperimentConfig.from_dict({"command": "observe", "output_folder": str(tmp_path)})
    assert config.get_output_folder() == tmp_path
    assert config.get_table_path("rows") == tmp_path / "observe_rows.csv"
    assert config.get_summary_path() == tmp_path / "observe_summary.json"
    assert config.get_array_path("fields") == tmp_path / "observe_fields.txt"
    assert config.get_manifest_path() == tmp_path / "manifest.json"
    assert config.get_report_path() == tmp_path / "observe_report.pdf"


def test_as_dict_echoes_every_field(tmp_path):
    config = ExperimentConfig.from_dict({"command": "cell", "output_folder": str(tmp_path)})
    echo = config.as_dict()
    assert echo["output_folder"] == str(tmp_path)
    assert echo["command"] == "cell"
    assert "log_format" in echo


def test_shipped_configs_are_valid():
    folder = Path(__file__).resolve().parent.parent / "configs"
    paths = sorted(folder.glob("*.json"))
    assert paths
    for path in paths:
        ExperimentConfig.from_json(path)
