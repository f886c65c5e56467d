#!/usr/bin/env python3
"""
Tests for the per-eps grid rule and the cached operators of a scenario.
"""

import logging

import numpy as np
import pytest

from src.coeff import Domain
from src.run_config import ExperimentConfig
from src.scenario import Scenario, constant_scenario


def test_grid_resolves_eps(cosine_scenario):
    for epsilon in (1 / 8, 1 / 16):
        grid = cosine_scenario.grid_for(epsilon)
        assert max(grid.spacing) <= epsilon / 8 * (1 + 1e-12)
    # min_resolution lifts the grid at coarse eps
    assert cosine_scenario.grid_for(0.5).resolution == (32,)


def test_constant_grid_does_not_depend_on_eps():
    scenario = constant_scenario(2, 1.0, min_resolution=24)
    assert scenario.grid_for(0.5) == scenario.grid_for(0.01)
    assert scenario.grid_for(0.5).resolution == (24, 24)


def test_incommensurate_extent_warns(cosine_field, caplog):
    scenario = Scenario(cosine_field, Domain((1.05,)))
    with caplog.at_level(logging.WARNING):
        scenario.grid_for(0.125)
    assert "not a multiple" in caplog.text


def test_rejects_too_few_nodes_per_eps(cosine_field, unit_interval):
    with pytest.raises(ValueError, match="nodes_per_eps"):
        Scenario(cosine_field, unit_interval, nodes_per_eps=4)


def test_rejects_dimension_mismatch(cosine_field, unit_square):
    with pytest.raises(ValueError, match="dimension"):
        Scenario(cosine_field, unit_square)


def test_operators_are_cached(cosine_scenario):
    assert cosine_scenario.operator_for(0.125) is cosine_scenario.operator_for(0.125)
    assert cosine_scenario.homogenized_for(0.125) is cosine_scenario.homogenized_for(0.125)


def test_homogenized_operator_is_constant(cosine_scenario):
    op = cosine_scenario.homogenized_operator_for(0.125)
    assert op.tensor.is_constant
    assert op.grid == cosine_scenario.grid_for(0.125)
    assert op.tensor.values[0, 0, 0] == pytest.approx(0.5, abs=1e-2)


def test_time_step_respects_cfl(cosine_scenario):
    dt = cosine_scenario.time_step(0.125, 1.0)
    h = min(cosine_scenario.grid_for(0.125).spacing)
    assert dt <= 0.5 * h * np.sqrt(cosine_scenario.field.mu) * (1 + 1e-12)


def test_from_config_reads_scenario_block():
    config = ExperimentConfig(
        command="observe",
        scenario={"preset": "2D-laminate", "extents": [1.0, 2.0], "gamma": ["east"]},
        nodes_per_eps=10,
    )
    scenario = Scenario.from_config(config)
    assert scenario.domain.extents == (1.0, 2.0)
    assert scenario.domain.gamma == ("east",)
    assert scenario.nodes_per_eps == 10
    assert scenario.field.name == "2D-laminate"


def test_metadata_lists_grid_rules(cosine_scenario):
    metadata = cosine_scenario.metadata()
    assert metadata["nodes_per_eps"] == 8
    assert metadata["coefficient"]["name"] == "1D-cosine"
