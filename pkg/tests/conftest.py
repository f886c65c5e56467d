#!/usr/bin/env python3
"""
Shared fixtures. Grids are kept small so the whole suite runs in seconds.
"""

import sys
from pathlib import Path

import pytest

# Add the repository root to path
sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from src.coeff import Domain, Grid, build_field
from src.scenario import Scenario, constant_scenario


@pytest.fixture(scope="session")
def unit_interval():
    return Domain((1.0,))


@pytest.fixture(scope="session")
def unit_square():
    return Domain((1.0, 1.0))


@pytest.fixture(scope="session")
def cosine_field():
    return build_field("1D-cosine")


@pytest.fixture(scope="session")
def laminate_field():
    return build_field("2D-laminate")


@pytest.fixture
def interval_grid(unit_interval):
    return Grid.for_domain(unit_interval, 64)


@pytest.fixture
def cosine_scenario(cosine_field, unit_interval):
    return Scenario(cosine_field, unit_interval)


@pytest.fixture
def constant_1d():
    return constant_scenario(1, 1.0, min_resolution=64)


def write_config(folder: Path, text: str) -> Path:
    path = folder / "experiment.json"
    path.write_text(text, encoding="utf-8")
    return path
