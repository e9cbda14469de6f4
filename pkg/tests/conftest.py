from pathlib import Path

import numpy as np
import pytest

from core.dynamics import ForceContext
from core.scenarios import builtin_scenarios, with_horizon

SCENARIO_DIR = Path(__file__).resolve().parent.parent / "scenarios"


@pytest.fixture(scope="session")
def scenarios():
    return builtin_scenarios()


@pytest.fixture(scope="session")
def scenario1(scenarios):
    return scenarios[0]


@pytest.fixture(scope="session")
def short_scenario(scenario1):
    """Scenario 1 with four knot intervals, small enough for exact derivative checks."""
    return with_horizon(scenario1, 4)


@pytest.fixture
def belt(scenario1):
    return scenario1.belt


@pytest.fixture
def ctx_s1(scenario1):
    return ForceContext("S1", scenario1.pulley1)


@pytest.fixture
def ctx_s2(scenario1):
    return ForceContext("S2", scenario1.pulley1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def scenario_dir():
    return SCENARIO_DIR
