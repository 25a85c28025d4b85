from pathlib import Path

import numpy as np
import pytest

from softmpc.dynamics import DynamicsParams
from softmpc.kinematics import ArmGeometry

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"


@pytest.fixture
def geom():
    return ArmGeometry()


@pytest.fixture
def params():
    return DynamicsParams()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def scenarios_dir():
    return SCENARIOS


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: (len(s.split()[1]), s)):
            terminalreporter.write_line(line)
