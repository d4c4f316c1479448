import math

import numpy as np
import pytest

from cbf.beamform import ArrayGeometry
from cbf.signal import TwoWayPulse


@pytest.fixture
def pulse():
    return TwoWayPulse(sigma=216e-9, f0=3.5e6)


@pytest.fixture
def fig3_pulse():
    return TwoWayPulse(sigma=200e-9, f0=3e6)


@pytest.fixture
def geometry():
    return ArrayGeometry.linear(64, 0.29e-3, 31)


@pytest.fixture
def small_geometry():
    return ArrayGeometry.linear(16, 0.49e-3, 7)


def rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.linalg.norm(a - b) / np.linalg.norm(b))


def k0_for(pulse, T):
    return int(math.ceil(pulse.f0 * T))


ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
