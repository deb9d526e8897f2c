import warnings

import numpy as np
import pytest

from sqg.dynamics import PhysicalParams
from sqg.integrate import StabilityWarning
from sqg.spectral import GridSpec, random_coeffs


@pytest.fixture(autouse=True)
def _quiet_advisories():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", StabilityWarning)
        yield


@pytest.fixture
def grid16():
    return GridSpec(16)


@pytest.fixture
def grid32():
    return GridSpec(32)


@pytest.fixture
def params():
    return PhysicalParams(1.0, 0.75)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def rand(grid, rng, n=None, slope=1.0, band=None):
    return random_coeffs(grid, rng, slope=slope, band=band, size=n)


def pytest_terminal_summary(terminalreporter):
    from . import test_acceptance

    if test_acceptance.LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(test_acceptance.LINES, key=lambda s: int(s.split("criterion")[1].split()[0])):
            terminalreporter.write_line(line)
