import numpy as np
import pytest

from sns.spectral_core import FourierGrid
from sns.verification import random_field


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def grid16():
    return FourierGrid(16)


@pytest.fixture(scope="session")
def grid32():
    return FourierGrid(32)


@pytest.fixture
def field(rng):
    """Factory for random real fields on a grid."""

    def make(grid, decay=1.0, divergence_free=True):
        return random_field(grid, rng, decay, divergence_free)

    return make


def single_mode(grid, k1, k2, vec):
    """Real field ``vec * e^{i k.x} + conj``, coefficients placed on ``k`` and ``-k``."""
    c = np.zeros((2, grid.n, grid.n), complex)
    c[:, k1 % grid.n, k2 % grid.n] = vec
    c[:, -k1 % grid.n, -k2 % grid.n] = np.conj(vec)
    return c


# acceptance lines collected by test_acceptance and echoed after the run
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
