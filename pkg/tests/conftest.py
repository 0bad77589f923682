import numpy as np
import pytest

from latticefronts.lattice import Direction
from latticefronts.wave import solve_wave


@pytest.fixture(scope="session")
def front10():
    """rho = 0.9 front along (1,0) at the default regularization."""
    return solve_wave(0.9, Direction(1, 0), 1e-6)


@pytest.fixture(scope="session")
def fronts_g5():
    return {d: solve_wave(0.9, Direction(*d), 1e-5) for d in [(1, 0), (1, 1), (2, 1)]}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
