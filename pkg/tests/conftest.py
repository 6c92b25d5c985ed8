import numpy as np
import pytest

from kamforce import action, model
from kamforce import weakkam as wk

from report import LINES


def pytest_terminal_summary(terminalreporter):
    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def pendulum():
    return model.pendulum_model()


@pytest.fixture(scope="session")
def pendulum_256(pendulum):
    """Pendulum kernel at c = 0 on 256 points with 16 substeps, plus alpha."""
    g = action.grid_for(pendulum, 256)
    k = action.build_kernel(pendulum, [0.0], g, 16)
    return k, wk.alpha(k)


@pytest.fixture(scope="session")
def pendulum_barrier(pendulum_256):
    k, a = pendulum_256
    return wk.truncated_barrier(k, a, 32, 64)


@pytest.fixture(scope="session")
def pendulum_64(pendulum):
    g = action.grid_for(pendulum, 64)
    k = action.build_kernel(pendulum, [0.0], g, 8)
    return k, wk.alpha(k)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
