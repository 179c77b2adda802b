import numpy as np
import pytest

from homogbl.grid import CoefficientField


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def trig():
    return CoefficientField.trig_isotropic(2, 1)


@pytest.fixture(scope="session")
def layered():
    return CoefficientField.layered(1, 4)


@pytest.fixture(scope="session")
def checker():
    return CoefficientField.checkerboard(1, 4)


CRITERIA = pytest.StashKey[list]()


@pytest.fixture
def criterion_log(request):
    """Collects one summary line per acceptance criterion for the terminal report."""
    return request.config.stash.setdefault(CRITERIA, [])


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(CRITERIA, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
