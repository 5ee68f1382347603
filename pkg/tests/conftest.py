import numpy as np
import pytest

from regstrain import GrayImage, generate_speckle


@pytest.fixture(scope="session")
def speckle128():
    return generate_speckle(128, 128, seed=11)


@pytest.fixture(scope="session")
def speckle96():
    return generate_speckle(96, 96, seed=4)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE_LINES

    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
