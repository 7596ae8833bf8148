import numpy as np
import pytest

from cavsim.spectrum import default_table
from cavsim.zeeman import ThresholdModel

# verdict lines collected by the acceptance module, printed at session end
ACCEPTANCE_LINES = {}


@pytest.fixture(scope="session")
def table():
    return default_table()


@pytest.fixture(scope="session")
def threshold_model(table):
    return ThresholdModel(table=table).fit()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
