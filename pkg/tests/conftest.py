import warnings

import numpy as np
import pytest

from mtiv.compliers import AnalyticCells, CellData
from mtiv.dgp import ResponseTypeDesign, ch_example_design, preset, simulate

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture(autouse=True)
def _quiet_runtime_warnings():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        yield


@pytest.fixture(scope="session")
def example_i2_config():
    return preset("example_I", 2)


@pytest.fixture(scope="session")
def example_i2_data(example_i2_config):
    return simulate(example_i2_config, 20_000, seed=3)


@pytest.fixture(scope="session")
def example_i2_cells(example_i2_data):
    return CellData(example_i2_data)


@pytest.fixture(scope="session")
def analytic_i2(example_i2_config):
    return AnalyticCells(ResponseTypeDesign.from_config(example_i2_config, n=100_000))


@pytest.fixture(scope="session")
def ch_cells():
    return AnalyticCells(ch_example_design())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
