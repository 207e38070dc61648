import numpy as np
import pytest

from wmnet import tensor as T


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def f64():
    with T.precision(np.float64):
        yield


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import CRITERIA, RESULTS, format_line
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, _ in CRITERIA:
        if name in RESULTS:
            terminalreporter.write_line(format_line(name))
