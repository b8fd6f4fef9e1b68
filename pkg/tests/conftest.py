import numpy as np
import pytest

from hanfuse import kernels


def _available():
    names = []
    for name in kernels.BACKENDS:
        try:
            kernels.load_backend(name)
        except ImportError:
            continue
        names.append(name)
    return names


@pytest.fixture(params=_available())
def backend(request):
    with kernels.use_backend(request.param):
        yield request.param


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
