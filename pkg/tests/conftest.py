import numpy as np
import pytest

from priceshap import testbed


@pytest.fixture(scope="session")
def default_frame():
    return testbed.generate(testbed.SyntheticSpec())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def hourly(start: str, n: int) -> np.ndarray:
    return (np.datetime64(start, "h") + np.arange(n)).astype("datetime64[s]")


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
