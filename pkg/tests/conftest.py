import numpy as np
import pytest

from dualbermudan import GbmModel, TimeGrid


@pytest.fixture
def basket_model():
    return GbmModel(5, 0.05, 0.0, 0.2, 100.0, 100.0, "basket_put")


@pytest.fixture
def small_grid():
    return TimeGrid(3.0, 3, 10)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = {}


@pytest.fixture(scope="session")
def acceptance_report():
    """Record one summary line per acceptance criterion."""

    def record(number, title, passed, detail=""):
        status = "PASS" if passed else "FAIL"
        ACCEPTANCE_LINES[number] = f"criterion {number} {status}  {title}" + (f"  [{detail}]" if detail else "")
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[number])
