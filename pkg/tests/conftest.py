import numpy as np
import pytest

from tddisac.config import RadioConfig, SensingConfig, TddPattern, default_config

_CRITERIA = {}


@pytest.fixture(scope="session")
def table1():
    return default_config()


@pytest.fixture(scope="session")
def small():
    """A reduced frame (128 subcarriers, 8 x (10 DL + 4 UL) symbols) for fast tests."""
    return SensingConfig(RadioConfig(N=128), TddPattern(M_DL=10, M_UL=4, R=8))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def criterion():
    """Record an acceptance criterion's verdict for the end-of-run summary."""

    def record(number: int, passed: bool, detail: str):
        _CRITERIA[number] = (passed, detail)
        print(f"criterion {number}: {'PASS' if passed else 'FAIL'} ({detail})")
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        passed, detail = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
