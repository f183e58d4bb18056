import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("repo", deadline=None, derandomize=True, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")

_CRITERIA = []


@pytest.fixture
def criterion():
    """Record one acceptance line: ``criterion(number, title, ok, detail)``."""

    def record(number, title, ok, detail=""):
        _CRITERIA.append((number, title, bool(ok), detail))
        return ok

    return record


def _order(row):
    label = str(row[0])
    digits = label.rstrip("abcdefghijklmnopqrstuvwxyz")
    return int(digits), label


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, ok, detail in sorted(_CRITERIA, key=_order):
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {str(number):>3}. {title}: {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
