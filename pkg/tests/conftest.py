import itertools

import numpy as np
import pytest

from changeframe.fitting import TimeDesign

_CRITERIA = []


@pytest.fixture
def record():
    """Collect one pass/fail line per acceptance criterion for the summary."""

    def _record(number, ok, detail):
        _CRITERIA.append((number, bool(ok), detail))

    return _record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    def order(row):
        head = str(row[0])
        digits = "".join(itertools.takewhile(str.isdigit, head))
        return int(digits or 0), head

    for number, ok, detail in sorted(_CRITERIA, key=order):
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def design():
    return TimeDesign.reference()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
