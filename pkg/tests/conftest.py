import re

import numpy as np
import pytest

from swarmfl.datagen import Dataset

_ACCEPTANCE: dict[int, tuple[str, str]] = {}
_CRIT = re.compile(r"test_criterion_(\d+)_(\w+)")


def pytest_runtest_logreport(report):
    m = _CRIT.search(report.nodeid)
    if not m:
        return
    n = int(m.group(1))
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        outcome = "PASS" if report.outcome == "passed" else ("SKIP" if report.outcome == "skipped" else "FAIL")
        _ACCEPTANCE[n] = (m.group(2), outcome)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        name, outcome = _ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n} [{name}]: {outcome}")


@pytest.fixture
def tiny_dataset():
    """Six 2-feature samples over three classes."""
    x = np.array([[0.0, 1.0], [1.0, 0.0], [2.0, 2.0], [-1.0, 0.5], [0.5, -1.0], [1.5, 1.5]])
    y = np.array([0, 1, 2, 0, 1, 2])
    return Dataset(x, y, 3)
