import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

# criterion number -> (title, detail); filled by tests/test_acceptance.py
ACCEPTANCE_DETAILS = {}
_ACCEPTANCE_OUTCOMES = {}


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_runtest_logreport(report):
    name = report.nodeid.rsplit("::", 1)[-1]
    if "test_acceptance.py" not in report.nodeid or not name.startswith("test_criterion_"):
        return
    num = int(name.split("_")[2])
    if report.when == "call" or report.outcome != "passed":
        prev = _ACCEPTANCE_OUTCOMES.get(num, True)
        _ACCEPTANCE_OUTCOMES[num] = prev and report.outcome == "passed"


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_ACCEPTANCE_OUTCOMES):
        title, detail = ACCEPTANCE_DETAILS.get(num, ("", ""))
        status = "PASS" if _ACCEPTANCE_OUTCOMES[num] else "FAIL"
        terminalreporter.write_line(f"{status} criterion {num}: {title} {detail}".rstrip())
