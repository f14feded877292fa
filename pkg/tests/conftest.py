import sys
from pathlib import Path

import pytest

# oracles.py lives next to the tests
sys.path.insert(0, str(Path(__file__).parent))

_ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance_line():
    """Record one pass/fail line for the acceptance summary (also echoed at once)."""

    def record(criterion, ok, detail):
        status = {True: "PASS", False: "FAIL", None: "SKIP"}[ok]
        line = f"[{status}] criterion {criterion}: {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
