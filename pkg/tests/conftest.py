import sys
from contextlib import contextmanager
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

ACCEPTANCE_LINES: list[str] = []


@contextmanager
def _record(name: str):
    detail: dict = {}
    try:
        yield detail
    except BaseException as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        line = f"FAIL  {name}: {msg}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        raise
    line = f"PASS  {name}" + (f": {detail['note']}" if "note" in detail else "")
    ACCEPTANCE_LINES.append(line)
    print(line)


@pytest.fixture
def criterion():
    """Context manager that records one PASS/FAIL line for an acceptance criterion."""
    return _record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
