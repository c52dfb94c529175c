import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_VERDICTS = []


@pytest.fixture
def verdict(capsys):
    """Record a ``[criterion n] PASS|FAIL`` line, shown live and again in the summary."""

    def record(n, ok, detail):
        line = f"[criterion {n}] {'PASS' if ok else 'FAIL'}: {detail}"
        _VERDICTS.append(line)
        with capsys.disabled():
            print("\n" + line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in _VERDICTS:
            terminalreporter.write_line(line)
