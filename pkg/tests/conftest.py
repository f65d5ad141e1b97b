"""Collects acceptance verdicts and prints them at the end of the session."""

import pytest

ACCEPTANCE = []


@pytest.fixture
def verdict():
    """``verdict(number, title, ok, detail)`` records and prints one PASS/FAIL line."""

    def record(number, title, ok, detail=""):
        line = f"{'PASS' if ok else 'FAIL'} [{number}] {title}" + (f": {detail}" if detail else "")
        ACCEPTANCE.append((number, line))
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(ACCEPTANCE, key=lambda item: item[0]):
        terminalreporter.write_line(line)
