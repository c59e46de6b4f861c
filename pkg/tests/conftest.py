"""Collects acceptance verdict lines and echoes them after the test run."""
import pytest

_acceptance_lines: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in _acceptance_lines:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def verdict():
    """Record one pass/fail line per acceptance criterion and enforce it."""

    def record(name: str, ok: bool, detail: str) -> None:
        line = f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}"
        _acceptance_lines.append(line)
        print(line)
        assert ok, line

    return record
