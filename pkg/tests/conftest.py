import pytest

ACCEPTANCE_LINES = []


@pytest.fixture
def report():
    """Record one pass/fail line per acceptance criterion."""

    def record(criterion, passed, detail, warn=False):
        status = "PASS" if passed else ("WARN" if warn else "FAIL")
        ACCEPTANCE_LINES.append(f"{status}  criterion {criterion}: {detail}")

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
