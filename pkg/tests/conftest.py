import pytest

_VERDICTS = []


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line for an acceptance criterion and fail the test on FAIL."""

    def record(label: str, ok: bool, detail: str):
        line = f"{'PASS' if ok else 'FAIL'} criterion {label}: {detail}"
        _VERDICTS.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in _VERDICTS:
            terminalreporter.write_line(line)
