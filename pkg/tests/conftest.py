import pytest

_LINES = []


@pytest.fixture
def acceptance():
    """record(ok, label, detail): one PASS/FAIL line per criterion."""

    def record(ok, label, detail=""):
        line = f"{'PASS' if ok else 'FAIL'}  {label}  {detail}".rstrip()
        _LINES.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in _LINES:
            terminalreporter.write_line(line)
