import pytest

_ACCEPTANCE: list = []


@pytest.fixture
def acceptance():
    """Record one summary line per acceptance criterion."""
    def record(label: str, passed: bool, detail: str, seconds: float):
        line = f"{'PASS' if passed else 'FAIL'} {label}: {detail} [{seconds:.2f} s]"
        _ACCEPTANCE.append(line)
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
