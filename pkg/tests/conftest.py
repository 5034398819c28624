import pytest

_CRITERIA = {}


@pytest.fixture
def report():
    """Record ``report(k, passed, detail)`` for the acceptance summary."""
    def _record(k, passed, detail):
        line = f"criterion {k:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
        _CRITERIA[k] = line
        print(line)
        return passed
    return _record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[k])
