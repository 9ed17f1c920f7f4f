import pytest

_CRITERIA = {}


@pytest.fixture
def record_criterion():
    """``record(number, passed, detail)``; results are listed in the terminal summary."""

    def record(number, passed, detail):
        _CRITERIA[number] = (bool(passed), detail)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        passed, detail = _CRITERIA[n]
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'} criterion {n}: {detail}")
