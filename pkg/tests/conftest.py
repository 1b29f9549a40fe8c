import pytest

_RESULTS: dict[str, tuple[bool, str]] = {}


@pytest.fixture
def record_criterion():
    """Store one acceptance outcome; the terminal summary prints them in order."""
    def record(name: str, passed: bool, detail: str) -> bool:
        _RESULTS[name] = (bool(passed), detail)
        return bool(passed)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_RESULTS):
        passed, detail = _RESULTS[name]
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")
