import pytest

_ACCEPTANCE = {}


@pytest.fixture
def record(capsys):
    """Log one acceptance line: ``record(number, passed, detail)``."""

    def _record(number, passed, detail):
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'} {detail}"
        _ACCEPTANCE[number] = line
        with capsys.disabled():
            print(f"\n  {line}")

    return _record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[number])
