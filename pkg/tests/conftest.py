import pytest

_REPORT: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record one summary line per acceptance criterion: ``criterion(n, ok, text)``."""

    def record(number: int, ok: bool, text: str) -> bool:
        _REPORT[number] = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {text}"
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _REPORT:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_REPORT):
        terminalreporter.write_line(_REPORT[number])
