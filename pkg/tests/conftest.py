import pytest

_VERDICTS: list[str] = []


@pytest.fixture
def verdict():
    """Record one acceptance line; printed again in the terminal summary."""

    def record(criterion: str, ok: bool, detail: str) -> bool:
        line = f"ACCEPTANCE {criterion}: {'PASS' if ok else 'FAIL'} - {detail}"
        print(line)
        _VERDICTS.append(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in _VERDICTS:
            terminalreporter.write_line(line)
