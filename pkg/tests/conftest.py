import pytest

# filled by tests/test_acceptance.py, one line per criterion
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])


@pytest.fixture
def report():
    """``report(k, ok, detail)`` records and prints the verdict for criterion ``k``."""

    def record(k: int, ok: bool, detail: str) -> bool:
        line = f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES[k] = line
        print(line)
        return ok

    return record
