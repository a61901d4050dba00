import pytest

CRITERIA: list[str] = []


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line; the lines are echoed in the terminal summary."""

    def report(number: int, ok: bool, detail: str) -> None:
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        CRITERIA.append(line)
        print(line)
        assert ok, line

    return report


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(CRITERIA, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
