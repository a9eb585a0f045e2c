import pytest

# (criterion, passed, detail) lines collected by the acceptance suite
ACCEPTANCE_LINES: list[tuple[str, bool, str]] = []


@pytest.fixture
def report_criterion():
    def record(name: str, passed: bool, detail: str = "") -> None:
        ACCEPTANCE_LINES.append((name, passed, detail))
        print(f"{'PASS' if passed else 'FAIL'} {name}: {detail}")

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in ACCEPTANCE_LINES:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'} {name}: {detail}")
