import pytest

# acceptance results, printed as one line per criterion at the end of the run
RESULTS: list[tuple[str, str, str]] = []


def record(criterion: str, status: str, detail: str) -> None:
    RESULTS.append((criterion, status, detail))
    print(f"{criterion}: {status}  {detail}")


def pytest_terminal_summary(terminalreporter):
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, status, detail in RESULTS:
        terminalreporter.write_line(f"{status:<5} {criterion}  {detail}")
