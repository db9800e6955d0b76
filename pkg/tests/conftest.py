"""Shared test plumbing: the acceptance-criteria summary block."""

ACCEPTANCE_RESULTS: list[str] = []


def record_criterion(name: str, ok: bool, detail: str) -> None:
    """Log one pass/fail line for an acceptance criterion."""
    line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
    ACCEPTANCE_RESULTS.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_RESULTS:
            terminalreporter.write_line(line)
