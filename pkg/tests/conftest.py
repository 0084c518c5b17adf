import os

# one pass/fail line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: list[str] = []

os.environ.setdefault("TIMECONV_DETERMINISTIC", "1")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
