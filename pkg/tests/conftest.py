import sys
from pathlib import Path

# lets test modules import the shared oracle helpers
sys.path.insert(0, str(Path(__file__).parent))

# one line per acceptance criterion, appended by tests/test_acceptance.py
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
