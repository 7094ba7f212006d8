import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

# "criterion N: PASS|FAIL ..." lines collected by test_acceptance.py
CRITERIA_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if CRITERIA_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(CRITERIA_LINES, key=lambda s: (int(s.split()[1].rstrip(":").rstrip("abc")), s)):
            terminalreporter.write_line(line)
