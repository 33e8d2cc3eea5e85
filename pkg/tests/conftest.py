import sys


def pytest_terminal_summary(terminalreporter):
    lines = [ln for mod in list(sys.modules.values()) for ln in getattr(mod, "ACCEPTANCE_LINES", [])]
    if lines:
        terminalreporter.section("acceptance criteria")
        for ln in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(ln)
