from __future__ import annotations

CRITERIA: dict[int, str] = {}


def record(number: int, passed: bool, text: str) -> bool:
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:2d}: {text}"
    CRITERIA[number] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(CRITERIA):
            terminalreporter.write_line(CRITERIA[n])
