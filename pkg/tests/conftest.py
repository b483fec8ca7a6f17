"""Shared fixtures: cached builtin runs and the acceptance report lines."""

import time

import pytest

from predprey import cli
from predprey.scenarios import builtin, builtin_scenarios

ACCEPTANCE_LINES: list[str] = []


class BuiltinRuns:
    """Full-length runs of the builtin scenarios, computed once per session."""

    def __init__(self):
        self._reports = {}
        self.seconds = {}

    def __call__(self, name: str, method: str = "both") -> cli.RunReport:
        key = (name, method)
        if key not in self._reports:
            t0 = time.perf_counter()
            self._reports[key] = cli.run(builtin(name), method)
            self.seconds[key] = time.perf_counter() - t0
        return self._reports[key]

    @property
    def names(self) -> list[str]:
        return [s.name for s in builtin_scenarios()]


@pytest.fixture(scope="session")
def builtin_runs() -> BuiltinRuns:
    return BuiltinRuns()


@pytest.fixture(scope="session")
def acceptance():
    """Record one PASS/FAIL line per criterion; printed in the run summary."""

    def record(number: int, ok: bool, details: str) -> bool:
        line = f"ACCEPTANCE {number:2d} {'PASS' if ok else 'FAIL'}: {details}"
        print(line)
        ACCEPTANCE_LINES.append(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
