import time

import pytest

_LINES = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_LINES] = []


class Criterion:
    """Records one PASS/FAIL line for an acceptance criterion and fails the test on FAIL."""

    def __init__(self, lines, name):
        self.lines = lines
        self.name = name
        self.start = time.perf_counter()

    def check(self, ok: bool, detail: str) -> None:
        elapsed = time.perf_counter() - self.start
        line = f"{'PASS' if ok else 'FAIL'}  {self.name}: {detail} [{elapsed:.1f} s]"
        self.lines.append(line)
        print(line)
        assert ok, line


@pytest.fixture
def criterion(request):
    return lambda name: Criterion(request.config.stash[_LINES], name)


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
