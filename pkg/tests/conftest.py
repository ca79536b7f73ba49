import numpy as np
import pytest

from indweights import Dataset

ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE_KEY] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def acceptance(request):
    """Record one pass/fail line for an acceptance criterion, then assert it."""

    def record(number: int, ok: bool, detail: str):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} ({detail})"
        print(line)
        request.config.stash[ACCEPTANCE_KEY].append(line)
        assert ok, line

    return record


def random_dataset(rng, n, p, outcome=True):
    x = rng.standard_normal((n, p))
    a = x @ rng.uniform(-1, 1, p) + rng.standard_normal(n)
    y = a + x.sum(axis=1) + rng.standard_normal(n) if outcome else None
    return Dataset(x, a, y)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_data(rng):
    return random_dataset(rng, 30, 3)
