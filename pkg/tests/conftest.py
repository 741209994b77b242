import itertools
import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def brute_statistic(labels):
    """Double loop over every horizontal and vertical pair."""
    z = np.asarray(labels)
    rows, cols = z.shape
    s = 0
    for r in range(rows):
        for c in range(cols):
            if c + 1 < cols and z[r, c] == z[r, c + 1]:
                s += 1
            if r + 1 < rows and z[r, c] == z[r + 1, c]:
                s += 1
    return s


def brute_moments(rows, cols, k, beta):
    """Mean and sd of S by summing over every labelling with itertools."""
    weights = []
    stats = []
    for flat in itertools.product(range(1, k + 1), repeat=rows * cols):
        s = brute_statistic(np.array(flat).reshape(rows, cols))
        stats.append(s)
        weights.append(math.exp(beta * s))
    w = np.array(weights) / sum(weights)
    s = np.array(stats, dtype=float)
    mean = float(w @ s)
    return mean, math.sqrt(float(w @ (s - mean) ** 2))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# (criterion, title, passed, detail) rows filled in by test_acceptance.py
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n, title, ok, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {n:>2}. {title}: {detail}")
