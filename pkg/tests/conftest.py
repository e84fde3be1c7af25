from __future__ import annotations

import numpy as np
import pytest

from mflq import benchmark
from mflq.riccati import optimal_policy, solve_riccati


@pytest.fixture(scope="session")
def bench():
    return benchmark.benchmark_problem()


@pytest.fixture(scope="session")
def bench_sol(bench):
    return solve_riccati(bench)


@pytest.fixture(scope="session")
def bench_policy(bench_sol):
    return optimal_policy(bench_sol)


@pytest.fixture(scope="session")
def bench_init():
    return benchmark.benchmark_initial()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
