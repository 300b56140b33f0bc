"""Session fixtures shared by the acceptance suite and the slower property tests."""

import time

import numpy as np
import pytest

from mirobid.benchmark import run_benchmark
from mirobid.market import generate_dataset, two_regime_config
from mirobid.training import TrainConfig, Workspace, train_policy

ACCEPTANCE_LINES = []

BENCH_SEEDS = (0, 1, 2, 3, 4)
BENCH_METHODS = ("pid", "mirocl", "miro-p", "miro-d", "erm")


def record(criterion, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {criterion:>2}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def benchmark():
    """Every ordering method on five seeds of the default synthetic benchmark."""
    t0 = time.perf_counter()
    run = run_benchmark(BENCH_SEEDS, BENCH_METHODS, keep=("mirocl",), log=print)
    run.total_seconds = time.perf_counter() - t0
    return run


class TwoRegime:
    def __init__(self, seed=0):
        self.cfg = two_regime_config(seed=seed)
        self.ws = Workspace(generate_dataset(self.cfg), seed)
        self.ws.world_model
        self.seed = seed
        self._policies = {}

    def policy(self, method):
        if method not in self._policies:
            self._policies[method], _, _ = train_policy(method, self.ws, self.seed, TrainConfig())
        return self._policies[method]

    @staticmethod
    def regime(day):
        return int(day.k_schedule[0] > 0.5)


@pytest.fixture(scope="session")
def two_regime():
    return TwoRegime()


def fisher_direction(X, y):
    m0, m1 = X[y == 0].mean(0), X[y == 1].mean(0)
    Sw = np.cov(X[y == 0].T) + np.cov(X[y == 1].T) + 1e-6 * np.eye(X.shape[1])
    w = np.linalg.solve(Sw, m1 - m0)
    return w, 0.5 * (m0 + m1) @ w
