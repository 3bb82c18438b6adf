import itertools

import numpy as np
import pytest

from sbmfit.netcore import ClassAssignment, Graph, ProbabilityMatrixDense


def random_instance(rng, n_max=12, k_max=3, n_min=2):
    """Random graph, probabilities and assignment for property checks."""
    n = int(rng.integers(n_min, n_max + 1))
    k = int(rng.integers(1, k_max + 1))
    p = rng.uniform(0.05, 0.95, size=n * (n - 1) // 2)
    adj = rng.random(len(p)) < p
    return (Graph.from_condensed(n, adj), ProbabilityMatrixDense(n, p),
            ClassAssignment(rng.integers(0, k, size=n), k))


def brute_loglik(adj_dense, labels, theta):
    """Pair-by-pair log-likelihood straight from the definition."""
    n = len(labels)
    tot = 0.0
    for i, j in itertools.combinations(range(n), 2):
        t = theta[labels[i], labels[j]]
        a = adj_dense[i, j]
        tot += a * np.log(t) if a else np.log1p(-t)
    return tot


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE_LINES: list[str] = []


def report(criterion: str, ok: bool, detail: str) -> bool:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
