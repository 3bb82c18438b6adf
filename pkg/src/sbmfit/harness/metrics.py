"""Evaluation statistics used by the experiment drivers."""

from __future__ import annotations

from collections import defaultdict

import numpy as np
from scipy.stats import theilslopes

from ..netcore import (ClassAssignment, DomainError, Graph, ProbabilityMatrixDense,
                       expected_profile_log_likelihood, profile_log_likelihood)


def misclassification_count(z_true: ClassAssignment, z_est: ClassAssignment) -> int:
    """Nodes whose true class is not a majority class within their estimated class.

    Every true class tied for the largest count within an estimated class
    counts as majority there, so only members of strictly smaller groups err.
    """
    t = np.asarray(z_true.labels if isinstance(z_true, ClassAssignment) else z_true)
    e = np.asarray(z_est.labels if isinstance(z_est, ClassAssignment) else z_est)
    if t.shape != e.shape:
        raise DomainError(f"assignments have different lengths ({t.size} vs {e.size})")
    if t.size == 0:
        return 0
    _, ti = np.unique(t, return_inverse=True)
    _, ei = np.unique(e, return_inverse=True)
    table = np.zeros((ei.max() + 1, ti.max() + 1), dtype=np.int64)
    np.add.at(table, (ei, ti), 1)
    top = table.max(axis=1, keepdims=True)
    return int(t.size - np.where(table == top, table, 0).sum())


def likelihood_error_stat(g: Graph, p: ProbabilityMatrixDense, z: ClassAssignment) -> float:
    m = p.expected_edges
    if not m > 0:
        raise DomainError("expected edge count must be positive")
    return abs(profile_log_likelihood(g, z) - expected_profile_log_likelihood(p, z)) / m


def median_by(xs, ys) -> tuple[np.ndarray, np.ndarray]:
    """Group ys by x and return (sorted x, per-x median)."""
    groups = defaultdict(list)
    for x, y in zip(xs, ys):
        groups[x].append(y)
    keys = np.array(sorted(groups), dtype=float)
    return keys, np.array([np.median(groups[k]) for k in sorted(groups)])


def trend_slope(xs, ys) -> float:
    """Theil-Sen slope through the per-x medians."""
    x, y = median_by(xs, ys)
    if x.size < 2:
        raise DomainError("need at least two distinct x values for a trend")
    return float(theilslopes(y, x)[0])
