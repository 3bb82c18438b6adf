"""Finite-sample confidence bounds on block-probability estimates.

With probability at least 1 - delta, the total divergence
``sum_{a<=b} n_ab D(theta_hat_ab || theta_bar_ab)`` stays below
``N ln K + (K^2 + K) ln(N/K + 1) + ln(1/delta)`` simultaneously for every
class assignment. Everything here is in nats.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .netcore import (ClassAssignment, DomainError, Graph, ProbabilityMatrixDense,
                      bernoulli_kl, block_stats, n_pairs, theta_bar)


@dataclass(frozen=True)
class BoundReport:
    n_nodes: int
    k: int
    delta: float
    epsilon_kl: float
    epsilon_kl_normalized: float
    epsilon_rms_normalized: float


def kl_confidence_bound(n: int, k: int, delta: float) -> float:
    if not 0.0 < delta < 1.0:
        raise DomainError(f"delta must lie in (0, 1), got {delta}")
    if k < 1 or n < 1 or k > n:
        raise DomainError(f"need 1 <= k <= n, got n={n}, k={k}")
    return n * math.log(k) + (k * k + k) * math.log(n / k + 1.0) + math.log(1.0 / delta)


def rms_bound_from_kl(epsilon_kl: float, n: int | None = None) -> float | tuple[float, float]:
    """Root-sum-square bound sqrt(eps/2) implied by D(p||q) >= 2 (p - q)^2.

    With ``n`` given, returns ``(raw, normalized)`` where normalized divides
    by sqrt(C(n, 2)).
    """
    if epsilon_kl < 0:
        raise DomainError("epsilon_kl must be nonnegative")
    raw = math.sqrt(epsilon_kl / 2.0)
    if n is None:
        return raw
    return raw, raw / math.sqrt(n_pairs(n))


def bound_report(n: int, k: int, delta: float = 0.05) -> BoundReport:
    eps = kl_confidence_bound(n, k, delta)
    _, rms_norm = rms_bound_from_kl(eps, n)
    return BoundReport(n, k, delta, eps, eps / n_pairs(n), rms_norm)


def _occupied_blocks(g: Graph, p: ProbabilityMatrixDense, z: ClassAssignment):
    st = block_stats(g, z)
    iu = np.triu_indices(z.k)
    n = st.pair_counts[iu]
    ok = n > 0
    th = st.edge_counts[iu][ok] / n[ok]
    tb = theta_bar(p, z).vals[iu][ok]
    return n[ok], th, tb


def observed_kl_error(g: Graph, p: ProbabilityMatrixDense, z: ClassAssignment) -> float:
    n, th, tb = _occupied_blocks(g, p, z)
    return float(np.sum(n * bernoulli_kl(th, tb)))


def observed_rms_error(g: Graph, p: ProbabilityMatrixDense, z: ClassAssignment) -> float:
    n, th, tb = _occupied_blocks(g, p, z)
    return float(np.sqrt(np.sum(n * (th - tb) ** 2)))
