"""Seeded random graph generators and simulation schedules.

Seeds are plain integers fed to ``numpy.random.default_rng``; distinct seeds
give independent PCG64 streams. Callers that need many streams should derive
seeds with :func:`sbmfit.harness.experiments.derive_seed`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .netcore import (BlockMatrix, ClassAssignment, DomainError, Graph,
                      ProbabilityMatrixDense, bernoulli_kl, n_pairs)


class CalibrationError(ValueError):
    pass


class ScheduleError(ValueError):
    pass


def _sample(p: ProbabilityMatrixDense, seed) -> Graph:
    rng = np.random.default_rng(seed)
    return Graph.from_condensed(p.n_nodes, rng.random(len(p.p)) < p.p)


def gen_er(n: int, p: float, seed) -> tuple[Graph, ProbabilityMatrixDense]:
    if not 0.0 <= p <= 1.0:
        raise DomainError(f"p must lie in [0, 1], got {p}")
    P = ProbabilityMatrixDense.constant(n, p)
    return _sample(P, seed), P


def equal_assignment(n: int, k: int) -> ClassAssignment:
    """Contiguous classes; the first n mod k classes get one extra node."""
    if not 1 <= k <= n:
        raise DomainError(f"need 1 <= k <= n, got n={n}, k={k}")
    sizes = np.full(k, n // k)
    sizes[: n % k] += 1
    return ClassAssignment(np.repeat(np.arange(k), sizes), k)


@dataclass(frozen=True)
class PlantedModel:
    """Planted blockmodel with theta = alpha I + beta 11^T and near-equal classes."""

    n_nodes: int
    k: int
    alpha: float
    beta_p: float
    z_bar: ClassAssignment = field(compare=False, default=None)

    def __post_init__(self):
        if self.z_bar is None:
            object.__setattr__(self, "z_bar", equal_assignment(self.n_nodes, self.k))
        if not (0 <= self.beta_p and self.beta_p + self.alpha <= 1 and self.beta_p <= 1):
            raise DomainError("planted probabilities must lie in [0, 1]")

    @property
    def theta_bar(self) -> BlockMatrix:
        return BlockMatrix(self.alpha * np.eye(self.k) + self.beta_p)

    def probabilities(self) -> ProbabilityMatrixDense:
        return ProbabilityMatrixDense.from_blockmodel(self.z_bar, self.theta_bar)


def gen_blockmodel(model: PlantedModel, seed) -> tuple[Graph, ProbabilityMatrixDense]:
    P = model.probabilities()
    return _sample(P, seed), P


def _within_pairs(n: int, k: int) -> int:
    sizes = equal_assignment(n, k).class_sizes()
    return int(np.sum(sizes * (sizes - 1) // 2))


def divergence_target(m: float, n: int, k: int, gamma: float) -> float:
    return m * k ** gamma / (20.0 * n * n)


def calibrate_planted(n: int, k: int, target_m: float, gamma: float,
                      target_divergence: float | None = None) -> PlantedModel:
    """Solve for (alpha, beta) matching an expected edge count and a divergence.

    Constraints: ``n_in (alpha + beta) + n_out beta = target_m`` and
    ``D(alpha + beta || (alpha + 2 beta) / 2) = target_m K^gamma / (20 N^2)``.
    The first is linear, so alpha is eliminated exactly and the second is
    solved by bracketing root-finding in beta.
    """
    if k < 2:
        raise CalibrationError("need k >= 2 for distinct within/between probabilities")
    n_in = _within_pairs(n, k)
    n_out = n_pairs(n) - n_in
    if n_in == 0:
        raise CalibrationError("no within-class pairs (k too large for n)")
    if not 0 < target_m < n_pairs(n):
        raise CalibrationError(f"expected edges {target_m} outside (0, C(N,2))")
    dstar = divergence_target(target_m, n, k, gamma) if target_divergence is None else target_divergence
    pbar = target_m / n_pairs(n)

    def within(b: float) -> float:
        return (target_m - n_out * b) / n_in

    def resid(b: float) -> float:
        t_in = min(max(within(b), 0.0), 1.0)
        return bernoulli_kl(t_in, 0.5 * (t_in + b)) - dstar

    if dstar <= 0:
        b = pbar
    else:
        b_lo = max(0.0, (target_m - n_in) / n_out)
        if resid(b_lo) < 0:
            raise CalibrationError(
                f"divergence target {dstar:.6g} exceeds the maximum {resid(b_lo) + dstar:.6g} "
                f"attainable with expected edge count {target_m:.6g}")
        b = brentq(resid, b_lo, pbar, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    a = within(b) - b
    a = max(a, 0.0)
    model = PlantedModel(n, k, a, b)
    m_err = abs(n_in * (a + b) + n_out * b - target_m) / max(target_m, 1.0)
    d_err = abs(bernoulli_kl(a + b, 0.5 * (a + 2 * b)) - dstar)
    if m_err > 1e-9 or d_err > 1e-9:
        raise CalibrationError(f"calibration residuals too large (edges {m_err:.3g}, divergence {d_err:.3g})")
    return model


@dataclass(frozen=True)
class Schedule:
    """Growth schedule M(N) = N (log N)^m_exponent, K(N) = ceil(N^k_exponent).

    ``log_base`` defaults to e.
    """

    n_values: tuple[int, ...]
    m_exponent: float
    k_exponent: float
    gamma: float = 1.0
    log_base: float = math.e


def ceil_power(n: int, a: float) -> int:
    # guard against 32 ** 0.6 = 8.000000000000002
    return int(math.ceil(n ** a - 1e-9))


def expand_schedule(s: Schedule) -> list[tuple[int, float, int, float]]:
    out = []
    for n in s.n_values:
        m = n * (math.log(n) / math.log(s.log_base)) ** s.m_exponent
        if m >= n_pairs(n):
            raise ScheduleError(f"N={n}: M={m:.1f} is not below C(N,2)={n_pairs(n)}")
        k = ceil_power(n, s.k_exponent)
        if k > n:
            raise ScheduleError(f"N={n}: K={k} exceeds N")
        out.append((n, m, k, divergence_target(m, n, k, s.gamma)))
    return out
