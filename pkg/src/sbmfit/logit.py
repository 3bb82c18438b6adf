"""Covariate-adjusted logit blockmodel.

The log-odds of an edge between i and j is ``theta_tilde[z_i, z_j] + x(i, j) @ beta``
where ``x(i, j)`` encodes, per categorical covariate, which level the two nodes
share (effects coded, zero when they share none). Fitting alternates
Metropolis moves on z at fixed coefficients with damped Newton on the
coefficients at fixed z.

Every likelihood accepts an optional boolean ``pair_mask`` over the condensed
pair index; pairs outside the mask are left out of all sums (used for
cross-validation holdout).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import expit, log_expit

from .fit import SamplerConfig, gibbs_fit
from .netcore import (ClassAssignment, DomainError, Graph, _triu, n_pairs)


class OptimizerError(RuntimeError):
    pass


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


class CovariateTable:
    """Named categorical node covariates, stored as level codes 0..L-1."""

    def __init__(self, n_nodes: int):
        self.n_nodes = int(n_nodes)
        self.names: list[str] = []
        self.codes: list[np.ndarray] = []
        self.levels: list[list[str]] = []

    def add(self, name: str, values: Sequence) -> CovariateTable:
        """Add a covariate; levels are the distinct values present (sorted)."""
        vals = np.asarray(values)
        if vals.shape != (self.n_nodes,):
            raise DomainError(f"covariate {name!r} must have {self.n_nodes} entries")
        if name in self.names:
            raise DomainError(f"duplicate covariate {name!r}")
        uniq, codes = np.unique(vals, return_inverse=True)
        if len(uniq) < 2:
            raise DomainError(f"covariate {name!r} needs at least two levels")
        self.names.append(name)
        self.codes.append(codes.astype(np.int64))
        self.levels.append([str(u) for u in uniq])
        return self

    def n_levels(self) -> list[int]:
        return [len(lv) for lv in self.levels]

    def __len__(self) -> int:
        return len(self.names)


def degree_bins(degrees: np.ndarray, n_bins: int = 8) -> np.ndarray:
    """Bin values at their quantiles j/n_bins.

    A value's bin is the number of cut points strictly below it, so ties at a
    cut point go to the lower bin.
    """
    if n_bins < 2:
        raise DomainError("n_bins must be at least 2")
    deg = np.asarray(degrees, dtype=float)
    cuts = np.quantile(deg, np.arange(1, n_bins) / n_bins)
    return np.searchsorted(cuts, deg, side="left")


def degree_bin_covariate(g: Graph, n_bins: int = 8) -> np.ndarray:
    return degree_bins(g.degrees(), n_bins)


@dataclass
class PairDesign:
    """Effects-coded shared-level features for every node pair.

    ``shared[c][p]`` is the level of covariate c shared by the two nodes of
    pair p, or -1 if they differ.
    """

    n_nodes: int
    names: list[str]
    n_levels: list[int]
    shared: list[np.ndarray]

    @property
    def dim_beta(self) -> int:
        return sum(L - 1 for L in self.n_levels)

    def offsets(self) -> list[int]:
        return list(np.cumsum([0] + [L - 1 for L in self.n_levels])[:-1])

    def matrix(self, rows: np.ndarray | None = None) -> np.ndarray:
        """Dense feature matrix, optionally for a subset of pair indices."""
        npairs = n_pairs(self.n_nodes) if rows is None else len(rows)
        X = np.zeros((npairs, self.dim_beta))
        for off, L, sh in zip(self.offsets(), self.n_levels, self.shared):
            s = sh if rows is None else sh[rows]
            free = (s >= 0) & (s < L - 1)
            X[np.flatnonzero(free), off + s[free]] = 1.0
            X[s == L - 1, off:off + L - 1] = -1.0
        return X

    def features(self, i: int, j: int) -> np.ndarray:
        if i == j:
            raise DomainError("no features for a self pair")
        i, j = min(i, j), max(i, j)
        p = i * self.n_nodes - i * (i + 1) // 2 + (j - i - 1)
        return self.matrix(np.array([p]))[0]

    def full_coefficients(self, beta: np.ndarray) -> list[np.ndarray]:
        """Per-covariate coefficients over all levels; each sums to zero."""
        out = []
        for off, L in zip(self.offsets(), self.n_levels):
            free = np.asarray(beta[off:off + L - 1], dtype=float)
            out.append(np.append(free, -free.sum()))
        return out


def build_pair_design(cov: CovariateTable) -> PairDesign:
    iu, ju = _triu(cov.n_nodes)
    shared = []
    for codes in cov.codes:
        a, b = codes[iu], codes[ju]
        shared.append(np.where(a == b, a, -1).astype(np.int32))
    return PairDesign(cov.n_nodes, list(cov.names), cov.n_levels(), shared)


def empty_design(n_nodes: int) -> PairDesign:
    return PairDesign(n_nodes, [], [], [])


@dataclass
class LogitModel:
    k: int
    theta_tilde: np.ndarray
    beta: np.ndarray
    z: ClassAssignment
    loglik: float | None = None
    trace: list[float] = field(default_factory=list)
    flags: list[str] = field(default_factory=list)

    def __post_init__(self):
        t = np.asarray(self.theta_tilde, dtype=float)
        if t.shape != (self.k, self.k) or not np.allclose(t, t.T, rtol=0, atol=1e-12):
            raise DomainError("theta_tilde must be a symmetric k x k matrix")
        if not np.all(np.isfinite(t)):
            raise DomainError("theta_tilde must be finite")
        self.theta_tilde = t
        self.beta = np.asarray(self.beta, dtype=float)


def _block_index(z: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-pair block parameter index plus the (a, b) of each parameter."""
    iu, ju = _triu(len(z))
    a, b = z[iu], z[ju]
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    ua, ub = np.triu_indices(k)
    lookup = np.zeros((k, k), dtype=np.int64)
    lookup[ua, ub] = np.arange(len(ua))
    return lookup[lo, hi], ua, ub


def pair_logits(m: LogitModel, design: PairDesign, rows: np.ndarray | None = None) -> np.ndarray:
    iu, ju = _triu(m.z.n_nodes)
    if rows is not None:
        iu, ju = iu[rows], ju[rows]
    eta = m.theta_tilde[m.z.labels[iu], m.z.labels[ju]]
    if design.dim_beta:
        eta = eta + design.matrix(rows) @ m.beta
    return eta


def predict_proba(m: LogitModel, design: PairDesign, rows: np.ndarray | None = None) -> np.ndarray:
    return expit(pair_logits(m, design, rows))


def logit_log_likelihood(g: Graph, m: LogitModel, design: PairDesign,
                         pair_mask: np.ndarray | None = None) -> float:
    if m.z.n_nodes != g.n_nodes or design.n_nodes != g.n_nodes:
        raise DomainError("graph, model and design disagree on N")
    if len(m.beta) != design.dim_beta:
        raise DomainError("beta length does not match the design")
    rows = None if pair_mask is None else np.flatnonzero(pair_mask)
    eta = pair_logits(m, design, rows)
    y = g.condensed()
    if rows is not None:
        y = y[rows]
    return float(np.sum(y * eta - _softplus(eta)))


@dataclass
class NewtonResult:
    theta_tilde: np.ndarray
    beta: np.ndarray
    loglik: float
    n_iter: int
    converged: bool
    grad_norm: float
    ridge: float
    flags: list[str]


class _LogitObjective:
    """Logistic log-likelihood in (block log-odds, beta) at a fixed assignment."""

    def __init__(self, g: Graph, z: np.ndarray, k: int, design: PairDesign,
                 pair_mask: np.ndarray | None, ridge: float = 0.0):
        bidx, self.ua, self.ub = _block_index(z, k)
        rows = None if pair_mask is None else np.flatnonzero(pair_mask)
        y = g.condensed()
        if rows is not None:
            bidx, y = bidx[rows], y[rows]
        self.bidx = bidx
        self.y = y.astype(float)
        self.X = design.matrix(rows)
        self.nb = len(self.ua)
        self.dim = self.nb + self.X.shape[1]
        self.ridge = ridge

    def eta(self, params: np.ndarray) -> np.ndarray:
        return params[:self.nb][self.bidx] + self.X @ params[self.nb:]

    def value(self, params: np.ndarray) -> float:
        eta = self.eta(params)
        return float(np.sum(self.y * eta - _softplus(eta)) - 0.5 * self.ridge * params @ params)

    def gradient(self, params: np.ndarray) -> np.ndarray:
        r = self.y - expit(self.eta(params))
        g = np.concatenate([np.bincount(self.bidx, weights=r, minlength=self.nb), self.X.T @ r])
        return g - self.ridge * params

    def neg_hessian(self, params: np.ndarray | None = None) -> np.ndarray:
        if params is None:
            w = np.ones(len(self.y))
        else:
            p = expit(self.eta(params))
            w = p * (1.0 - p)
        H = np.zeros((self.dim, self.dim))
        nb = self.nb
        H[np.arange(nb), np.arange(nb)] = np.bincount(self.bidx, weights=w, minlength=nb)
        if self.X.shape[1]:
            Xw = self.X * w[:, None]
            cross = np.stack([np.bincount(self.bidx, weights=Xw[:, c], minlength=nb)
                              for c in range(self.X.shape[1])], axis=1)
            H[:nb, nb:] = cross
            H[nb:, :nb] = cross.T
            H[nb:, nb:] = self.X.T @ Xw
        return H + self.ridge * np.eye(self.dim)


def _pack(theta_tilde: np.ndarray, beta: np.ndarray, ua, ub) -> np.ndarray:
    return np.concatenate([theta_tilde[ua, ub], beta])


def _unpack(params: np.ndarray, k: int, ua, ub) -> tuple[np.ndarray, np.ndarray]:
    t = np.zeros((k, k))
    t[ua, ub] = params[:len(ua)]
    t[ub, ua] = params[:len(ua)]
    return t, params[len(ua):].copy()


def optimize_theta_beta(g: Graph, z: ClassAssignment, design: PairDesign,
                        init: tuple[np.ndarray, np.ndarray] | None = None,
                        pair_mask: np.ndarray | None = None, *,
                        max_iter: int = 100, tol: float = 1e-8,
                        ridge: float = 1e-8) -> NewtonResult:
    """Maximize the logit blockmodel likelihood in (theta_tilde, beta) at fixed z.

    Damped Newton with step halving. A rank-deficient design or a block whose
    observed pairs are all edges (or all non-edges) gets ``ridge`` added and
    is reported in ``flags``.
    """
    k = z.k
    obj = _LogitObjective(g, z.labels, k, design, pair_mask)

    flags = []
    H0 = obj.neg_hessian()
    ev = np.linalg.eigvalsh(H0) if obj.dim else np.array([1.0])
    if ev.min() <= 1e-10 * max(ev.max(), 1.0):
        flags.append("rank_deficient")
    n_blk = np.bincount(obj.bidx, minlength=obj.nb)
    e_blk = np.bincount(obj.bidx, weights=obj.y, minlength=obj.nb)
    for b in np.flatnonzero((n_blk > 0) & ((e_blk == 0) | (e_blk == n_blk))):
        flags.append(f"separable_block({obj.ua[b]},{obj.ub[b]})")
    if flags:
        obj.ridge = ridge

    if init is not None:
        params = _pack(np.asarray(init[0], float), np.asarray(init[1], float), obj.ua, obj.ub)
    else:
        th = (e_blk + 0.5) / (n_blk + 1.0)
        params = np.concatenate([np.log(th) - np.log1p(-th), np.zeros(design.dim_beta)])

    f = obj.value(params)
    if not np.isfinite(f):
        raise OptimizerError(f"non-finite objective at the initial point: {params!r}")
    converged = False
    it = 0
    grad = obj.gradient(params)
    for it in range(1, max_iter + 1):
        if np.max(np.abs(grad), initial=0.0) < tol:
            converged = True
            it -= 1
            break
        H = obj.neg_hessian(params)
        try:
            step = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, grad, rcond=None)[0]
        slope = float(grad @ step)
        t = 1.0
        for _ in range(60):
            cand = params + t * step
            fc = obj.value(cand)
            if not np.isfinite(fc):
                raise OptimizerError(f"non-finite objective in line search at iteration {it}: "
                                     f"params={params!r}, step={step!r}, t={t}")
            if fc >= f + 1e-4 * t * slope:
                break
            t *= 0.5
        else:
            # no ascent left at machine precision
            break
        params, f = cand, fc
        grad = obj.gradient(params)
    else:
        converged = np.max(np.abs(grad), initial=0.0) < tol
    theta_tilde, beta = _unpack(params, k, obj.ua, obj.ub)
    return NewtonResult(theta_tilde, beta, f + 0.5 * obj.ridge * params @ params, it,
                        bool(converged), float(np.max(np.abs(grad), initial=0.0)),
                        obj.ridge, flags)


def sample_graph(m: LogitModel, design: PairDesign, seed) -> Graph:
    """Draw a graph from the logit blockmodel."""
    rng = np.random.default_rng(seed)
    p = predict_proba(m, design)
    return Graph.from_condensed(m.z.n_nodes, rng.random(len(p)) < p)


def _dense_pair_data(g: Graph, design: PairDesign, beta: np.ndarray,
                     pair_mask: np.ndarray | None):
    n = g.n_nodes
    iu, ju = _triu(n)
    A = g.to_dense().astype(float)
    W = np.zeros((n, n))
    w = np.ones(len(iu)) if pair_mask is None else np.asarray(pair_mask, dtype=float)
    W[iu, ju] = w
    W[ju, iu] = w
    O = np.zeros((n, n))
    if design.dim_beta:
        off = design.matrix() @ beta
        O[iu, ju] = off
        O[ju, iu] = off
    return A, W, O


def metropolis_sweeps(g: Graph, m: LogitModel, design: PairDesign, n_sweeps: int,
                      rng: np.random.Generator, pair_mask: np.ndarray | None = None
                      ) -> tuple[ClassAssignment, float]:
    """Metropolis-within-Gibbs on z at fixed (theta_tilde, beta).

    Proposes a uniformly random other class for each node in turn. Returns the
    best assignment visited and its log-likelihood gain over ``m.z``.
    """
    k = m.k
    z = m.z.labels.copy()
    if k == 1:
        return ClassAssignment(z, k), 0.0
    A, W, O = _dense_pair_data(g, design, m.beta, pair_mask)
    T = m.theta_tilde
    cur = best = 0.0
    best_z = z.copy()
    for _ in range(n_sweeps):
        for i in rng.permutation(g.n_nodes):
            r = z[i]
            c = rng.integers(0, k - 1)
            c = c + (c >= r)
            eo = T[r, z] + O[i]
            en = T[c, z] + O[i]
            delta = float(np.sum(W[i] * (A[i] * (en - eo) - _softplus(en) + _softplus(eo))))
            if delta >= 0 or rng.random() < math.exp(delta):
                z[i] = c
                cur += delta
                if cur > best:
                    best = cur
                    best_z = z.copy()
    return ClassAssignment(best_z, k), best


def _training_graph(g: Graph, pair_mask: np.ndarray | None) -> Graph:
    if pair_mask is None:
        return g
    return Graph.from_condensed(g.n_nodes, g.condensed() & np.asarray(pair_mask, dtype=bool))


def alternating_fit(g: Graph, cov: CovariateTable | None, k: int, cfg: SamplerConfig, *,
                    design: PairDesign | None = None, pair_mask: np.ndarray | None = None,
                    max_rounds: int = 20, mh_sweeps: int = 5, rel_tol: float = 1e-6) -> LogitModel:
    """Fit (z, theta_tilde, beta), starting from a plain-blockmodel Gibbs fit of z."""
    if design is None:
        design = build_pair_design(cov) if cov is not None and len(cov) else empty_design(g.n_nodes)
    init_cfg = SamplerConfig(**{**cfg.__dict__, "k": k})
    z = gibbs_fit(_training_graph(g, pair_mask), init_cfg).best_z
    rng = np.random.default_rng(np.random.SeedSequence([int(cfg.seed), 0x10617]))

    res = optimize_theta_beta(g, z, design, pair_mask=pair_mask)
    best = LogitModel(k, res.theta_tilde, res.beta, z, res.loglik, [res.loglik], list(res.flags))
    prev = res.loglik
    for _ in range(max_rounds):
        if k == 1:
            break
        z_new, gain = metropolis_sweeps(g, best, design, mh_sweeps, rng, pair_mask)
        if gain <= 0:
            break
        res = optimize_theta_beta(g, z_new, design, init=(best.theta_tilde, best.beta),
                                  pair_mask=pair_mask)
        if res.loglik > best.loglik:
            best = LogitModel(k, res.theta_tilde, res.beta, z_new, res.loglik,
                              best.trace + [res.loglik], list(res.flags))
        else:
            best.trace.append(best.loglik)
        if res.loglik - prev < rel_tol * abs(prev):
            break
        prev = res.loglik
    return best


def n_parameters(k: int, design: PairDesign) -> int:
    return k * (k + 1) // 2 + design.dim_beta


def bic_score(g: Graph, m: LogitModel, design: PairDesign) -> float:
    ll = logit_log_likelihood(g, m, design)
    return -2.0 * ll + n_parameters(m.k, design) * math.log(n_pairs(g.n_nodes))


@dataclass
class CVResult:
    nll: float
    misclassification: float
    fold_nll: list[float]


def fold_assignment(n_nodes: int, folds: int, seed) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.permutation(n_pairs(n_nodes)) % folds


def cross_validate(g: Graph, cov: CovariateTable | None, k: int, folds: int = 5,
                   cfg: SamplerConfig | None = None, seed: int = 0, *,
                   design: PairDesign | None = None, **fit_kw) -> CVResult:
    """Pairwise k-fold CV: mean held-out Bernoulli negative log-likelihood per pair."""
    if folds < 2:
        raise DomainError("folds must be at least 2")
    if design is None:
        design = build_pair_design(cov) if cov is not None and len(cov) else empty_design(g.n_nodes)
    cfg = cfg or SamplerConfig(k=k, seed=seed)
    fold = fold_assignment(g.n_nodes, folds, np.random.SeedSequence([int(seed), 0xCF]))
    y = g.condensed()
    nlls, errs = [], []
    for f in range(folds):
        train = fold != f
        m = alternating_fit(g, None, k, cfg, design=design, pair_mask=train, **fit_kw)
        rows = np.flatnonzero(~train)
        eta = pair_logits(m, design, rows)
        yt = y[rows]
        nlls.append(float(np.mean(-(yt * log_expit(eta) + (1 - yt) * log_expit(-eta)))))
        errs.append(float(np.mean((eta > 0) != yt)))
    return CVResult(float(np.mean(nlls)), float(np.mean(errs)), nlls)
