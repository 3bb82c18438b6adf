"""Core data types and blockmodel likelihoods for undirected binary networks.

Nodes and classes are 0-based. Node pairs ``(i, j)`` with ``i < j`` are laid
out in condensed (row-major upper-triangular) order, the same order used by
``numpy.triu_indices(n, 1)`` and ``scipy.spatial.distance.squareform``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable

import numpy as np
from scipy.special import xlogy


class DomainError(ValueError):
    """Raised when an argument lies outside the domain of an operation."""


def n_pairs(n: int) -> int:
    return n * (n - 1) // 2


@lru_cache(maxsize=8)
def _triu(n: int) -> tuple[np.ndarray, np.ndarray]:
    iu, ju = np.triu_indices(n, 1)
    iu.setflags(write=False)
    ju.setflags(write=False)
    return iu, ju


def pair_index(i: np.ndarray | int, j: np.ndarray | int, n: int) -> np.ndarray | int:
    """Condensed index of pair (i, j), i < j, in a graph with n nodes."""
    return i * n - i * (i + 1) // 2 + (j - i - 1)


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


class Graph:
    """Simple undirected graph with sparse (CSR) storage.

    ``edges`` holds each edge once as ``(i, j)`` with ``i < j``, lexicographically
    sorted; ``indptr``/``indices`` give sorted neighbor lists.
    """

    def __init__(self, n_nodes: int, edges: Iterable[tuple[int, int]] | np.ndarray = ()):
        n_nodes = int(n_nodes)
        if n_nodes < 1:
            raise DomainError(f"n_nodes must be positive, got {n_nodes}")
        e = np.asarray(list(edges) if not isinstance(edges, np.ndarray) else edges, dtype=np.int64)
        e = e.reshape(-1, 2)
        if e.size:
            if e.min() < 0 or e.max() >= n_nodes:
                raise DomainError("edge endpoint out of range")
            if np.any(e[:, 0] == e[:, 1]):
                raise DomainError("self-loops are not allowed")
        e = np.sort(e, axis=1)
        e = e[np.lexsort((e[:, 1], e[:, 0]))]
        if len(e) > 1 and np.any(np.all(e[1:] == e[:-1], axis=1)):
            raise DomainError("duplicate edge")
        self.n_nodes = n_nodes
        self.edges = _readonly(e)
        self.edge_count = len(e)

        both = np.concatenate([e, e[:, ::-1]])
        both = both[np.lexsort((both[:, 1], both[:, 0]))]
        deg = np.bincount(both[:, 0], minlength=n_nodes)
        indptr = np.zeros(n_nodes + 1, dtype=np.int64)
        np.cumsum(deg, out=indptr[1:])
        self.indptr = _readonly(indptr)
        self.indices = _readonly(np.ascontiguousarray(both[:, 1]))

    @classmethod
    def from_condensed(cls, n_nodes: int, adj: np.ndarray) -> Graph:
        """Build from a boolean vector over the condensed pair index."""
        iu, ju = _triu(n_nodes)
        mask = np.asarray(adj, dtype=bool)
        if mask.shape != iu.shape:
            raise DomainError("condensed adjacency has wrong length")
        return cls(n_nodes, np.column_stack([iu[mask], ju[mask]]))

    @classmethod
    def from_dense(cls, adj: np.ndarray) -> Graph:
        adj = np.asarray(adj)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
            raise DomainError("adjacency must be square")
        if not np.array_equal(adj, adj.T):
            raise DomainError("adjacency must be symmetric")
        if np.any(np.diag(adj)):
            raise DomainError("self-loops are not allowed")
        return cls.from_condensed(adj.shape[0], adj[np.triu_indices(adj.shape[0], 1)] != 0)

    def neighbors(self, i: int) -> np.ndarray:
        return self.indices[self.indptr[i]:self.indptr[i + 1]]

    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    def has_edge(self, i: int, j: int) -> bool:
        nb = self.neighbors(i)
        k = np.searchsorted(nb, j)
        return bool(k < len(nb) and nb[k] == j)

    def condensed(self) -> np.ndarray:
        """Boolean adjacency over the condensed pair index."""
        out = np.zeros(n_pairs(self.n_nodes), dtype=bool)
        if self.edge_count:
            out[pair_index(self.edges[:, 0], self.edges[:, 1], self.n_nodes)] = True
        return out

    def to_dense(self) -> np.ndarray:
        a = np.zeros((self.n_nodes, self.n_nodes), dtype=np.int8)
        a[self.edges[:, 0], self.edges[:, 1]] = 1
        a[self.edges[:, 1], self.edges[:, 0]] = 1
        return a

    def __repr__(self) -> str:
        return f"Graph(n_nodes={self.n_nodes}, edge_count={self.edge_count})"


class ProbabilityMatrixDense:
    """Edge probabilities P_ij for i < j in condensed order."""

    def __init__(self, n_nodes: int, p: np.ndarray):
        p = np.array(p, dtype=np.float64)
        if p.shape != (n_pairs(n_nodes),):
            raise DomainError(f"expected {n_pairs(n_nodes)} probabilities, got shape {p.shape}")
        if np.any(~(p >= 0.0) | ~(p <= 1.0)):
            raise DomainError("probabilities must lie in [0, 1]")
        self.n_nodes = int(n_nodes)
        self.p = _readonly(p)

    @classmethod
    def constant(cls, n_nodes: int, p: float) -> ProbabilityMatrixDense:
        return cls(n_nodes, np.full(n_pairs(n_nodes), float(p)))

    @classmethod
    def from_blockmodel(cls, z: ClassAssignment, theta: BlockMatrix) -> ProbabilityMatrixDense:
        iu, ju = _triu(z.n_nodes)
        return cls(z.n_nodes, theta.vals[z.labels[iu], z.labels[ju]])

    @property
    def expected_edges(self) -> float:
        return float(self.p.sum())

    def as_matrix(self) -> np.ndarray:
        m = np.zeros((self.n_nodes, self.n_nodes))
        iu, ju = _triu(self.n_nodes)
        m[iu, ju] = self.p
        m[ju, iu] = self.p
        return m


class ClassAssignment:
    """Membership vector with labels in 0..k-1 (empty classes allowed)."""

    def __init__(self, labels: Iterable[int] | np.ndarray, k: int | None = None):
        lab = np.array(labels, dtype=np.int64).ravel()
        if lab.size == 0:
            raise DomainError("empty assignment")
        if k is None:
            k = int(lab.max()) + 1
        if k < 1:
            raise DomainError("k must be at least 1")
        if lab.min() < 0 or lab.max() >= k:
            raise DomainError(f"labels must lie in 0..{k - 1}")
        self.labels = _readonly(lab)
        self.k = int(k)

    @property
    def n_nodes(self) -> int:
        return len(self.labels)

    def class_sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.k)

    def __eq__(self, other: object) -> bool:
        return (isinstance(other, ClassAssignment) and self.k == other.k
                and np.array_equal(self.labels, other.labels))

    def __repr__(self) -> str:
        return f"ClassAssignment(n_nodes={self.n_nodes}, k={self.k})"


class BlockMatrix:
    """Symmetric K x K matrix; NaN marks blocks with no node pairs."""

    def __init__(self, vals: np.ndarray, probability: bool = True):
        v = np.array(vals, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise DomainError("block matrix must be square")
        defined = ~np.isnan(v)
        if not np.array_equal(defined, defined.T) or not np.allclose(v[defined], v.T[defined], rtol=0, atol=0):
            raise DomainError("block matrix must be symmetric")
        if probability and np.any((v[defined] < 0) | (v[defined] > 1)):
            raise DomainError("probability block matrix entries must lie in [0, 1]")
        self.vals = _readonly(v)
        self.probability = probability

    @property
    def k(self) -> int:
        return self.vals.shape[0]

    @property
    def defined(self) -> np.ndarray:
        return ~np.isnan(self.vals)

    def __repr__(self) -> str:
        return f"BlockMatrix(k={self.k}, probability={self.probability})"


@dataclass
class BlockStats:
    """Block sufficient statistics for an assignment.

    Mutable: ``move`` applies a single-node relabelling in place, so an instance
    should be owned by one thread at a time.
    """

    k: int
    pair_counts: np.ndarray
    edge_counts: np.ndarray
    class_sizes: np.ndarray

    def copy(self) -> BlockStats:
        return BlockStats(self.k, self.pair_counts.copy(), self.edge_counts.copy(),
                          self.class_sizes.copy())

    def move(self, neighbor_counts: np.ndarray, old: int, new: int) -> None:
        """Move one node from class ``old`` to ``new``.

        ``neighbor_counts[t]`` is the number of the node's neighbors in class t.
        """
        if old == new:
            return
        d = np.asarray(neighbor_counts)
        e, n, sizes = self.edge_counts, self.pair_counts, self.class_sizes
        sizes[old] -= 1
        e[old, :] -= d
        e[:, old] = e[old, :]
        n[old, :] -= sizes
        n[:, old] = n[old, :]
        e[new, :] += d
        e[:, new] = e[new, :]
        n[new, :] += sizes
        n[:, new] = n[new, :]
        sizes[new] += 1


def bernoulli_kl(p, q):
    """KL divergence D(Bernoulli(p) || Bernoulli(q)) in nats.

    Works elementwise on arrays. Returns +inf when q is 0 or 1 and p differs.
    """
    p_arr = np.asarray(p, dtype=np.float64)
    q_arr = np.asarray(q, dtype=np.float64)
    if np.any(~(p_arr >= 0) | ~(p_arr <= 1) | ~(q_arr >= 0) | ~(q_arr <= 1)):
        raise DomainError("bernoulli_kl arguments must lie in [0, 1]")
    with np.errstate(divide="ignore", invalid="ignore"):
        d = (xlogy(p_arr, p_arr) - xlogy(p_arr, q_arr)
             + xlogy(1 - p_arr, 1 - p_arr) - xlogy(1 - p_arr, 1 - q_arr))
    d = np.where(np.isnan(d), np.inf, d)  # -inf + inf only arises on disjoint support
    d = np.maximum(d, 0.0)
    return float(d) if d.ndim == 0 else d


def block_stats(g: Graph, z: ClassAssignment) -> BlockStats:
    if z.n_nodes != g.n_nodes:
        raise DomainError(f"assignment has {z.n_nodes} nodes, graph has {g.n_nodes}")
    k = z.k
    sizes = z.class_sizes().astype(np.int64)
    n = np.outer(sizes, sizes)
    n[np.diag_indices(k)] = sizes * (sizes - 1) // 2
    a = z.labels[g.edges[:, 0]]
    b = z.labels[g.edges[:, 1]]
    c = np.bincount(a * k + b, minlength=k * k).reshape(k, k)
    e = c + c.T
    e[np.diag_indices(k)] = np.diag(c)
    return BlockStats(k, n, e.astype(np.int64), sizes)


def _ratio(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    out = np.full(num.shape, np.nan)
    ok = den > 0
    out[ok] = num[ok] / den[ok]
    return out


def theta_hat(stats: BlockStats) -> BlockMatrix:
    return BlockMatrix(_ratio(stats.edge_counts.astype(float), stats.pair_counts))


def _block_prob_sums(p: ProbabilityMatrixDense, z: ClassAssignment) -> np.ndarray:
    if p.n_nodes != z.n_nodes:
        raise DomainError("probability matrix and assignment disagree on N")
    k = z.k
    iu, ju = _triu(z.n_nodes)
    a, b = z.labels[iu], z.labels[ju]
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    s = np.bincount(lo * k + hi, weights=p.p, minlength=k * k).reshape(k, k)
    return s + np.triu(s, 1).T


def theta_bar(p: ProbabilityMatrixDense, z: ClassAssignment) -> BlockMatrix:
    sizes = z.class_sizes()
    n = np.outer(sizes, sizes)
    n[np.diag_indices(z.k)] = sizes * (sizes - 1) // 2
    return BlockMatrix(np.clip(_ratio(_block_prob_sums(p, z), n), 0.0, 1.0))


def _upper(k: int) -> tuple[np.ndarray, np.ndarray]:
    return np.triu_indices(k)


def _entropy_total(s: np.ndarray, n: np.ndarray) -> float:
    """Sum over blocks of s ln(s/n) + (n-s) ln((n-s)/n), skipping n == 0."""
    ok = n > 0
    s, n = s[ok].astype(float), n[ok].astype(float)
    r = np.clip(n - s, 0.0, None)
    return float(np.sum(xlogy(s, s) + xlogy(r, r) - xlogy(n, n)))


def log_likelihood(g: Graph, z: ClassAssignment, theta: BlockMatrix) -> float:
    if theta.k != z.k:
        raise DomainError(f"theta is {theta.k}x{theta.k} but assignment has k={z.k}")
    st = block_stats(g, z)
    iu = _upper(z.k)
    n, e, th = st.pair_counts[iu], st.edge_counts[iu], theta.vals[iu]
    ok = n > 0
    if np.any(np.isnan(th[ok])):
        raise DomainError("theta undefined on an occupied block")
    n, e, th = n[ok], e[ok], th[ok]
    with np.errstate(divide="ignore"):
        return float(np.sum(xlogy(e, th) + xlogy(n - e, 1.0 - th)))


def profile_log_likelihood(g: Graph, z: ClassAssignment) -> float:
    st = block_stats(g, z)
    iu = _upper(z.k)
    return _entropy_total(st.edge_counts[iu], st.pair_counts[iu])


def expected_profile_log_likelihood(p: ProbabilityMatrixDense, z: ClassAssignment) -> float:
    sizes = z.class_sizes()
    n = np.outer(sizes, sizes)
    n[np.diag_indices(z.k)] = sizes * (sizes - 1) // 2
    iu = _upper(z.k)
    s = np.minimum(_block_prob_sums(p, z)[iu], n[iu])
    return _entropy_total(s, n[iu])


def likelihood_gap_decomposition(g: Graph, p: ProbabilityMatrixDense,
                                 z: ClassAssignment) -> tuple[float, float]:
    """Split profile minus expected profile log-likelihood into (KL, X - E X).

    The KL term is sum_{a<=b} n_ab D(theta_hat_ab || theta_bar_ab) and the second
    term is the centred edge sum weighted by logit(theta_bar).
    """
    st = block_stats(g, z)
    iu = _upper(z.k)
    n, e = st.pair_counts[iu], st.edge_counts[iu]
    tb = theta_bar(p, z).vals[iu]
    ok = n > 0
    bad = ok & ((tb <= 0) | (tb >= 1))
    if np.any(bad):
        a, b = iu[0][bad][0], iu[1][bad][0]
        raise DomainError(f"theta_bar[{a},{b}] = {tb[bad][0]} is on the boundary")
    n, e, tb = n[ok], e[ok], tb[ok]
    th = e / n
    kl_term = float(np.sum(n * bernoulli_kl(th, tb)))
    w = np.log(tb) - np.log1p(-tb)
    x_term = float(np.sum((e - n * tb) * w))
    return kl_term, x_term


@dataclass(frozen=True, eq=False)
class Partition:
    """Partition of the node pairs into cells 0..n_cells-1 (condensed order)."""

    n_nodes: int
    cell_of: np.ndarray
    n_cells: int

    def __post_init__(self):
        c = np.asarray(self.cell_of)
        if c.shape != (n_pairs(self.n_nodes),):
            raise DomainError("partition must map every node pair")
        if c.size and (c.min() < 0 or c.max() >= self.n_cells):
            raise DomainError("uncovered pair or cell index out of range")
        if np.any(np.bincount(c, minlength=self.n_cells) == 0):
            raise DomainError("partition has an empty cell")

    @classmethod
    def from_labels(cls, n_nodes: int, labels: np.ndarray) -> Partition:
        """Compact arbitrary per-pair labels into a partition."""
        labels = np.asarray(labels)
        if labels.shape != (n_pairs(n_nodes),):
            raise DomainError("partition must map every node pair")
        if np.issubdtype(labels.dtype, np.integer) and labels.size and labels.min() < 0:
            raise DomainError("uncovered pair")
        uniq, inv = np.unique(labels, return_inverse=True)
        return cls(n_nodes, _readonly(inv.astype(np.int64)), len(uniq))

    @classmethod
    def from_assignment(cls, z: ClassAssignment) -> Partition:
        iu, ju = _triu(z.n_nodes)
        a, b = z.labels[iu], z.labels[ju]
        return cls.from_labels(z.n_nodes, np.minimum(a, b) * z.k + np.maximum(a, b))

    def cell_sizes(self) -> np.ndarray:
        return np.bincount(self.cell_of, minlength=self.n_cells)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Partition) or other.n_nodes != self.n_nodes:
            return False
        # equal as set partitions: the pairing of cell ids is a bijection
        if other.n_cells != self.n_cells:
            return False
        joint = np.unique(np.column_stack([self.cell_of, other.cell_of]), axis=0)
        return len(joint) == self.n_cells


def partition_expected_log_likelihood(p: ProbabilityMatrixDense, pi: Partition) -> float:
    if p.n_nodes != pi.n_nodes:
        raise DomainError("probability matrix and partition disagree on N")
    s = np.bincount(pi.cell_of, weights=p.p, minlength=pi.n_cells)
    n = pi.cell_sizes()
    return _entropy_total(np.minimum(s, n), n)


def refine_partition(pi: Partition, split: np.ndarray) -> Partition:
    """Refine ``pi`` by per-pair sub-cell labels ``split``.

    Each distinct value of ``split`` becomes a cell, and must fall inside a
    single cell of ``pi``.
    """
    split = np.asarray(split)
    if split.shape != pi.cell_of.shape:
        raise DomainError("split must label every node pair")
    joint = np.unique(np.column_stack([split, pi.cell_of]), axis=0)
    if len(np.unique(joint[:, 0])) != len(joint):
        raise DomainError("split crosses a parent cell boundary")
    return Partition.from_labels(pi.n_nodes, split)
