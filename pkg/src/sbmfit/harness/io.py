"""Input parsing and result serialization."""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
import platform
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Iterable

import numpy as np

from ..fit import SamplerConfig
from ..logit import CovariateTable
from ..netcore import Graph

KINDS = ("bound-tightness", "likelihood-error", "misclassification", "model-order", "fit-real")


class ParseError(ValueError):
    def __init__(self, msg: str, line: int | None = None, source: str = "<input>"):
        self.line = line
        where = f"{source}:{line}: " if line is not None else f"{source}: "
        super().__init__(where + msg)


def _read_text(src) -> tuple[str, str]:
    if isinstance(src, (str, Path)) and Path(src).exists():
        return Path(src).read_text(), str(src)
    if isinstance(src, io.IOBase):
        return src.read(), getattr(src, "name", "<stream>")
    raise FileNotFoundError(src)


def parse_edge_list(text: str, n_nodes: int | None = None, source: str = "<input>") -> Graph:
    """Parse whitespace-separated 0-based node pairs, one per line.

    Lines starting with ``#`` and blank lines are skipped. N defaults to the
    largest id plus one.
    """
    edges = []
    seen = {}
    for ln, raw in enumerate(text.splitlines(), 1):
        s = raw.strip()
        if not s or s.startswith("#"):
            continue
        parts = s.split()
        if len(parts) != 2:
            raise ParseError(f"expected two node ids, got {len(parts)} fields", ln, source)
        try:
            i, j = int(parts[0]), int(parts[1])
        except ValueError:
            raise ParseError(f"non-integer node id in {s!r}", ln, source) from None
        if i < 0 or j < 0:
            raise ParseError("node ids must be non-negative", ln, source)
        if i == j:
            raise ParseError(f"self-loop on node {i}", ln, source)
        key = (min(i, j), max(i, j))
        if key in seen:
            raise ParseError(f"duplicate edge {key} (first on line {seen[key]})", ln, source)
        if n_nodes is not None and key[1] >= n_nodes:
            raise ParseError(f"node id {key[1]} out of range for N={n_nodes}", ln, source)
        seen[key] = ln
        edges.append(key)
    n = n_nodes if n_nodes is not None else (max((e[1] for e in edges), default=-1) + 1)
    return Graph(n, edges)


def read_edge_list(src, n_nodes: int | None = None) -> Graph:
    text, name = _read_text(src)
    return parse_edge_list(text, n_nodes, name)


def write_edge_list(g: Graph, path) -> None:
    with open(path, "w") as fh:
        fh.write(f"# {g.n_nodes} nodes, {g.edge_count} edges\n")
        for i, j in g.edges:
            fh.write(f"{i} {j}\n")


def parse_covariates(text: str, n_nodes: int | None = None,
                     source: str = "<input>") -> CovariateTable:
    """CSV with header ``node,<name>,...``; every node 0..N-1 exactly once."""
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or not rows[0] or rows[0][0].strip() != "node":
        raise ParseError("header must start with 'node'", 1, source)
    names = [h.strip() for h in rows[0][1:]]
    if not names:
        raise ParseError("no covariate columns", 1, source)
    if len(set(names)) != len(names):
        raise ParseError("duplicate covariate name in header", 1, source)
    values: dict[int, list[str]] = {}
    for ln, r in enumerate(rows[1:], 2):
        if not r or all(not c.strip() for c in r):
            continue
        if len(r) != len(names) + 1:
            raise ParseError(f"expected {len(names) + 1} fields, got {len(r)}", ln, source)
        try:
            node = int(r[0])
        except ValueError:
            raise ParseError(f"bad node id {r[0]!r}", ln, source) from None
        if node < 0 or (n_nodes is not None and node >= n_nodes):
            raise ParseError(f"node id {node} out of range", ln, source)
        if node in values:
            raise ParseError(f"node {node} listed twice", ln, source)
        values[node] = [c.strip() for c in r[1:]]
    n = n_nodes if n_nodes is not None else len(values)
    missing = sorted(set(range(n)) - set(values))
    if missing:
        raise ParseError(f"missing nodes: {missing[:10]}{'...' if len(missing) > 10 else ''}",
                         None, source)
    cov = CovariateTable(n)
    for c, name in enumerate(names):
        try:
            cov.add(name, [values[i][c] for i in range(n)])
        except ValueError as e:
            raise ParseError(str(e), None, source) from None
    return cov


def read_covariates(src, n_nodes: int | None = None) -> CovariateTable:
    text, name = _read_text(src)
    return parse_covariates(text, n_nodes, name)


def read_labels(src, n_nodes: int | None = None) -> np.ndarray:
    """One integer class label per line, in node order; ``#`` lines skipped."""
    text, name = _read_text(src)
    out = []
    for ln, raw in enumerate(text.splitlines(), 1):
        s = raw.strip()
        if not s or s.startswith("#"):
            continue
        try:
            out.append(int(s))
        except ValueError:
            raise ParseError(f"bad label {s!r}", ln, name) from None
    if n_nodes is not None and len(out) != n_nodes:
        raise ParseError(f"expected {n_nodes} labels, got {len(out)}", None, name)
    return np.array(out, dtype=np.int64)


# ---- configuration -------------------------------------------------------------

_SAMPLER_KEYS = {"n_sweeps", "beta_start", "beta_end", "inverse_temperature_schedule", "restarts"}
_LOGIT_KEYS = {"max_rounds", "mh_sweeps", "folds", "n_bins", "cv"}
_SCHEDULE_KEYS = {"m_exponent", "k_exponent", "log_base"}

# Likelihood-selected sampler settings shared by the synthetic studies: one long
# chain with a mild schedule reached higher profile likelihoods than restarts.
EXPERIMENT_SAMPLER = {"n_sweeps": 3000, "restarts": 1, "beta_start": 0.7, "beta_end": 1.5}


@dataclass
class ExperimentConfig:
    kind: str
    trials: int = 10
    base_seed: int = 0
    out: str | None = None
    threads: int = 1
    n_values: list[int] = field(default_factory=lambda: [50, 100, 200, 400, 700, 1050])
    # likelihood-error
    schedules: list[dict] = field(default_factory=lambda: [
        {"m_exponent": 4, "k_exponent": 0.5, "log_base": 10.0},
        {"m_exponent": 2, "k_exponent": 0.5},
        {"m_exponent": 2, "k_exponent": 0.6},
    ])
    # misclassification
    gammas: list[float] = field(default_factory=lambda: [0.8, 0.9, 1.0])
    m_exponent: float = 2.0
    k_exponent: float = 0.5
    # bound-tightness
    n_fixed: int = 500
    p: float = 0.075
    delta: float = 0.05
    k_values: list[int] = field(default_factory=lambda: [5, 10, 20, 30, 40, 50])
    # model-order / fit-real
    edges: str | None = None
    covariates: str | None = None
    summary_k: list[int] = field(default_factory=list)
    logit: dict = field(default_factory=lambda: {"max_rounds": 20, "mh_sweeps": 5,
                                                 "folds": 5, "n_bins": 8, "cv": True})
    sampler: dict = field(default_factory=lambda: dict(EXPERIMENT_SAMPLER))
    trend_threshold: float = 0.0

    def validate(self) -> ExperimentConfig:
        if self.kind not in KINDS:
            raise ValueError(f"unknown experiment kind {self.kind!r}; expected one of {KINDS}")
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if self.threads < 1:
            raise ValueError("threads must be at least 1")
        bad = set(self.sampler) - _SAMPLER_KEYS
        if bad:
            raise ValueError(f"unknown sampler keys: {sorted(bad)}")
        bad = set(self.logit) - _LOGIT_KEYS
        if bad:
            raise ValueError(f"unknown logit keys: {sorted(bad)}")
        for s in self.schedules:
            if set(s) - _SCHEDULE_KEYS or not {"m_exponent", "k_exponent"} <= set(s):
                raise ValueError(f"bad schedule entry {s!r}")
        if self.kind == "bound-tightness" and not self.k_values:
            raise ValueError("bound-tightness needs k_values")
        if self.kind in ("likelihood-error", "misclassification") and len(self.n_values) < 2:
            raise ValueError(f"{self.kind} needs at least two n_values")
        if self.kind == "misclassification" and not self.gammas:
            raise ValueError("misclassification needs gammas")
        if self.kind in ("model-order", "fit-real") and not self.k_values:
            raise ValueError(f"{self.kind} needs k_values")
        if self.kind == "fit-real" and not self.edges:
            raise ValueError("fit-real needs an edge list path")
        return self

    def sampler_config(self, k: int, seed: int) -> SamplerConfig:
        return SamplerConfig(k=k, seed=seed, **self.sampler)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def default_config(kind: str, **overrides) -> ExperimentConfig:
    base = {}
    if kind == "bound-tightness":
        base["trials"] = 30
    elif kind in ("model-order", "fit-real"):
        base["k_values"] = list(range(1, 9))
        base["trials"] = 1
    base.update(overrides)
    return ExperimentConfig(kind=kind, **base).validate()


def config_from_dict(d: dict) -> ExperimentConfig:
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = set(d) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    if "kind" not in d:
        raise ValueError("config needs a 'kind'")
    d = dict(d)
    kind = d.pop("kind")
    return default_config(kind, **d)


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return config_from_dict(json.load(fh))


# ---- result tables -------------------------------------------------------------

_TYPES = {"kind": str, "tag": str, "n": int, "k": int, "trial": int, "seed": int}


@dataclass(frozen=True)
class ResultRow:
    kind: str
    tag: str
    n: int
    k: int
    m: float
    gamma: float | None
    trial: int
    seed: int
    loglik: float | None = None
    kl_error: float | None = None
    kl_bound: float | None = None
    rms_error: float | None = None
    rms_bound: float | None = None
    lik_error: float | None = None
    ne_rate: float | None = None
    bic: float | None = None
    cv_nll: float | None = None
    cv_misclass: float | None = None
    kl_bound_normalized: float | None = None

    def __post_init__(self):
        # store plain Python scalars so rows compare equal after a CSV round trip
        for f in fields(self):
            v = getattr(self, f.name)
            if v is None or f.name in ("kind", "tag"):
                continue
            t = _TYPES.get(f.name, float)
            object.__setattr__(self, f.name, t(v))

    def sort_key(self):
        return (self.kind, self.tag, -1.0 if self.gamma is None else self.gamma,
                self.n, self.k, self.trial)


COLUMNS = [f.name for f in fields(ResultRow)]


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse(name: str, s: str):
    t = _TYPES.get(name)
    if t is str:
        return s
    if s == "":
        return None
    if t is int:
        return int(s)
    return float(s)


def write_results(rows: Iterable[ResultRow], path) -> None:
    rows = sorted(rows, key=ResultRow.sort_key)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(COLUMNS)
        for r in rows:
            w.writerow([_fmt(getattr(r, c)) for c in COLUMNS])


def read_results(path) -> list[ResultRow]:
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        if header != COLUMNS:
            raise ParseError(f"unexpected columns {header}", 1, str(path))
        return [ResultRow(**{c: _parse(c, v) for c, v in zip(COLUMNS, r)}) for r in rd]


def write_manifest(path, cfg: ExperimentConfig, rows: Iterable[ResultRow], extra: dict | None = None) -> None:
    import numba
    import scipy

    from .. import __version__
    man = {
        "config": cfg.to_dict(),
        "seeds": [[r.tag, r.gamma, r.n, r.k, r.trial, r.seed]
                  for r in sorted(rows, key=ResultRow.sort_key)],
        "versions": {"sbmfit": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__,
                     "numba": numba.__version__},
    }
    if extra:
        man.update(extra)
    with open(path, "w") as fh:
        json.dump(man, fh, indent=2, default=lambda o: None if isinstance(o, float) and math.isnan(o) else str(o))
