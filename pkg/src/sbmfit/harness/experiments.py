"""Experiment drivers.

Each driver expands its config into independent row jobs. A row's seed comes
from :func:`derive_seed`, so any row can be re-run alone and reproduces its
metrics exactly; rows run on a thread pool (the sampler kernel releases the
GIL) and are sorted before they are returned.
"""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.special import expit

from ..bounds import kl_confidence_bound, observed_kl_error, observed_rms_error, rms_bound_from_kl
from ..fit import gibbs_fit
from ..logit import (CovariateTable, LogitModel, alternating_fit, bic_score, build_pair_design,
                     cross_validate, degree_bin_covariate, empty_design)
from ..netcore import ClassAssignment, Graph, block_stats, n_pairs, theta_hat
from ..synth import (PlantedModel, Schedule, calibrate_planted, expand_schedule, gen_blockmodel,
                     gen_er)
from .io import ExperimentConfig, ResultRow, read_covariates, read_edge_list
from .metrics import likelihood_error_stat, median_by, misclassification_count, trend_slope


def gamma_tag(gamma: float | None) -> str:
    return "na" if gamma is None else repr(float(gamma))


def derive_seed(base_seed: int, kind: str, n: int, k: int, gamma: float | None, trial: int) -> int:
    """Stable 63-bit row seed: SHA-256 of ``base|kind|N|K|gamma|trial``."""
    key = f"{int(base_seed)}|{kind}|{int(n)}|{int(k)}|{gamma_tag(gamma)}|{int(trial)}"
    return int.from_bytes(hashlib.sha256(key.encode()).digest()[:8], "big") >> 1


def schedule_tag(s: dict) -> str:
    base = s.get("log_base", math.e)
    b = "e" if base == math.e else f"{base:g}"
    return f"c{s['m_exponent']:g}_a{s['k_exponent']:g}_log{b}"


def _run_jobs(jobs: list[Callable[[], ResultRow]], threads: int) -> list[ResultRow]:
    if threads <= 1:
        rows = [j() for j in jobs]
    else:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            rows = list(ex.map(lambda j: j(), jobs))
    return sorted(rows, key=ResultRow.sort_key)


def _fit_z(cfg: ExperimentConfig, g: Graph, k: int, seed: int) -> ClassAssignment:
    return gibbs_fit(g, cfg.sampler_config(k, seed)).best_z


# ---- bound tightness -------------------------------------------------------------

def bound_tightness_row(cfg: ExperimentConfig, k: int, trial: int) -> ResultRow:
    n = cfg.n_fixed
    seed = derive_seed(cfg.base_seed, cfg.kind, n, k, None, trial)
    g, P = gen_er(n, cfg.p, seed)
    z = _fit_z(cfg, g, k, seed)
    eps = kl_confidence_bound(n, k, cfg.delta)
    return ResultRow(cfg.kind, f"delta{cfg.delta:g}", n, k, P.expected_edges, None, trial, seed,
                     kl_error=observed_kl_error(g, P, z), kl_bound=eps,
                     rms_error=observed_rms_error(g, P, z), rms_bound=rms_bound_from_kl(eps),
                     kl_bound_normalized=eps / n_pairs(n))


def run_bound_tightness(cfg: ExperimentConfig) -> list[ResultRow]:
    jobs = [lambda k=k, t=t: bound_tightness_row(cfg, k, t)
            for k in cfg.k_values for t in range(cfg.trials)]
    return _run_jobs(jobs, cfg.threads)


@dataclass
class BoundSummary:
    k: int
    trials: int
    violations_kl: int
    violations_rms: int
    mean_ratio_kl: float
    mean_ratio_rms: float


def summarize_bound_tightness(rows: list[ResultRow]) -> list[BoundSummary]:
    out = []
    for k in sorted({r.k for r in rows}):
        rs = [r for r in rows if r.k == k]
        out.append(BoundSummary(
            k, len(rs),
            sum(r.kl_error > r.kl_bound for r in rs),
            sum(r.rms_error > r.rms_bound for r in rs),
            float(np.mean([r.kl_bound / r.kl_error for r in rs])),
            float(np.mean([r.rms_bound / r.rms_error for r in rs]))))
    return out


# ---- likelihood error ------------------------------------------------------------

def likelihood_error_row(cfg: ExperimentConfig, sched: dict, n: int, trial: int) -> ResultRow:
    s = Schedule((n,), sched["m_exponent"], sched["k_exponent"],
                 log_base=sched.get("log_base", math.e))
    ((n, m, k, _),) = expand_schedule(s)
    seed = derive_seed(cfg.base_seed, f"{cfg.kind}/{schedule_tag(sched)}", n, k, None, trial)
    g, P = gen_er(n, m / n_pairs(n), seed)
    z = _fit_z(cfg, g, k, seed)
    return ResultRow(cfg.kind, schedule_tag(sched), n, k, m, None, trial, seed,
                     lik_error=likelihood_error_stat(g, P, z))


def run_likelihood_error(cfg: ExperimentConfig) -> list[ResultRow]:
    for sched in cfg.schedules:
        # surface infeasible schedules before any fitting starts
        expand_schedule(Schedule(tuple(cfg.n_values), sched["m_exponent"], sched["k_exponent"],
                                 log_base=sched.get("log_base", math.e)))
    jobs = [lambda s=s, n=n, t=t: likelihood_error_row(cfg, s, n, t)
            for s in cfg.schedules for n in cfg.n_values for t in range(cfg.trials)]
    return _run_jobs(jobs, cfg.threads)


# ---- misclassification -----------------------------------------------------------

Estimator = Callable[[Graph, int, int, PlantedModel], ClassAssignment]


def planted_for(cfg: ExperimentConfig, n: int, gamma: float) -> PlantedModel:
    ((n, m, k, div),) = expand_schedule(Schedule((n,), cfg.m_exponent, cfg.k_exponent, gamma=gamma))
    return calibrate_planted(n, k, m, gamma, target_divergence=div)


def misclassification_row(cfg: ExperimentConfig, gamma: float, n: int, trial: int,
                          estimator: Estimator | None = None) -> ResultRow:
    model = planted_for(cfg, n, gamma)
    k = model.k
    seed = derive_seed(cfg.base_seed, cfg.kind, n, k, gamma, trial)
    g, P = gen_blockmodel(model, seed)
    z = estimator(g, k, seed, model) if estimator else _fit_z(cfg, g, k, seed)
    return ResultRow(cfg.kind, f"c{cfg.m_exponent:g}_a{cfg.k_exponent:g}", n, k,
                     P.expected_edges, float(gamma), trial, seed,
                     ne_rate=misclassification_count(model.z_bar, z) / n)


def run_misclassification(cfg: ExperimentConfig, estimator: Estimator | None = None
                          ) -> list[ResultRow]:
    for gm in cfg.gammas:
        for n in cfg.n_values:
            planted_for(cfg, n, gm)
    jobs = [lambda gm=gm, n=n, t=t: misclassification_row(cfg, gm, n, t, estimator)
            for gm in cfg.gammas for n in cfg.n_values for t in range(cfg.trials)]
    return _run_jobs(jobs, cfg.threads)


def trend_table(rows: list[ResultRow], metric: str) -> dict[tuple[str, float | None], dict]:
    """Per (tag, gamma) series: N grid, per-N medians and the Theil-Sen slope."""
    out = {}
    for key in sorted({(r.tag, r.gamma) for r in rows}, key=lambda t: (t[0], t[1] or -1.0)):
        rs = [r for r in rows if (r.tag, r.gamma) == key]
        xs = [r.n for r in rs]
        ys = [getattr(r, metric) for r in rs]
        grid, med = median_by(xs, ys)
        out[key] = {"n": grid.tolist(), "median": med.tolist(), "slope": trend_slope(xs, ys)}
    return out


# ---- model order -----------------------------------------------------------------

@dataclass
class ModelOrderResult:
    rows: list[ResultRow]
    models: dict[int, LogitModel]
    blocks: dict[int, dict]


def block_summary(g: Graph, m: LogitModel) -> dict:
    """Class sizes, node order sorted by class, fitted and observed block densities."""
    st = block_stats(g, m.z)
    th = theta_hat(st).vals
    return {
        "k": m.k,
        "class_sizes": st.class_sizes.tolist(),
        "node_order": np.argsort(m.z.labels, kind="stable").tolist(),
        "sigmoid_theta_tilde": expit(m.theta_tilde).tolist(),
        "theta_hat": [[None if math.isnan(v) else float(v) for v in row] for row in th],
        "beta": m.beta.tolist(),
        "flags": list(m.flags),
    }


def load_network(cfg: ExperimentConfig) -> tuple[Graph, CovariateTable | None]:
    g = read_edge_list(cfg.edges)
    cov = read_covariates(cfg.covariates, g.n_nodes) if cfg.covariates else None
    return g, cov


def _with_degree_bins(g: Graph, cov: CovariateTable | None, n_bins: int) -> CovariateTable:
    out = CovariateTable(g.n_nodes)
    if cov is not None:
        for name, codes, lv in zip(cov.names, cov.codes, cov.levels):
            out.add(name, np.asarray(lv)[codes])
    bins = degree_bin_covariate(g, n_bins)
    if len(np.unique(bins)) >= 2:
        out.add("degree_bin", bins)
    return out


def model_order_row(cfg: ExperimentConfig, g: Graph, cov: CovariateTable, k: int
                    ) -> tuple[ResultRow, LogitModel]:
    n = g.n_nodes
    seed = derive_seed(cfg.base_seed, cfg.kind, n, k, None, 0)
    lg = cfg.logit
    design = build_pair_design(cov) if len(cov) else empty_design(n)
    scfg = cfg.sampler_config(k, seed)
    fit_kw = {"max_rounds": lg.get("max_rounds", 20), "mh_sweeps": lg.get("mh_sweeps", 5)}
    m = alternating_fit(g, None, k, scfg, design=design, **fit_kw)
    cv = None
    if lg.get("cv", True):
        cv = cross_validate(g, None, k, lg.get("folds", 5), scfg, seed, design=design, **fit_kw)
    eps = kl_confidence_bound(n, k, cfg.delta)
    row = ResultRow(cfg.kind, "logit", n, k, float(g.edge_count), None, 0, seed,
                    loglik=m.loglik, bic=bic_score(g, m, design),
                    cv_nll=None if cv is None else cv.nll,
                    cv_misclass=None if cv is None else cv.misclassification,
                    kl_bound=eps, kl_bound_normalized=eps / n_pairs(n))
    return row, m


def run_model_order(cfg: ExperimentConfig, g: Graph | None = None,
                    cov: CovariateTable | None = None, *, degree_bins: bool = True
                    ) -> ModelOrderResult:
    if g is None:
        g, cov = load_network(cfg)
    full = _with_degree_bins(g, cov, cfg.logit.get("n_bins", 8)) if degree_bins else (
        cov if cov is not None else CovariateTable(g.n_nodes))
    ks = [k for k in cfg.k_values if k <= g.n_nodes]
    jobs = [lambda k=k: model_order_row(cfg, g, full, k) for k in ks]
    if cfg.threads <= 1:
        results = [j() for j in jobs]
    else:
        with ThreadPoolExecutor(max_workers=cfg.threads) as ex:
            results = list(ex.map(lambda j: j(), jobs))
    rows = sorted((r for r, _ in results), key=ResultRow.sort_key)
    models = {r.k: m for r, m in results}
    blocks = {k: block_summary(g, models[k]) for k in cfg.summary_k if k in models}
    return ModelOrderResult(rows, models, blocks)


def write_block_summaries(blocks: dict[int, dict], out_dir) -> list[Path]:
    paths = []
    for k, b in sorted(blocks.items()):
        p = Path(out_dir) / f"blocks_K{k}.json"
        p.write_text(json.dumps(b, indent=1))
        paths.append(p)
    return paths


def rerun_row(cfg: ExperimentConfig, row: ResultRow) -> ResultRow:
    """Recompute a single synthetic-study row from its identifiers."""
    if row.kind == "bound-tightness":
        return bound_tightness_row(cfg, row.k, row.trial)
    if row.kind == "likelihood-error":
        sched = next(s for s in cfg.schedules if schedule_tag(s) == row.tag)
        return likelihood_error_row(cfg, sched, row.n, row.trial)
    if row.kind == "misclassification":
        return misclassification_row(cfg, row.gamma, row.n, row.trial)
    raise ValueError(f"cannot re-run rows of kind {row.kind!r} in isolation")
