"""Command-line entry point: ``sbmfit <subcommand> [options]``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from ..bounds import bound_report
from ..fit import SamplerConfig, gibbs_fit
from ..netcore import ClassAssignment, DomainError, block_stats, theta_hat
from .experiments import (run_bound_tightness, run_likelihood_error, run_misclassification,
                          run_model_order, summarize_bound_tightness, trend_table,
                          write_block_summaries)
from .io import (ParseError, config_from_dict, default_config, read_edge_list, read_labels,
                 write_manifest, write_results)
from .metrics import misclassification_count


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON experiment config")
    p.add_argument("--seed", type=int, help="base seed")
    p.add_argument("--out", help="output CSV path")
    p.add_argument("--threads", type=int, help="worker threads")
    p.add_argument("--trials", type=int, help="trials per grid point")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sbmfit", description="Blockmodel fitting and error-bound studies.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("bound-tightness", "likelihood-error", "misclassification"):
        _common(sub.add_parser(name))
    mo = sub.add_parser("model-order", help="BIC and CV over K on a network with covariates")
    _common(mo)
    mo.add_argument("--edges", help="edge list file")
    mo.add_argument("--covariates", help="covariate CSV")
    mo.add_argument("--k-max", type=int, help="fit K = 1..k-max")
    mo.add_argument("--summary-k", type=int, nargs="*", help="K values to write block summaries for")
    fit = sub.add_parser("fit", help="single blockmodel fit")
    _common(fit)
    fit.add_argument("edges", help="edge list file")
    fit.add_argument("-k", type=int, required=True, help="number of classes")
    fit.add_argument("--delta", type=float, default=0.05)
    fit.add_argument("--truth", help="true labels, one per line, for the misclassification count")
    fit.add_argument("--sweeps", type=int, help="sweeps per chain")
    fit.add_argument("--restarts", type=int, default=5)
    return ap


def _config(args, kind: str):
    if args.config:
        with open(args.config) as fh:
            d = json.load(fh)
        d.setdefault("kind", kind)
        if d["kind"] != kind and not (kind == "model-order" and d["kind"] == "fit-real"):
            raise ValueError(f"config kind {d['kind']!r} does not match subcommand {kind!r}")
        cfg = config_from_dict(d)
    else:
        cfg = default_config(kind)
    for attr, dest in (("seed", "base_seed"), ("out", "out"), ("threads", "threads"),
                       ("trials", "trials")):
        v = getattr(args, attr, None)
        if v is not None:
            setattr(cfg, dest, v)
    if kind == "model-order":
        if args.edges:
            cfg.edges = args.edges
        if args.covariates:
            cfg.covariates = args.covariates
        if args.k_max:
            cfg.k_values = list(range(1, args.k_max + 1))
        if args.summary_k is not None:
            cfg.summary_k = args.summary_k
        if not cfg.edges:
            raise ValueError("model-order needs --edges or an edges entry in the config")
    cfg.out = cfg.out or f"{kind}.csv"
    return cfg.validate()


def _save(cfg, rows, extra=None) -> None:
    out = Path(cfg.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_results(rows, out)
    write_manifest(out.with_suffix(".manifest.json"), cfg, rows, extra)
    print(f"wrote {len(rows)} rows to {out}")


def _print_trends(rows, metric: str) -> dict:
    tab = trend_table(rows, metric)
    for (tag, gamma), t in tab.items():
        label = tag if gamma is None else f"{tag} gamma={gamma:g}"
        meds = " ".join(f"{n:g}:{v:.4g}" for n, v in zip(t["n"], t["median"]))
        print(f"{label}: slope={t['slope']:.3e}  medians {meds}")
    return {f"{k[0]}|{k[1]}": v for k, v in tab.items()}


def cmd_bound_tightness(args) -> int:
    cfg = _config(args, "bound-tightness")
    rows = run_bound_tightness(cfg)
    summ = summarize_bound_tightness(rows)
    for s in summ:
        print(f"K={s.k:3d}  trials={s.trials}  violations kl={s.violations_kl} rms={s.violations_rms}"
              f"  mean bound/error kl={s.mean_ratio_kl:.2f} rms={s.mean_ratio_rms:.2f}")
    _save(cfg, rows, {"summary": [s.__dict__ for s in summ]})
    return 0


def cmd_likelihood_error(args) -> int:
    cfg = _config(args, "likelihood-error")
    rows = run_likelihood_error(cfg)
    _save(cfg, rows, {"trends": _print_trends(rows, "lik_error")})
    return 0


def cmd_misclassification(args) -> int:
    cfg = _config(args, "misclassification")
    rows = run_misclassification(cfg)
    _save(cfg, rows, {"trends": _print_trends(rows, "ne_rate")})
    return 0


def cmd_model_order(args) -> int:
    cfg = _config(args, "model-order")
    res = run_model_order(cfg)
    for r in res.rows:
        cv = "" if r.cv_nll is None else f"  cv_nll={r.cv_nll:.5f}"
        print(f"K={r.k:3d}  loglik={r.loglik:.2f}  bic={r.bic:.2f}{cv}  bound/C(N,2)={r.kl_bound_normalized:.4f}")
    _save(cfg, res.rows)
    for p in write_block_summaries(res.blocks, Path(cfg.out).parent):
        print(f"wrote {p}")
    return 0


def cmd_fit(args) -> int:
    g = read_edge_list(args.edges)
    cfg = SamplerConfig(k=args.k, seed=args.seed or 0, n_sweeps=args.sweeps, restarts=args.restarts)
    res = gibbs_fit(g, cfg)
    z = res.best_z
    st = block_stats(g, z)
    th = theta_hat(st).vals
    print(f"N={g.n_nodes}  edges={g.edge_count}  K={args.k}")
    print(f"profile log-likelihood: {res.best_profile_loglik:.6f}")
    print("class sizes:", " ".join(map(str, st.class_sizes)))
    print("theta_hat:")
    with np.printoptions(precision=4, suppress=True, linewidth=120, nanstr="-"):
        print(th)
    b = bound_report(g.n_nodes, args.k, args.delta)
    print(f"KL bound (delta={args.delta:g}): {b.epsilon_kl:.4f}  normalized: {b.epsilon_kl_normalized:.6f}"
          f"  RMS normalized: {b.epsilon_rms_normalized:.6f}")
    if args.truth:
        truth = ClassAssignment(read_labels(args.truth, g.n_nodes))
        ne = misclassification_count(truth, z)
        print(f"N_e = {ne}  ({ne / g.n_nodes:.4f} of nodes)")
    if args.out:
        Path(args.out).write_text("\n".join(map(str, z.labels)) + "\n")
        print(f"wrote labels to {args.out}")
    return 0


COMMANDS = {
    "bound-tightness": cmd_bound_tightness,
    "likelihood-error": cmd_likelihood_error,
    "misclassification": cmd_misclassification,
    "model-order": cmd_model_order,
    "fit": cmd_fit,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ParseError, DomainError, ValueError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
