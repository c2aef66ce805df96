"""Batch command-line interface.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
Failures print a machine-readable JSON object to stderr. Every randomized
subcommand takes an explicit --seed (deliberately no environment fallback:
reproducibility must be spelled out in the invocation).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .dataio import (
    chain_to_csv,
    criterion_report_to_csv,
    criterion_report_to_dict,
    covdesc,
    load_chain_traces,
    load_dataset,
    params_to_dict,
    read_response_table,
    save_dataset,
    save_fit_report,
    write_json_atomic,
)
from .em import EmConfig
from .errors import ConfigError, DataError, NumericalError, WishartMixError
from .fitmethods import METHODS, fit_method, is_bayes
from .mcmc import SamplerConfig, chain_summary, ess
from .sampling import RngState
from .selection import elpd_loo, select_k
from .simdata import DESIGN_NAMES, builtin_design, generate, study_replicate
from . import simdata


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors by default; the contract is 1
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _add_seed(p):
    p.add_argument("--seed", type=int, required=True,
                   help="64-bit unsigned seed (required; no implicit default)")


def _add_fit_options(p, iters=20000, burnin=5000):
    p.add_argument("--iters", type=int, default=iters)
    p.add_argument("--burnin", type=int, default=burnin)
    p.add_argument("--thin", type=int, default=1)
    p.add_argument("--restarts", type=int, default=5)


def build_parser():
    parser = _Parser(prog="wishartmix",
                     description="Wishart mixture / mixture-of-experts fitting")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="draw a dataset from a builtin design")
    p.add_argument("--design", required=True, choices=DESIGN_NAMES)
    p.add_argument("--n", type=int, required=True)
    _add_seed(p)
    p.add_argument("--out", required=True, help="dataset JSON path")

    p = sub.add_parser("fit", help="fit one model to a dataset")
    p.add_argument("--method", required=True, choices=METHODS)
    p.add_argument("--data", required=True)
    p.add_argument("--k", type=int, required=True)
    _add_fit_options(p)
    _add_seed(p)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("select-k", help="criterion table over a K range")
    p.add_argument("--method", required=True, choices=METHODS)
    p.add_argument("--data", required=True)
    p.add_argument("--kmin", type=int, default=2)
    p.add_argument("--kmax", type=int, default=8)
    p.add_argument("--criteria", default="bic,icl,elpd")
    p.add_argument("--loo-method", choices=("psis", "raw"), default="psis")
    _add_fit_options(p, iters=4000, burnin=1000)
    _add_seed(p)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", required=True)

    p = sub.add_parser("diagnose", help="ESS report and trace CSVs for a chain")
    p.add_argument("--chain", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("study", help="replicated simulation study")
    p.add_argument("--design", required=True, choices=DESIGN_NAMES)
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--methods", default="bayes,em,bayes-moe,em-moe")
    p.add_argument("--n", type=int, default=500)
    _add_fit_options(p, iters=2000, burnin=500)
    _add_seed(p)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", required=True)

    p = sub.add_parser("covdesc", help="response table -> covariance descriptors")
    p.add_argument("--table", required=True)
    p.add_argument("--min-replicates", type=int, default=None)
    p.add_argument("--out", required=True, help="dataset JSON path")

    return parser


def cmd_simulate(args):
    design = builtin_design(args.design).with_n(args.n)
    data, labels = generate(design, RngState(args.seed))
    save_dataset(data, args.out)
    truth_path = _sibling(args.out, ".truth.json")
    write_json_atomic(
        {
            "design": design.name,
            "family": design.family,
            "n": design.n,
            "p": design.p,
            "K": design.K,
            "seed": args.seed,
            "truth": params_to_dict(design.truth),
            "labels": labels.tolist(),
        },
        truth_path,
    )
    print(f"wrote {args.out} (n={data.n}, p={data.p}) and {truth_path}")
    return 0


def _sibling(path, suffix):
    stem = path[:-5] if path.endswith(".json") else path
    return stem + suffix


def cmd_fit(args):
    data = load_dataset(args.data)
    report = fit_method(
        data, args.k, args.method, RngState(args.seed),
        sampler_config=SamplerConfig(iterations=args.iters, burnin=args.burnin,
                                     thin=args.thin, seed=args.seed),
        em_config=EmConfig(restarts=args.restarts),
    )
    os.makedirs(args.out, exist_ok=True)
    save_fit_report(report, os.path.join(args.out, "report.json"))
    if report.chain is not None:
        chain_to_csv(report.chain, os.path.join(args.out, "chain.csv"))
        write_json_atomic(chain_summary(report.chain),
                          os.path.join(args.out, "chain_summary.json"))
    for note in report.warnings:
        print(f"warning: {note}", file=sys.stderr)
    print(f"{args.method} K={args.k}: loglik={report.loglik:.4f} "
          f"bic={report.criteria.get('bic', float('nan')):.2f} -> {args.out}")
    return 0


def _select_k_one(payload):
    data, k, method, iters, burnin, thin, restarts, seed, criteria, loo_method = payload
    rng = RngState(seed).derive(k)
    report = fit_method(
        data, k, method, rng,
        sampler_config=SamplerConfig(iterations=iters, burnin=burnin, thin=thin,
                                     seed=seed),
        em_config=EmConfig(restarts=restarts),
    )
    values = {}
    se = {}
    for crit in criteria:
        if crit in ("bic", "icl"):
            values[crit] = report.criteria[crit]
        elif crit == "elpd":
            total, diag = elpd_loo(data, report.chain, method=loo_method)
            values[crit] = total
            se[crit] = diag.se
            values["_khat_high"] = diag.n_high
    return k, values, se


def cmd_select_k(args):
    data = load_dataset(args.data)
    if args.kmin < 1 or args.kmax < args.kmin:
        raise ConfigError(f"need 1 <= kmin <= kmax, got [{args.kmin}, {args.kmax}]")
    criteria = [c.strip() for c in args.criteria.split(",") if c.strip()]
    unknown = set(criteria) - {"bic", "icl", "elpd"}
    if unknown:
        raise ConfigError(f"unknown criteria: {sorted(unknown)}")
    if "elpd" in criteria and not is_bayes(args.method):
        print("warning: elpd requires a Bayesian method; dropping it",
              file=sys.stderr)
        criteria = [c for c in criteria if c != "elpd"]
    if not criteria:
        raise ConfigError("no computable criteria requested")

    ks = list(range(args.kmin, args.kmax + 1))
    payloads = [
        (data, k, args.method, args.iters, args.burnin, args.thin,
         args.restarts, args.seed, criteria, args.loo_method)
        for k in ks
    ]
    if args.threads > 1:
        with ProcessPoolExecutor(max_workers=args.threads) as pool:
            results = list(pool.map(_select_k_one, payloads))
    else:
        results = [_select_k_one(p) for p in payloads]
    results.sort(key=lambda r: r[0])

    table = {c: [dict(r[1]) .get(c, float("nan")) for r in results] for c in criteria}
    se = {}
    if any(r[2] for r in results):
        se["elpd"] = [r[2].get("elpd", float("nan")) for r in results]
    report = select_k(ks, table, se=se)
    os.makedirs(args.out, exist_ok=True)
    criterion_report_to_csv(report, os.path.join(args.out, "criteria.csv"))
    doc = criterion_report_to_dict(report)
    if "elpd" in criteria:
        doc["elpd_khat_high"] = [r[1].get("_khat_high", 0) for r in results]
    write_json_atomic(doc, os.path.join(args.out, "criteria.json"))
    chosen = " ".join(f"{c}: K={k}" for c, k in report.chosen.items())
    print(f"{chosen}; recommended K={report.recommended} -> {args.out}")
    return 0


def cmd_diagnose(args):
    from .dataio import _atomic_write_text

    traces = load_chain_traces(args.chain)
    report = {name: ess(trace) for name, trace in traces.items()}
    os.makedirs(os.path.join(args.out, "traces"), exist_ok=True)
    write_json_atomic(report, os.path.join(args.out, "ess.json"))
    for name, trace in traces.items():
        lines = ["draw,value"] + [f"{i},{repr(float(v))}" for i, v in enumerate(trace)]
        _atomic_write_text("\n".join(lines) + "\n",
                           os.path.join(args.out, "traces", f"{name}.csv"))
    print(f"ESS for {len(report)} parameters -> {args.out}")
    return 0


def _study_worker(payload):
    design_name, n, methods, rep, cfg = payload
    design = builtin_design(design_name).with_n(n)
    return study_replicate(design, methods, rep, cfg)


def cmd_study(args):
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    for m in methods:
        if m not in METHODS:
            raise ConfigError(f"unknown method {m!r}")
    cfg = {
        "iterations": args.iters,
        "burnin": args.burnin,
        "thin": args.thin,
        "restarts": args.restarts,
        "seed": args.seed,
    }
    if args.threads > 1:
        payloads = [(args.design, args.n, methods, rep, cfg)
                    for rep in range(args.reps)]
        with ProcessPoolExecutor(max_workers=args.threads) as pool:
            chunks = list(pool.map(_study_worker, payloads))
        rows = [row for chunk in chunks for row in chunk]
    else:
        design = builtin_design(args.design).with_n(args.n)
        rows = simdata.run_study(design, methods, args.reps, cfg)
    os.makedirs(args.out, exist_ok=True)
    from .dataio import study_rows_to_csv

    study_rows_to_csv(rows, os.path.join(args.out, "study.csv"))
    failures = sum(r["failed"] for r in rows if r["metric"] == "fit_failure")
    print(f"{args.reps} replicates x {len(methods)} methods "
          f"({failures} hard failures) -> {args.out}")
    return 0


def cmd_covdesc(args):
    table = read_response_table(args.table)
    data, report = covdesc(table, min_replicates=args.min_replicates)
    save_dataset(data, args.out)
    exclusions_path = _sibling(args.out, ".exclusions.json")
    write_json_atomic(report, exclusions_path)
    print(f"retained {data.n} of {len(table.items)} items (p={data.p}); "
          f"exclusions -> {exclusions_path}")
    return 0


_COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "select-k": cmd_select_k,
    "diagnose": cmd_diagnose,
    "study": cmd_study,
    "covdesc": cmd_covdesc,
}


def _fail(exc, code):
    print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
          file=sys.stderr)
    return code


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        return _fail(exc, 1)
    except (DataError, FileNotFoundError, PermissionError) as exc:
        return _fail(exc, 2)
    except (NumericalError, WishartMixError, np.linalg.LinAlgError) as exc:
        return _fail(exc, 3)


if __name__ == "__main__":
    sys.exit(main())
