"""Command-line front end: ``fedhc learn|outliers|simulate|bench``."""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from .citests import CorrelationMatrix, correlation_matrix
from .data import (
    ContinuousDataset,
    EdgeConstraints,
    graph_to_dot,
    graph_to_json,
    load_csv,
    load_pairs_csv,
    write_csv,
)
from .errors import FedhcError, InconsistentConstraints, InputError, PreconditionError
from .metrics import BENCH_HEADER, Scenario, dag_to_cpdag, run_benchmark
from .pipeline import SCORE_ALIASES, learn
from .robust import rmcd_outliers
from .simulate import random_gaussian_bn, sample_gaussian

EXIT_OK, EXIT_INPUT, EXIT_CONSTRAINTS, EXIT_INTERNAL = 0, 2, 3, 4


def _default_threads() -> int:
    return os.cpu_count() or 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fedhc", description="Hybrid Bayesian network structure learning.")
    sub = p.add_subparsers(dest="command", required=True)

    lp = sub.add_parser("learn", help="learn a network from a CSV dataset")
    lp.add_argument("input", help="headed CSV dataset")
    lp.add_argument("--algorithm", choices=["fedhc", "pchc", "mmhc"], default="fedhc")
    lp.add_argument("--method", choices=["pearson", "spearman", "cat"], default="pearson")
    lp.add_argument("--cat-test", choices=["g2", "x2"], default="g2", help="test used with --method cat")
    lp.add_argument("--alpha", type=float, default=0.05)
    lp.add_argument("--robust", action="store_true", help="remove RMCD outliers first")
    lp.add_argument("--restart", type=int, default=10)
    lp.add_argument("--score", choices=sorted(SCORE_ALIASES), default=None,
                    help="default: bic-g for continuous data, bic for categorical")
    lp.add_argument("--search", choices=["hc", "tabu"], default="hc")
    lp.add_argument("--blacklist", help="CSV with columns from,to of forbidden arrows")
    lp.add_argument("--whitelist", help="CSV with columns from,to of required arrows")
    lp.add_argument("--max-k", type=int, default=3)
    lp.add_argument("--seed", type=int, default=0)
    lp.add_argument("--threads", type=int, default=None)
    lp.add_argument("--corr", help="reuse a correlation matrix saved with --out-corr (.npy)")
    lp.add_argument("--out-corr", help="save the correlation matrix (.npy)")
    lp.add_argument("--out-dot")
    lp.add_argument("--out-json")
    lp.add_argument("--report")

    op = sub.add_parser("outliers", help="flag multivariate outliers")
    op.add_argument("input")
    op.add_argument("--seed", type=int, default=0)
    op.add_argument("--out", help="output CSV (default: stdout)")

    sp = sub.add_parser("simulate", help="sample data from a random linear-Gaussian network")
    sp.add_argument("--D", type=int, required=True)
    sp.add_argument("--avg-neighbors", type=float, required=True)
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True, help="dataset CSV")
    sp.add_argument("--truth", required=True, help="ground-truth JSON (DAG and CPDAG)")

    bp = sub.add_parser("bench", help="run a simulation benchmark")
    bp.add_argument("--D", type=int, required=True)
    bp.add_argument("--avg-neighbors", type=float, required=True)
    bp.add_argument("--n", type=int, nargs="+", required=True)
    bp.add_argument("--replicates", type=int, default=1)
    bp.add_argument("--algorithms", nargs="+", choices=["fedhc", "pchc", "mmhc"], default=["fedhc"])
    bp.add_argument("--alpha", type=float, default=0.05)
    bp.add_argument("--seed", type=int, default=0)
    bp.add_argument("--threads", type=int, default=None)
    bp.add_argument("--out", help="output CSV (default: stdout)")
    return p


def _constraints(args, names) -> EdgeConstraints | None:
    if not args.blacklist and not args.whitelist:
        return None
    black = load_pairs_csv(args.blacklist, names) if args.blacklist else frozenset()
    white = load_pairs_csv(args.whitelist, names) if args.whitelist else frozenset()
    c = EdgeConstraints(black, white)
    c.check(len(names))
    return c


def cmd_learn(args) -> int:
    data = load_csv(args.input, "categorical" if args.method == "cat" else "continuous")
    constraints = _constraints(args, data.names)
    R = None
    if args.corr:
        R = CorrelationMatrix(np.load(args.corr), args.method)
        if R.D != data.D:
            raise InputError(f"{args.corr}: matrix is {R.D}x{R.D}, dataset has {data.D} columns")
    elif args.out_corr and args.method != "cat" and not args.robust:
        R = correlation_matrix(data, args.method)
    if args.out_corr and R is not None:
        np.save(args.out_corr, R.R)

    res = learn(
        data, algorithm=args.algorithm, method=args.method, alpha=args.alpha, robust=args.robust,
        restart=args.restart, score=args.score, constraints=constraints, max_k=args.max_k,
        seed=args.seed, search=args.search, R=R, test=args.cat_test if args.method == "cat" else None,
    )
    names = res.names
    if args.out_dot:
        Path(args.out_dot).write_text(graph_to_dot(res.dag, names))
    if args.out_json:
        Path(args.out_json).write_text(json.dumps(graph_to_json(res.dag, names), indent=2) + "\n")
    report = {
        "algorithm": args.algorithm,
        "method": args.method,
        "score_name": args.score or ("bic" if args.method == "cat" else "bic-g"),
        "score": res.score,
        "n_tests": res.skeleton.n_tests,
        "n_rows": data.n,
        "removed_rows": int(len(res.removed_rows)),
        "removed_indices": res.removed_rows.tolist(),
        "runtime": {
            "outliers": res.robust_seconds,
            "skeleton": res.skeleton_seconds,
            "search": res.search_seconds,
            "total": res.total_seconds,
        },
        "graph": graph_to_json(res.dag, names),
    }
    if args.report:
        Path(args.report).write_text(json.dumps(report, indent=2) + "\n")
    n_arrows = len(res.dag.edges())
    print(
        f"{args.algorithm}: {n_arrows} arrows, score {res.score:.6g}, {res.skeleton.n_tests} tests, "
        f"{len(res.removed_rows)} rows removed, {res.total_seconds:.3f}s "
        f"(skeleton {res.skeleton_seconds:.3f}s, search {res.search_seconds:.3f}s)"
    )
    return EXIT_OK


def cmd_outliers(args) -> int:
    data = load_csv(args.input, "continuous")
    rep = rmcd_outliers(data, seed=args.seed)
    flagged = rep.flagged
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "distance", "weight", "flagged"])
        for i in range(data.n):
            w.writerow([i, repr(float(rep.distances[i])), int(rep.weights[i]), int(flagged[i])])
    finally:
        if fh is not sys.stdout:
            fh.close()
    print(f"{len(rep.outlier_indices)} of {data.n} rows flagged", file=sys.stderr)
    return EXIT_OK


def cmd_simulate(args) -> int:
    bn = random_gaussian_bn(args.D, args.avg_neighbors, args.seed)
    data = sample_gaussian(bn, args.n, seed=args.seed)
    write_csv(args.out, data)
    names = data.names
    truth = {
        "dag": graph_to_json(bn.dag, names),
        "cpdag": graph_to_json(dag_to_cpdag(bn.dag), names),
        "coefficients": [[names[a], names[b], c] for (a, b), c in sorted(bn.beta.items())],
    }
    Path(args.truth).write_text(json.dumps(truth, indent=2) + "\n")
    return EXIT_OK


def cmd_bench(args) -> int:
    sc = Scenario(
        D=args.D, avg_neighbors=args.avg_neighbors, n=tuple(args.n), replicates=args.replicates,
        algorithms=tuple(args.algorithms), seed=args.seed, alpha=args.alpha,
    )
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.DictWriter(fh, fieldnames=BENCH_HEADER, lineterminator="\n")
        w.writeheader()

        def stream(rec):
            w.writerow(rec.__dict__)
            fh.flush()

        run_benchmark(sc, workers=args.threads or _default_threads(), on_record=stream)
    finally:
        if fh is not sys.stdout:
            fh.close()
    return EXIT_OK


COMMANDS = {"learn": cmd_learn, "outliers": cmd_outliers, "simulate": cmd_simulate, "bench": cmd_bench}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except InconsistentConstraints as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONSTRAINTS
    except (InputError, PreconditionError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except FedhcError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
