"""Command-line entry point: ``vbspca fit | simulate | bench``.

Every failure exits with status 2 and a single ``error: ...`` line on
stderr. Non-convergence is not an error (the result records
``converged: false``).
"""

from __future__ import annotations

import argparse
import dataclasses
import sys

import numpy as np

from . import io
from .algorithms import ALGORITHMS, fit
from .bench import BenchConfig, run_bench, simulate
from .cavi import FitError
from .linalg import standardize
from .synthetic import SimSpec
from .types import FitResult, Hyperparameters

RESULT_SCHEMA = 1


class CliError(Exception):
    pass


def result_document(result: FitResult, rank: int) -> dict:
    """The ``result.json`` layout; indices are 1-based."""
    return {
        "schema": RESULT_SCHEMA,
        "algorithm": result.algorithm,
        "rank": rank,
        "sigma2": result.sigma2,
        "converged": bool(result.converged),
        "iterations": int(result.iterations),
        "support": [int(j) + 1 for j in result.row_support()],
        "inclusion": np.asarray(result.inclusion).tolist(),
        "loadings": np.atleast_2d(np.asarray(result.loadings).T).T.tolist(),
        "trace": [float(t) for t in result.trace],
        "flags": list(result.flags),
    }


def _load_hp(path) -> Hyperparameters:
    if path is None:
        return Hyperparameters()
    data = io.read_json(path)
    if not isinstance(data, dict):
        raise CliError(f"{path}: expected a JSON object of hyperparameters")
    data = {k: v for k, v in data.items() if k != "schema"}
    return Hyperparameters.from_dict(data)


def cmd_fit(args) -> int:
    X, _ = io.read_csv(args.input)
    n, p = X.shape
    if not 1 <= args.rank <= min(n, p):
        raise CliError(f"rank {args.rank} must be between 1 and min(n, p) = {min(n, p)}")
    if n < 2:
        raise CliError("need at least 2 rows")
    hp = _load_hp(args.config)
    if args.standardize:
        X = standardize(X)
    result = fit(args.algorithm, X, args.rank, hp)
    io.write_json(args.out, result_document(result, args.rank))
    return 0


def cmd_simulate(args) -> int:
    data = io.read_json(args.spec)
    if not isinstance(data, dict):
        raise CliError(f"{args.spec}: expected a JSON object")
    data = {k: v for k, v in data.items() if k != "schema"}
    if args.seed is not None:
        data["seed"] = args.seed
    spec = SimSpec.from_dict(data)
    hp = None if args.config is None else {k: v for k, v in io.read_json(args.config).items()
                                           if k != "schema"}
    report, result = simulate(spec, args.algorithm, hp, r=args.rank)
    doc = {"schema": RESULT_SCHEMA, "algorithm": args.algorithm, "spec": dataclasses.asdict(spec),
           **report.to_dict(), "converged": bool(result.converged),
           "iterations": int(result.iterations)}
    if args.out:
        io.write_json(args.out, doc)
    else:
        sys.stdout.write(io.dumps(doc))
    return 0


def cmd_bench(args) -> int:
    data = io.read_json(args.config)
    if not isinstance(data, dict):
        raise CliError(f"{args.config}: expected a JSON object")
    if args.parallelism is not None:
        data["parallelism"] = args.parallelism
    config = BenchConfig.from_dict(data)
    run_bench(config, out_path=args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="vbspca", description="Spike-and-slab Bayesian sparse PCA.")
    sub = ap.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="fit a CSV data matrix (rows are observations)")
    f.add_argument("input", help="CSV file, n rows x p numeric columns, optional header")
    f.add_argument("--rank", "-r", type=int, required=True)
    f.add_argument("--algorithm", "-a", choices=ALGORITHMS, default="px_cavi_normal")
    f.add_argument("--standardize", action=argparse.BooleanOptionalAction, default=True,
                   help="center and scale each column first (default: on)")
    f.add_argument("--config", help="JSON object of hyperparameter overrides")
    f.add_argument("--out", "-o", default="result.json")
    f.set_defaults(func=cmd_fit)

    s = sub.add_parser("simulate", help="generate one dataset, fit it and evaluate")
    s.add_argument("--spec", required=True, help="JSON simulation spec")
    s.add_argument("--algorithm", "-a", choices=ALGORITHMS, default="px_cavi_normal")
    s.add_argument("--seed", type=int, help="overrides the seed in the spec")
    s.add_argument("--rank", "-r", type=int, help="plug-in rank (default: the true rank)")
    s.add_argument("--config", help="JSON object of hyperparameter overrides")
    s.add_argument("--out", "-o", help="report path (default: stdout)")
    s.set_defaults(func=cmd_simulate)

    b = sub.add_parser("bench", help="run a benchmark grid and write a CSV table")
    b.add_argument("--config", required=True, help="JSON benchmark config (schema 1)")
    b.add_argument("--parallelism", "-j", type=int, help="worker processes (VBSPCA_THREADS wins)")
    b.add_argument("--out", "-o", help="CSV path (default: the config's output)")
    b.set_defaults(func=cmd_bench)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CliError, FitError, ValueError, OSError, KeyError, TypeError,
            np.linalg.LinAlgError) as exc:
        msg = " ".join(str(exc).split()) or type(exc).__name__
        print(f"error: {msg}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
