"""Monte Carlo benchmark over a grid of simulation settings.

A config is a JSON object::

    {"schema": 1,
     "grid": [{"p": 100, "s_star": 20, "r_star": 1, "theta_norm2_override": 1.0}, ...],
     "algorithms": ["px_cavi_normal", "pca"],
     "replications": 100,
     "base_seed": 0,
     "hyperparameters": {"max_iter": 100},
     "output": "table1.csv",
     "parallelism": 4}

Replication ``k`` of every setting uses seed ``base_seed + k`` for both the
ground truth and the data, so adding replications never changes earlier
ones. Unless overridden, the noise variance is held fixed at its true value
(``estimate_sigma2=False``, ``sigma2_init=sigma2_star``).
"""

from __future__ import annotations

import dataclasses
import multiprocessing
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .algorithms import ALGORITHMS, fit
from .metrics import EvalReport, evaluate
from .synthetic import SimSpec, generate, spike_eigenvalues
from .types import FitResult, Hyperparameters

SCHEMA = 1
CSV_COLUMNS = ("p", "s_star", "r_star", "theta_norm2", "algorithm", "reps",
               "frob_mean", "frob_se", "misc_mean", "misc_se", "fdr_mean", "fnr_mean")
CONFIG_KEYS = {"schema", "grid", "algorithms", "algorithm", "replications", "base_seed",
               "hyperparameters", "output", "parallelism"}


@dataclass(frozen=True)
class BenchConfig:
    grid: tuple[SimSpec, ...]
    algorithms: tuple[str, ...]
    replications: int = 1
    base_seed: int = 0
    hyperparameters: dict = field(default_factory=dict)
    output: str = "bench.csv"
    parallelism: int = 1

    def __post_init__(self):
        if self.replications < 1:
            raise ValueError("replications must be at least 1")
        if self.parallelism < 1:
            raise ValueError("parallelism must be at least 1")
        if not self.grid:
            raise ValueError("grid is empty")
        if not self.algorithms:
            raise ValueError("no algorithms given")
        for a in self.algorithms:
            if a not in ALGORITHMS:
                raise ValueError(f"unknown algorithm {a!r}; choose from {', '.join(ALGORITHMS)}")
        # fail early on bad keys rather than inside a worker
        Hyperparameters.from_dict(self.hyperparameters)

    @classmethod
    def from_dict(cls, data: dict) -> BenchConfig:
        unknown = set(data) - CONFIG_KEYS
        if unknown:
            raise ValueError(f"unknown config key(s): {', '.join(sorted(unknown))}")
        if data.get("schema") != SCHEMA:
            raise ValueError(f"config schema must be {SCHEMA}, got {data.get('schema')!r}")
        algs = data.get("algorithms")
        if algs is None:
            algs = [data["algorithm"]] if "algorithm" in data else []
        elif isinstance(algs, str):
            algs = [algs]
        grid = tuple(SimSpec.from_dict(g) for g in data.get("grid", []))
        return cls(grid=grid, algorithms=tuple(algs),
                   replications=int(data.get("replications", 1)),
                   base_seed=int(data.get("base_seed", 0)),
                   hyperparameters=dict(data.get("hyperparameters", {})),
                   output=str(data.get("output", "bench.csv")),
                   parallelism=int(data.get("parallelism", 1)))

    def to_dict(self) -> dict:
        return {"schema": SCHEMA, "grid": [dataclasses.asdict(g) for g in self.grid],
                "algorithms": list(self.algorithms), "replications": self.replications,
                "base_seed": self.base_seed, "hyperparameters": self.hyperparameters,
                "output": self.output, "parallelism": self.parallelism}


def simulation_hyperparameters(spec: SimSpec, overrides: dict | None = None) -> Hyperparameters:
    base = Hyperparameters(estimate_sigma2=False, sigma2_init=spec.sigma2_star or None)
    return Hyperparameters.from_dict(overrides or {}, base=base)


def simulate(spec: SimSpec, algorithm: str, overrides: dict | None = None,
             r: int | None = None) -> tuple[EvalReport, FitResult]:
    """Generate one dataset from ``spec``, fit it with rank ``r`` (default r*), evaluate."""
    gt, X = generate(spec)
    hp = simulation_hyperparameters(spec, overrides)
    result = fit(algorithm, X, r or spec.r_star, hp)
    return evaluate(result, gt, hp.inclusion_threshold), result


def _task(args):
    spec, algorithm, overrides = args
    try:
        report, _ = simulate(spec, algorithm, overrides)
        return report, None
    except Exception as exc:  # recorded per row; the sweep keeps going
        return None, f"seed {spec.seed}: {type(exc).__name__}: {exc}"


def theta_norm2(spec: SimSpec) -> float:
    """``||theta*||_F^2``, i.e. the sum of the spike eigenvalues."""
    return float(np.sum(spike_eigenvalues(spec)))


def _se(x: np.ndarray) -> float:
    return float(np.std(x, ddof=1) / np.sqrt(x.size)) if x.size > 1 else 0.0


def summarize(spec: SimSpec, algorithm: str, reports: list[EvalReport]) -> list:
    frob = np.array([r.frobenius_loss for r in reports])
    misc = np.array([r.misclassification_pct for r in reports])
    fdr = np.array([r.fdr for r in reports])
    fnr = np.array([r.fnr for r in reports])
    nan = float("nan")
    mean = (lambda a: float(np.mean(a)) if a.size else nan)
    return [spec.p, spec.s_star, spec.r_star, theta_norm2(spec), algorithm, len(reports),
            mean(frob), _se(frob) if frob.size else nan, mean(misc), _se(misc) if misc.size else nan,
            mean(fdr), mean(fnr)]


def worker_count(config: BenchConfig) -> int:
    env = os.environ.get("VBSPCA_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError as exc:
            raise ValueError(f"VBSPCA_THREADS must be an integer, got {env!r}") from exc
        if n < 1:
            raise ValueError("VBSPCA_THREADS must be at least 1")
        return n
    return config.parallelism


def run_bench(config: BenchConfig, out_path=None, log=sys.stderr) -> list[dict]:
    """Run every (setting, algorithm) cell and write the CSV table.

    Returns one summary dict per row (the CSV values plus any per-replication
    failures). Results are aggregated in replication order whatever order the
    workers finish in.
    """
    cells = [(spec, alg) for spec in config.grid for alg in config.algorithms]
    tasks = [(dataclasses.replace(spec, seed=config.base_seed + k), alg, config.hyperparameters)
             for spec, alg in cells for k in range(config.replications)]
    workers = worker_count(config)
    if workers == 1:
        outcomes = [_task(t) for t in tasks]
    else:
        ctx = multiprocessing.get_context("spawn")
        with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
            outcomes = list(pool.map(_task, tasks, chunksize=max(1, len(tasks) // (8 * workers))))
    rows, summary = [], []
    for i, (spec, alg) in enumerate(cells):
        chunk = outcomes[i * config.replications:(i + 1) * config.replications]
        reports = [rep for rep, err in chunk if rep is not None]
        failures = [err for _, err in chunk if err is not None]
        row = summarize(spec, alg, reports)
        rows.append(row)
        summary.append({**dict(zip(CSV_COLUMNS, row)), "failures": failures})
        if log is not None:
            print(f"p={spec.p} s*={spec.s_star} r*={spec.r_star} {alg}: reps={row[5]} "
                  f"frob={row[6]:.4f} (se {row[7]:.4f}) misc={row[8]:.3f}% fdr={row[10]:.4f} "
                  f"fnr={row[11]:.4f}" + (f" failures={len(failures)}" if failures else ""), file=log)
    out = Path(out_path or config.output)
    io.write_csv(out, rows, header=CSV_COLUMNS)
    io.write_json(out.with_suffix(".summary.json"), {"config": config.to_dict(), "rows": summary})
    return summary
