"""Experiment harness: Gaussian test systems, trial grids, aggregates, exports.

Seeding
-------
The problem for trial ``t`` depends only on ``(base_seed, t)``, so every
method and every sketch size at the same trial index solves the same system.
Each method's sketch/sampling seed additionally mixes in ``d`` and a stable
hash of the method tag.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from .linalg import as_matrix
from .solvers import TAGS, SolverConfig, StoppingRule, solve

log = logging.getLogger(__name__)

RESULT_FIELDS = ("method", "m", "n", "d", "tau", "trial", "seed", "iters",
                 "wall_seconds", "final_res", "status")
TRACE_FIELDS = ("iteration", "median_log10_res", "median_wall_seconds")

SPEEDUPS = {
    "speedup1": ("CS-MWRK", "RS-MWRK(Q)"),
    "speedup2": ("CS-MWRK", "RS-MWRK(G)"),
    "speedup3": ("RaBK-c", "LS-RaBK(Q)-c"),
    "speedup4": ("RaBK-a", "LS-RaBK(Q)-a"),
}


def tau_for(d: int) -> int:
    """Block size for sketch size `d`: ``d / 50`` rounded half up, at least 1."""
    return max(1, math.floor(d / 50 + 0.5))


def _seed(*words: int) -> int:
    return int(np.random.SeedSequence(list(words)).generate_state(1, dtype=np.uint64)[0])


def tag_hash(tag: str) -> int:
    return zlib.crc32(tag.encode())


def problem_seed(base_seed: int, trial: int, fixed_problem: bool = False) -> int:
    return _seed(base_seed) if fixed_problem else _seed(base_seed, 1, trial)


def method_seed(base_seed: int, trial: int, d: int, tag: str) -> int:
    return _seed(base_seed, 2, trial, d, tag_hash(tag))


def generate_problem(m: int, n: int, seed: int):
    """Standard normal ``A`` (m x n) and ``x*``, with ``b = A @ x*``."""
    if not m > n >= 1:
        raise ValueError(f"need m > n >= 1, got m={m}, n={n}")
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((m, n))
    xstar = rng.standard_normal(n)
    return A, xstar, A @ xstar


def problem_from_matrix(A, seed: int):
    """Consistent system for a given matrix: random ``x*`` and ``b = A @ x*``."""
    A = as_matrix(A)
    xstar = np.random.default_rng(seed).standard_normal(A.shape[1])
    return A, xstar, A @ xstar


@dataclass
class ExperimentSpec:
    m: int
    n: int
    d_multipliers: list[int] = field(default_factory=lambda: [10])
    methods: list[str] = field(default_factory=lambda: list(TAGS))
    trials: int = 50
    base_seed: int = 0
    tol: float = 1e-6
    max_iters: int = 100_000
    trace_stride: int = 1
    lk_weights: str = "raw"
    block_mode: str = "fresh"
    fixed_problem: bool = False
    matrix_path: str | None = None

    def __post_init__(self):
        self.d_multipliers = [int(v) for v in self.d_multipliers]
        self.methods = list(self.methods)
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if not self.m > self.n >= 1:
            raise ValueError(f"need m > n >= 1, got m={self.m}, n={self.n}")
        for d in self.ds:
            if not 1 <= d < self.m:
                raise ValueError(f"sketch size d={d} must satisfy 1 <= d < m={self.m}")
        for tag in self.methods:
            self.config(tag, self.ds[0], 0)

    @property
    def ds(self) -> list[int]:
        return [k * self.n for k in self.d_multipliers]

    def config(self, tag: str, d: int, trial: int) -> SolverConfig:
        cfg = SolverConfig.from_tag(
            tag, d=d, tau=tau_for(d),
            stop=StoppingRule(self.tol, self.max_iters),
            seed=method_seed(self.base_seed, trial, d, tag),
            trace_stride=self.trace_stride,
        )
        if cfg.is_block:
            cfg = replace(cfg, block=replace(cfg.block, mode=self.block_mode))
            if cfg.stepsize.kind == "adaptive":
                cfg = replace(cfg, stepsize=replace(cfg.stepsize, lk_weights=self.lk_weights))
        return cfg

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown experiment keys: {sorted(unknown)}")
        return cls(**data)


@dataclass
class TrialResult:
    method: str
    m: int
    n: int
    d: int
    tau: int
    trial: int
    seed: int
    iters: int
    wall_seconds: float
    final_res: float
    status: str
    trace: tuple[np.ndarray, np.ndarray, np.ndarray] | None = field(
        default=None, repr=False, compare=False)

    def row(self) -> dict:
        return {k: getattr(self, k) for k in RESULT_FIELDS}


def _run_cell(args) -> list[TrialResult]:
    spec, d, trial, backend, keep_traces = args
    pseed = problem_seed(spec.base_seed, trial, spec.fixed_problem)
    if spec.matrix_path is not None:
        from .linalg import load_matrix_market

        A, xstar, b = problem_from_matrix(load_matrix_market(spec.matrix_path), pseed)
    else:
        A, xstar, b = generate_problem(spec.m, spec.n, pseed)
    out = []
    for tag in spec.methods:
        cfg = spec.config(tag, d, trial)
        tau = cfg.block.tau if cfg.is_block else 0
        try:
            tr = solve(A, b, cfg, xstar=xstar, backend=backend)
        except Exception as exc:  # recorded, never aborts the grid
            log.error("trial %d of %s (d=%d) failed: %s", trial, tag, d, exc)
            out.append(TrialResult(tag, spec.m, spec.n, d, tau, trial, cfg.seed, 0,
                                   math.nan, math.nan, "error"))
            continue
        out.append(TrialResult(
            tag, spec.m, spec.n, d, tau, trial, cfg.seed, tr.iterations, tr.wall_seconds,
            tr.final_res, tr.status,
            (tr.res_iters, tr.res_values, tr.res_seconds) if keep_traces else None,
        ))
    return out


def run_grid(spec: ExperimentSpec, sink: Callable[[TrialResult], None] | None = None,
             workers: int = 1, backend: str | None = None,
             keep_traces: bool = True) -> list[TrialResult]:
    """Run every (d, trial, method) combination of `spec`.

    Results reach `sink` in grid order as soon as each (d, trial) cell
    finishes. With ``workers > 1`` cells run in separate processes, which
    inflates wall times; keep ``workers=1`` for timing comparisons.
    """
    cells = [(spec, d, t, backend, keep_traces) for d in spec.ds for t in range(spec.trials)]
    results: list[TrialResult] = []

    def consume(batches: Iterable[list[TrialResult]]):
        for batch in batches:
            for r in batch:
                results.append(r)
                if sink is not None:
                    sink(r)

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            consume(pool.map(_run_cell, cells))
    else:
        consume(map(_run_cell, cells))
    return results


@dataclass
class MethodStats:
    trials: int
    converged: int
    mean_iters: float | None
    mean_cpu: float | None

    @property
    def available(self) -> bool:
        return self.converged > 0

    @property
    def convergence_rate(self) -> float:
        return self.converged / self.trials


@dataclass
class GroupStats:
    m: int
    n: int
    d: int
    methods: dict[str, MethodStats]
    speedups: dict[str, float | None]


@dataclass
class AggregateStats:
    groups: list[GroupStats]

    def group(self, m: int, n: int, d: int) -> GroupStats:
        for g in self.groups:
            if (g.m, g.n, g.d) == (m, n, d):
                return g
        raise KeyError((m, n, d))

    def to_dict(self) -> dict:
        out = []
        for g in self.groups:
            out.append({
                "m": g.m, "n": g.n, "d": g.d,
                "methods": {
                    tag: {**asdict(s), "available": s.available,
                          "convergence_rate": s.convergence_rate}
                    for tag, s in g.methods.items()
                },
                "speedups": g.speedups,
            })
        return {"groups": out}


def aggregate(results: Iterable[TrialResult]) -> AggregateStats:
    """Mean iterations and CPU per (m, n, d, method) over converged trials.

    Non-converged trials are excluded from the means and counted; a method
    with no converged trial has ``mean_iters = None``.
    """
    cells: dict[tuple, dict[str, list[TrialResult]]] = {}
    for r in results:
        cells.setdefault((r.m, r.n, r.d), {}).setdefault(r.method, []).append(r)
    if not cells:
        raise ValueError("no results to aggregate")
    groups = []
    for (m, n, d), by_method in cells.items():
        stats = {}
        for tag, rs in by_method.items():
            ok = [r for r in rs if r.status == "converged"]
            if len(ok) < len(rs):
                log.warning("%s at %dx%d, d=%d: %d of %d trials did not converge and are "
                            "excluded from the means", tag, m, n, d, len(rs) - len(ok), len(rs))
            stats[tag] = MethodStats(
                trials=len(rs),
                converged=len(ok),
                mean_iters=float(np.mean([r.iters for r in ok])) if ok else None,
                mean_cpu=float(np.mean([r.wall_seconds for r in ok])) if ok else None,
            )
        speedups = {}
        for name, (base, variant) in SPEEDUPS.items():
            sb, sv = stats.get(base), stats.get(variant)
            if sb and sv and sb.available and sv.available and sv.mean_cpu > 0:
                speedups[name] = sb.mean_cpu / sv.mean_cpu
            else:
                speedups[name] = None
        groups.append(GroupStats(m, n, d, stats, speedups))
    return AggregateStats(groups)


# ---------------------------------------------------------------------------
# files


class ResultWriter:
    """Append-only results CSV, usable as a :func:`run_grid` sink."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._fh = open(self.path, "w", newline="")
        self._writer = csv.DictWriter(self._fh, fieldnames=RESULT_FIELDS)
        self._writer.writeheader()

    def __call__(self, result: TrialResult) -> None:
        row = result.row()
        for key in ("wall_seconds", "final_res"):
            row[key] = repr(float(row[key]))
        self._writer.writerow(row)
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_results_csv(results: Iterable[TrialResult], path: str | Path) -> Path:
    with ResultWriter(path) as w:
        for r in results:
            w(r)
    return Path(path)


def read_results_csv(path: str | Path) -> list[TrialResult]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != RESULT_FIELDS:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        for row in reader:
            out.append(TrialResult(
                method=row["method"], m=int(row["m"]), n=int(row["n"]), d=int(row["d"]),
                tau=int(row["tau"]), trial=int(row["trial"]), seed=int(row["seed"]),
                iters=int(row["iters"]), wall_seconds=float(row["wall_seconds"]),
                final_res=float(row["final_res"]), status=row["status"],
            ))
    return out


def median_trace(results: list[TrialResult], stride: int = 1):
    """Median log10 RES and wall time across trials at each recorded iteration.

    A trial that stopped earlier contributes its final values to later
    iterations. Returns ``(iterations, median_log10_res, median_seconds)``.
    """
    traces = [r.trace for r in results if r.trace is not None]
    if not traces:
        raise ValueError("results carry no traces")
    grid = np.unique(np.concatenate([t[0] for t in traces]))
    keep = (grid % stride == 0)
    keep[-1] = True
    grid = grid[keep]
    logs, secs = [], []
    for it, res, sec in traces:
        idx = np.searchsorted(it, grid, side="right") - 1
        logs.append(np.log10(np.maximum(res[idx], 1e-300)))
        secs.append(sec[idx])
    return grid, np.median(logs, axis=0), np.median(secs, axis=0)


def _slug(tag: str) -> str:
    return tag.replace("(", "_").replace(")", "")


def export(results: list[TrialResult], stats: AggregateStats, out_dir: str | Path,
           fmt: str = "csv", trace_stride: int = 1, write_results: bool = True) -> dict[str, Path]:
    """Write the results table, the aggregate JSON and per-method median traces.

    Trace files are named ``trace_<method>_<m>x<n>_d<d>.csv``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths: dict[str, Path] = {}
    if write_results:
        if fmt == "csv":
            paths["results"] = write_results_csv(results, out / "results.csv")
        elif fmt == "json":
            p = out / "results.json"
            p.write_text(json.dumps([r.row() for r in results], indent=1))
            paths["results"] = p
        else:
            raise ValueError(f"unknown format {fmt!r}")
    p = out / "stats.json"
    p.write_text(json.dumps(stats.to_dict(), indent=2))
    paths["stats"] = p
    cells: dict[tuple, list[TrialResult]] = {}
    for r in results:
        if r.trace is not None:
            cells.setdefault((r.method, r.m, r.n, r.d), []).append(r)
    for (tag, m, n, d), rs in cells.items():
        it, med_log, med_sec = median_trace(rs, trace_stride)
        p = out / f"trace_{_slug(tag)}_{m}x{n}_d{d}.csv"
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(TRACE_FIELDS)
            for row in zip(it.tolist(), med_log.tolist(), med_sec.tolist()):
                w.writerow(row)
        paths[f"trace:{tag}:{m}x{n}:d{d}"] = p
    return paths
