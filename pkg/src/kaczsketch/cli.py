"""Command line entry point: ``kaczsketch {gen,run,report,bounds}``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import analysis, bench
from .linalg import load_matrix_market, save_matrix_market
from .sketch import apply_sketch, build_sketch, embedding_distortion

EXIT_OK, EXIT_TRIAL_FAILED = 0, 2


def _int_list(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v]


def _str_list(text: str) -> list[str]:
    return [v.strip() for v in text.split(",") if v.strip()]


def cmd_gen(args) -> int:
    A, xstar, b = bench.generate_problem(args.m, args.n, args.seed)
    out = Path(args.out)
    if out.suffix == ".mtx":
        save_matrix_market(out, A)
        np.savez(out.with_suffix(".npz"), A=A, xstar=xstar, b=b)
    else:
        np.savez(out, A=A, xstar=xstar, b=b)
    print(f"wrote {args.m}x{args.n} problem (seed {args.seed}) to {out}")
    return EXIT_OK


def _spec_from_args(args) -> bench.ExperimentSpec:
    data = {}
    if args.config:
        data = json.loads(Path(args.config).read_text())
    flags = {
        "m": args.m, "n": args.n, "d_multipliers": args.d_mult, "methods": args.methods,
        "trials": args.trials, "base_seed": args.seed, "tol": args.tol,
        "max_iters": args.max_iters, "trace_stride": args.trace_stride,
        "lk_weights": args.lk_weights, "block_mode": args.block_mode,
        "matrix_path": args.matrix,
    }
    data.update({k: v for k, v in flags.items() if v is not None})
    if args.fixed_problem:
        data["fixed_problem"] = True
    if data.get("matrix_path"):
        A = load_matrix_market(data["matrix_path"])
        data["m"], data["n"] = A.shape
    if "m" not in data or "n" not in data:
        raise SystemExit("run: give --m and --n, --matrix, or a --config with m and n")
    return bench.ExperimentSpec.from_dict(data)


def _print_stats(stats: bench.AggregateStats) -> None:
    for g in stats.groups:
        print(f"\n{g.m}x{g.n}  d={g.d}")
        print(f"  {'method':<14}{'IT':>12}{'CPU [s]':>12}{'conv':>8}")
        for tag, s in g.methods.items():
            it = f"{s.mean_iters:.4f}" if s.available else "n/a"
            cpu = f"{s.mean_cpu:.4f}" if s.available else "n/a"
            print(f"  {tag:<14}{it:>12}{cpu:>12}{s.converged:>5}/{s.trials}")
        shown = {k: v for k, v in g.speedups.items() if v is not None}
        if shown:
            print("  " + "  ".join(f"{k}={v:.4f}" for k, v in shown.items()))


def cmd_run(args) -> int:
    spec = _spec_from_args(args)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "spec.json").write_text(json.dumps(spec.to_dict(), indent=2))
    workers = 1 if args.serial else (args.workers or os.cpu_count() or 1)
    with bench.ResultWriter(out / "results.csv") as sink:
        results = bench.run_grid(spec, sink=sink, workers=workers, backend=args.backend)
    stats = bench.aggregate(results)
    bench.export(results, stats, out, trace_stride=args.export_stride or spec.trace_stride,
                 write_results=False)
    _print_stats(stats)
    failed = sum(r.status != "converged" for r in results)
    if failed:
        print(f"\n{failed} of {len(results)} trials did not converge", file=sys.stderr)
        return EXIT_TRIAL_FAILED
    return EXIT_OK


def cmd_report(args) -> int:
    results = bench.read_results_csv(args.results)
    stats = bench.aggregate(results)
    _print_stats(stats)
    if args.out:
        Path(args.out).write_text(json.dumps(stats.to_dict(), indent=2))
    failed = sum(r.status != "converged" for r in results)
    return EXIT_TRIAL_FAILED if failed else EXIT_OK


def cmd_bounds(args) -> int:
    if args.problem:
        if args.problem.endswith(".mtx"):
            A = load_matrix_market(args.problem)
        else:
            A = np.load(args.problem)["A"]
    else:
        if args.m is None or args.n is None:
            raise SystemExit("bounds: give --problem or --m and --n")
        A, _, _ = bench.generate_problem(args.m, args.n, args.seed)
    if args.normalize:
        A = A / np.linalg.norm(A, axis=1, keepdims=True)
    m, n = A.shape
    d = args.d if args.d is not None else args.d_mult * n
    tau = args.tau if args.tau is not None else bench.tau_for(d)
    S = build_sketch(args.sketch, m, d, args.seed)
    system = apply_sketch(S, A, np.zeros(m))
    lo, hi = embedding_distortion(system.A, A, probes=args.probes, seed=args.seed)
    eps = args.epsilon if args.epsilon is not None else analysis.empirical_epsilon(lo, hi)
    s_orig = analysis.spectral_summary(A, tau, args.block_mode, args.seed)
    s_sk = analysis.spectral_summary(system.A, tau, args.block_mode, args.seed)
    report = {
        "m": m, "n": n, "d": d, "tau": tau, "sketch": S.to_record(),
        "distortion": {"lo": lo, "hi": hi, "probes": args.probes},
        "epsilon": eps, "epsilon_source": "user" if args.epsilon is not None else "empirical",
        "summary_original": s_orig.to_dict(),
        "summary_sketched": s_sk.to_dict(),
        "range": analysis.range_preservation_check(A, system.A).__dict__,
    }
    bounds = {"MWRK": analysis.mwrk_bound(s_orig), "RaBK": analysis.rabk_bound(s_orig, tau)}
    try:
        bounds["RS-MWRK"] = analysis.rs_mwrk_bound(s_orig, s_sk, eps)
        bounds["LS-RaBK"] = analysis.ls_rabk_bound(s_orig, tau, d, eps)
    except ValueError as exc:
        report["sketched_bounds_error"] = str(exc)
    report["bounds"] = {k: v.to_dict() for k, v in bounds.items()}
    if args.delta is not None and 0 < eps < 1:
        report["theoretical_d"] = {
            "value": analysis.theoretical_sketch_size(n, eps, args.delta, args.d_constant),
            "expression": "C * n^2 / (delta * eps^2)", "C": args.d_constant,
            "delta": args.delta,
        }
    text = json.dumps(report, indent=2)
    if args.out:
        Path(args.out).write_text(text)
    else:
        print(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kaczsketch", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="write a random consistent system to a file")
    g.add_argument("--m", type=int, required=True)
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True, help=".npz (A, xstar, b) or .mtx (A, plus .npz)")
    g.set_defaults(func=cmd_gen)

    r = sub.add_parser("run", help="run an experiment grid")
    r.add_argument("--config", help="JSON file with ExperimentSpec fields; flags override")
    r.add_argument("--m", type=int)
    r.add_argument("--n", type=int)
    r.add_argument("--matrix", help="MatrixMarket file used as A for every trial")
    r.add_argument("--d-mult", type=_int_list, help="comma-separated multipliers of n")
    r.add_argument("--methods", type=_str_list,
                   help=f"comma-separated tags, default {','.join(bench.TAGS)}")
    r.add_argument("--trials", type=int)
    r.add_argument("--seed", type=int)
    r.add_argument("--tol", type=float)
    r.add_argument("--max-iters", type=int)
    r.add_argument("--trace-stride", type=int)
    r.add_argument("--export-stride", type=int, help="thin the median traces further")
    r.add_argument("--lk-weights", choices=("raw", "normalized"))
    r.add_argument("--block-mode", choices=("fresh", "partition"))
    r.add_argument("--fixed-problem", action="store_true",
                   help="reuse one problem instance for every trial")
    r.add_argument("--serial", action="store_true", help="one process; use for timings")
    r.add_argument("--workers", type=int)
    r.add_argument("--backend", choices=("cython", "python"))
    r.add_argument("--out-dir", default="results")
    r.set_defaults(func=cmd_run)

    rep = sub.add_parser("report", help="aggregate a results CSV")
    rep.add_argument("results")
    rep.add_argument("--out", help="write the aggregate JSON here")
    rep.set_defaults(func=cmd_report)

    b = sub.add_parser("bounds", help="emit convergence bounds as JSON")
    b.add_argument("--problem", help=".npz from `gen` or a .mtx matrix")
    b.add_argument("--m", type=int)
    b.add_argument("--n", type=int)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--normalize", action="store_true", help="scale rows to unit norm first")
    b.add_argument("--sketch", choices=("Q", "G", "CS"), default="Q")
    b.add_argument("--d", type=int)
    b.add_argument("--d-mult", type=int, default=10)
    b.add_argument("--tau", type=int)
    b.add_argument("--block-mode", choices=("fresh", "partition"), default="fresh")
    b.add_argument("--epsilon", type=float, help="default: empirical distortion")
    b.add_argument("--probes", type=int, default=2000)
    b.add_argument("--delta", type=float, help="also report C*n^2/(delta*eps^2)")
    b.add_argument("--d-constant", type=float, default=1.0)
    b.add_argument("--out")
    b.set_defaults(func=cmd_bounds)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
