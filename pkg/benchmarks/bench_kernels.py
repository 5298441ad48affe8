"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py --m 5000 --n 50 --d-mult 10 --repeat 5

Each row is the best of ``--repeat`` runs of one full ``solve`` (or one
sketch application) on the same problem and seed, so both backends do
identical work. Iteration counts are printed as a cross-check.
"""

import argparse
import sys
from time import perf_counter

from kaczsketch import _backend, bench
from kaczsketch.sketch import apply_count_sketch, build_classic_count_sketch, build_count_sketch
from kaczsketch.solvers import solve


def best_of(repeat, fn):
    best, out = float("inf"), None
    for _ in range(repeat):
        t0 = perf_counter()
        out = fn()
        best = min(best, perf_counter() - t0)
    return best, out


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--m", type=int, default=5000)
    p.add_argument("--n", type=int, default=50)
    p.add_argument("--d-mult", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--methods", default="MWRK," + ",".join(bench.TAGS))
    args = p.parse_args(argv)

    backends = sorted(_backend.BACKENDS)
    if "cython" not in backends:
        print("compiled kernels are not built; only the python backend is available",
              file=sys.stderr)
    A, xstar, b = bench.generate_problem(args.m, args.n, args.seed)
    d = args.d_mult * args.n
    spec = bench.ExperimentSpec(args.m, args.n, [args.d_mult], methods=args.methods.split(","),
                                trials=1, base_seed=args.seed)

    print(f"{args.m}x{args.n}, d={d}, tau={bench.tau_for(d)}, best of {args.repeat}")
    header = f"{'kernel':<16}{'iters':>8}" + "".join(f"{name + ' [ms]':>16}" for name in backends)
    if len(backends) == 2:
        header += f"{'speedup':>10}"
    print(header)

    def row(label, iters, times):
        line = f"{label:<16}{iters:>8}" + "".join(f"{times[k] * 1e3:>16.3f}" for k in backends)
        if len(backends) == 2:
            line += f"{times['python'] / times['cython']:>9.1f}x"
        print(line)

    for label, build in (("sketch G", build_count_sketch), ("sketch CS", build_classic_count_sketch)):
        S = build(args.m, d, args.seed)
        times = {k: best_of(args.repeat, lambda: apply_count_sketch(S, A, b, backend=k))[0]
                 for k in backends}
        row(label, "-", times)

    for tag in spec.methods:
        cfg = spec.config(tag, d, 0)
        times, iters = {}, set()
        for k in backends:
            times[k], tr = best_of(args.repeat, lambda: solve(A, b, cfg, xstar=xstar, backend=k))
            iters.add(tr.iterations)
        row(tag, "/".join(map(str, sorted(iters))), times)


if __name__ == "__main__":
    main()
