"""Time the compiled kernels against the numpy fallback.

Usage: python benchmarks/bench_kernels.py [--times 1500] [--entities 5] [--repeat 5]

Prints one row per kernel with the best-of-``repeat`` wall time for each
backend and the speed-up, plus an end-to-end program evaluation.
"""

import argparse
import time

import numpy as np

from ruc.kernels import KERNEL_NAMES, backend_module

PAIRED = {"rolling_corr", "rolling_cov", "rolling_regression"}
CROSS_SECTIONAL = {"cs_rank", "cs_zscore", "cs_demean"}


def best_time(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def call(module, name, a, b, window):
    fn = getattr(module, name)
    if name in CROSS_SECTIONAL:
        return lambda: fn(a)
    if name in PAIRED:
        return lambda: fn(a, b, window)
    return lambda: fn(a, window)


def program_timing(repeat, n_times, n_entities):
    """Whole-program evaluation under each backend, in fresh interpreters."""
    import os
    import subprocess
    import sys
    code = (
        "import time\n"
        "from ruc.evaluator import evaluate\n"
        "from ruc.grammar import Grammar, parse\n"
        "from ruc.synthetic import planted_panel\n"
        f"f = planted_panel(0, n_entities={n_entities}, n_times={n_times})\n"
        "g = Grammar.default(f.variables)\n"
        "p = parse('ts_corr(ts_rank(x,21),ts_zscore(mul(x,y),63),21)', g)\n"
        "best = 1e9\n"
        f"for _ in range({repeat}):\n"
        "    t = time.perf_counter(); evaluate(p, f); best = min(best, time.perf_counter() - t)\n"
        "print(best)\n"
    )
    out = {}
    for backend, flag in (("compiled", "0"), ("python", "1")):
        env = dict(os.environ, RUC_PURE_PYTHON=flag)
        proc = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True,
                              text=True, check=True)
        out[backend] = float(proc.stdout.strip())
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--times", type=int, default=1500)
    ap.add_argument("--entities", type=int, default=5)
    ap.add_argument("--window", type=int, default=21)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    a = rng.normal(size=(args.times, args.entities))
    b = rng.normal(size=(args.times, args.entities))
    a[rng.random(a.shape) < 0.02] = np.nan
    compiled, python = backend_module("compiled"), backend_module("python")

    print(f"panel {args.times} x {args.entities}, window {args.window}, best of {args.repeat}")
    print(f"{'kernel':<22}{'compiled ms':>13}{'python ms':>12}{'speed-up':>10}")
    for name in KERNEL_NAMES:
        tc = best_time(call(compiled, name, a, b, args.window), args.repeat)
        tp = best_time(call(python, name, a, b, args.window), args.repeat)
        print(f"{name:<22}{tc * 1e3:>13.3f}{tp * 1e3:>12.3f}{tp / tc:>9.1f}x")
    prog = program_timing(args.repeat, args.times, args.entities)
    print(f"{'program evaluation':<22}{prog['compiled'] * 1e3:>13.3f}"
          f"{prog['python'] * 1e3:>12.3f}{prog['python'] / prog['compiled']:>9.1f}x")


if __name__ == "__main__":
    main()
