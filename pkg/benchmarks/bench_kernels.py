"""Compare the compiled and pure-Python kernel backends.

Usage: python benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import math
import time

import numpy as np

from wanda import kernels
from wanda.numerics import column_norms
from wanda.prune_core import score_sparsegpt, score_wanda


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def kernel_cases(rng):
    for rows, cols in [(64, 64), (1024, 1024), (4096, 4096)]:
        scores = rng.random((rows, cols))
        yield f"prune_lowest {rows}x{cols}", "prune_lowest", (scores, cols // 2)
    for n in (12, 16, 20):
        x = rng.standard_normal((64, n))
        w = rng.standard_normal(n)
        yield f"subset_sq_errors n={n} k={n // 2} ({math.comb(n, n // 2)} subsets)", "subset_sq_errors", (
            x.T @ x, w, n // 2)


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=3)
    args = p.parse_args(argv)
    rng = np.random.default_rng(0)
    backends = kernels.available_backends()
    if "compiled" not in backends:
        print("compiled kernels not built; only the python backend is timed")
    print(f"{'case':<52}" + "".join(f"{b:>12}" for b in backends) + ("     speedup" if len(backends) > 1 else ""))
    for label, name, call_args in kernel_cases(rng):
        ts = [best_of(lambda b=b: getattr(kernels, name)(*call_args, backend=b), args.repeat) for b in backends]
        outs = [getattr(kernels, name)(*call_args, backend=b) for b in backends]
        assert all(np.array_equal(outs[0], o) if o.dtype == bool else np.allclose(outs[0], o) for o in outs)
        line = f"{label:<52}" + "".join(f"{t:>11.4f}s" for t in ts)
        if len(ts) > 1:
            line += f"{ts[1] / ts[0]:>11.1f}x"
        print(line)

    w = rng.standard_normal((2048, 2048))
    x = rng.standard_normal((4096, 2048))
    t_w = best_of(lambda: score_wanda(w, column_norms(x)), args.repeat)
    t_s = best_of(lambda: score_sparsegpt(w, x), args.repeat)
    print(f"\nscoring 2048x2048 with 4096 tokens: wanda {t_w:.3f}s, sparsegpt {t_s:.3f}s ({t_s / t_w:.1f}x)")


if __name__ == "__main__":
    main()
