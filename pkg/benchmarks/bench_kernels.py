"""Time the lookahead kernels, numba against numpy.

    python benchmarks/bench_kernels.py [--sizes 8 10 12 14] [--repeat 3]
"""

import argparse
import time

import numpy as np

from stackgrasp import kernels
from stackgrasp._accel import HAVE_NUMBA


def random_problem(n, rng):
    m = n + 4
    raw = rng.dirichlet(np.ones(5) * 0.3, size=(n, m))
    P_nc, P_oc, P_np = raw[..., 2], raw[..., 0], raw[..., 3]
    # chain of stable pairs and a few weak edges
    closure = [(1 << k) | ((1 << (k + 1)) if k % 2 == 0 and k + 1 < n else 0) for k in range(n)]
    desc = list(closure)
    ochild = [0] * n
    succ = rng.uniform(0.3, 1.0, n)
    is_target = np.zeros(n, dtype=bool)
    is_target[: max(1, n // 3)] = True
    order = list(np.flatnonzero(is_target)) + list(np.flatnonzero(~is_target))
    tmask = int(sum(1 << k for k in np.flatnonzero(is_target)))
    groups = [1 << int(k) for k in np.flatnonzero(is_target)]
    scope = [(1 << n) - 1] * len(groups)
    return (P_nc, P_oc, P_np), (closure, desc, ochild, succ, order, is_target, tmask, groups, scope)


def run(n, use_numba, rng, repeat):
    (P_nc, P_oc, P_np), (closure, desc, ochild, succ, order, is_target, tmask, groups, scope) = random_problem(n, rng)
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        er = kernels.reward_table(n, P_nc, P_oc, P_np, -10, 5, -10, -2, use_numba=use_numba)
        kernels.solve_values(n, 2 * n, er, closure, desc, ochild, succ, 0.8, order, is_target,
                             tmask, groups, scope, use_numba=use_numba)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--sizes", type=int, nargs="+", default=[6, 8, 10, 12, 14])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    if HAVE_NUMBA:
        run(4, True, rng, 1)  # compile outside the timings
    print(f"{'n':>3} {'numpy [s]':>10} {'numba [s]':>10} {'speedup':>8}")
    for n in args.sizes:
        t_np = run(n, False, rng, args.repeat)
        t_nb = run(n, True, rng, args.repeat) if HAVE_NUMBA else float("nan")
        print(f"{n:>3} {t_np:>10.4f} {t_nb:>10.4f} {t_np / t_nb:>8.1f}")


if __name__ == "__main__":
    main()
