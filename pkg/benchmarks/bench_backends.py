"""Compare the numpy and numba backends on the solver hot loops.

Times the row-wise simplex projection and the projected-gradient QP loop at a
few representative problem sizes and prints a table with speedups. Run as

    python3 benchmarks/bench_backends.py
"""

import time

import numpy as np

from unsupcp._accel import HAS_NUMBA, get_impls

PROJECTION_SHAPES = ((500, 3), (2000, 10), (10000, 10))
QP_SHAPES = ((200, 3), (1000, 5), (2000, 10))
QP_ITERS = 300
REPEATS = 3


def _best_of(fn, repeats=REPEATS):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def _qp_inputs(n, c, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, 2))
    d2 = np.sum((X[:, None, :] - X[None, :, :]) ** 2, axis=-1)
    K0 = np.exp(-d2 / 2.0)
    G = rng.standard_normal((n, c))
    W0 = np.full((n, c), 1.0 / c)
    lip = 2.0 / n * float(K0.sum(axis=1).max())
    return K0, G, W0, lip


def bench_projection(rows):
    for n, c in PROJECTION_SHAPES:
        rng = np.random.default_rng(1)
        V = np.ascontiguousarray(rng.uniform(-3.0, 3.0, (n, c)))
        t_np = _best_of(lambda: get_impls("numpy")[0](V))
        t_nb = _best_of(lambda: get_impls("numba")[0](V))
        rows.append((f"projection {n}x{c}", t_np, t_nb))


def bench_qp(rows):
    for n, c in QP_SHAPES:
        K0, G, W0, lip = _qp_inputs(n, c)
        # rel_tol 0 pins both backends to the same iteration count
        args = (K0, G, W0, lip, QP_ITERS, 0.0)
        out_np = get_impls("numpy")[1](*args)
        out_nb = get_impls("numba")[1](*args)
        drift = abs(out_np[2] - out_nb[2])
        t_np = _best_of(lambda: get_impls("numpy")[1](*args))
        t_nb = _best_of(lambda: get_impls("numba")[1](*args))
        rows.append((f"qp {QP_ITERS} iters {n}x{c} (|df|={drift:.1e})", t_np, t_nb))


def main():
    if not HAS_NUMBA:
        print("numba is not importable; nothing to compare")
        return
    # trigger jit compilation outside the timed region
    get_impls("numba")[0](np.full((2, 2), 0.5))
    get_impls("numba")[1](*_qp_inputs(8, 2), 5, 0.0)

    rows = []
    bench_projection(rows)
    bench_qp(rows)

    width = max(len(r[0]) for r in rows)
    print(f"{'case':<{width}}  {'numpy':>10}  {'numba':>10}  {'speedup':>8}")
    for name, t_np, t_nb in rows:
        print(f"{name:<{width}}  {t_np * 1e3:>8.2f}ms  {t_nb * 1e3:>8.2f}ms  {t_np / t_nb:>7.2f}x")


if __name__ == "__main__":
    main()
