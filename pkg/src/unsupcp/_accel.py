"""Backend kernels for the weight solver.

Two implementations of the hot loops live here: a vectorized numpy path and a
numba-jitted path with explicit loops. `UNSUPCP_BACKEND` picks one at import
time (``auto`` prefers numba when importable); both are always reachable via
``get_impls`` so tests and benchmarks can compare them directly.
"""

import math
import os
import warnings

import numpy as np

HAS_NUMBA = True
try:
    from numba import njit
except ImportError:
    HAS_NUMBA = False


def _project_rows_numpy(V):
    """Project each row of V onto the probability simplex (sort-threshold)."""
    n, c = V.shape
    U = -np.sort(-V, axis=1)
    css = np.cumsum(U, axis=1) - 1.0
    ks = np.arange(1, c + 1, dtype=np.float64)
    cond = U * ks > css
    # cond holds on a prefix; rho = length of that prefix (>= 1 always)
    not_cond = ~cond
    rho = np.where(not_cond.any(axis=1), not_cond.argmax(axis=1), c)
    theta = css[np.arange(n), rho - 1] / rho
    return np.maximum(V - theta[:, None], 0.0)


def _project_rows_rowwise(V):
    """Row-loop variant of the simplex projection, numba-compilable."""
    n, c = V.shape
    out = np.empty_like(V)
    for i in range(n):
        row = np.sort(V[i])
        cum = 0.0
        theta = 0.0
        for j in range(c):
            val = row[c - 1 - j]
            cum += val
            kk = j + 1.0
            if val * kk > cum - 1.0:
                theta = (cum - 1.0) / kk
            else:
                break
        for j in range(c):
            x = V[i, j] - theta
            out[i, j] = x if x > 0.0 else 0.0
    return out


def _fista_numpy(K0, G, W0, lip, max_iters, rel_tol):
    """Accelerated projected gradient on h(W) = (1/n)<W, K0 W> - <G, W>.

    Feasible set is the product of per-row simplices. Momentum restarts on a
    function increase by redoing the step as plain projected gradient from the
    previous iterate, which the descent lemma makes non-increasing, so the
    recorded objective history is monotone. K0 @ y is recovered from cached
    K0 @ x by linearity; normal iterations cost a single GEMM.
    """
    n = K0.shape[0]
    inv_n = 1.0 / n
    step = 1.0 / lip
    X = _project_rows_numpy(W0)
    KX = K0 @ X
    f = inv_n * np.sum(KX * X) - np.sum(G * X)
    hist = np.empty(max_iters + 1)
    hist[0] = f
    Xp = X
    KXp = KX
    t = 1.0
    rel = math.inf
    iters = 0
    converged = False
    for k in range(1, max_iters + 1):
        t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        beta = (t - 1.0) / t_next
        Y = X + beta * (X - Xp)
        KY = (1.0 + beta) * KX - beta * KXp
        grad = (2.0 * inv_n) * KY - G
        Z = _project_rows_numpy(Y - step * grad)
        KZ = K0 @ Z
        fz = inv_n * np.sum(KZ * Z) - np.sum(G * Z)
        if fz > f:
            grad = (2.0 * inv_n) * KX - G
            Z = _project_rows_numpy(X - step * grad)
            KZ = K0 @ Z
            fz = inv_n * np.sum(KZ * Z) - np.sum(G * Z)
            t_next = 1.0
        rel = abs(f - fz) / max(1.0, abs(fz))
        Xp = X
        KXp = KX
        X = Z
        KX = KZ
        f = fz
        t = t_next
        hist[k] = f
        iters = k
        if rel < rel_tol:
            converged = True
            break
    return X, KX, f, iters, rel, converged, hist[: iters + 1]


def _fista_loops(K0, G, W0, lip, max_iters, rel_tol):
    # same algorithm as _fista_numpy, written loop-wise for numba
    n = K0.shape[0]
    c = W0.shape[1]
    inv_n = 1.0 / n
    step = 1.0 / lip
    X = _proj(W0)
    KX = np.dot(K0, X)
    f = 0.0
    for i in range(n):
        for j in range(c):
            f += inv_n * KX[i, j] * X[i, j] - G[i, j] * X[i, j]
    hist = np.empty(max_iters + 1)
    hist[0] = f
    Xp = X.copy()
    KXp = KX.copy()
    t = 1.0
    rel = np.inf
    iters = 0
    converged = False
    scratch = np.empty((n, c))
    for k in range(1, max_iters + 1):
        t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        beta = (t - 1.0) / t_next
        for i in range(n):
            for j in range(c):
                y = X[i, j] + beta * (X[i, j] - Xp[i, j])
                ky = (1.0 + beta) * KX[i, j] - beta * KXp[i, j]
                scratch[i, j] = y - step * (2.0 * inv_n * ky - G[i, j])
        Z = _proj(scratch)
        KZ = np.dot(K0, Z)
        fz = 0.0
        for i in range(n):
            for j in range(c):
                fz += inv_n * KZ[i, j] * Z[i, j] - G[i, j] * Z[i, j]
        if fz > f:
            for i in range(n):
                for j in range(c):
                    scratch[i, j] = X[i, j] - step * (2.0 * inv_n * KX[i, j] - G[i, j])
            Z = _proj(scratch)
            KZ = np.dot(K0, Z)
            fz = 0.0
            for i in range(n):
                for j in range(c):
                    fz += inv_n * KZ[i, j] * Z[i, j] - G[i, j] * Z[i, j]
            t_next = 1.0
        rel = abs(f - fz) / max(1.0, abs(fz))
        Xp = X
        KXp = KX
        X = Z
        KX = KZ
        f = fz
        t = t_next
        hist[k] = f
        iters = k
        if rel < rel_tol:
            converged = True
            break
    return X, KX, f, iters, rel, converged, hist[: iters + 1]


if HAS_NUMBA:
    _proj = njit(cache=True)(_project_rows_rowwise)
    _fista_numba = njit(cache=True)(_fista_loops)
else:
    _proj = _project_rows_rowwise
    _fista_numba = None


def _resolve(requested: str | None) -> str:
    name = requested or os.environ.get("UNSUPCP_BACKEND", "auto").lower()
    if name == "auto":
        return "numba" if HAS_NUMBA else "numpy"
    if name == "numba" and not HAS_NUMBA:
        warnings.warn("numba not importable, falling back to numpy backend")
        return "numpy"
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    return name


_ACTIVE = _resolve(None)


def active_backend() -> str:
    return _ACTIVE


def get_impls(backend: str | None = None):
    """Return (project_rows, fista_qp) callables for a backend name."""
    name = _resolve(backend)
    if name == "numba":
        return _proj, _fista_numba
    return _project_rows_numpy, _fista_numpy


def project_rows(V: np.ndarray) -> np.ndarray:
    return get_impls(_ACTIVE)[0](np.ascontiguousarray(V, dtype=np.float64))


def fista_qp(K0, G, W0, lip, max_iters, rel_tol):
    """Run the projected-gradient QP loop on the active backend.

    Returns (W, K0 @ W, objective, iterations, last relative change,
    converged flag, objective history).
    """
    impl = get_impls(_ACTIVE)[1]
    return impl(
        np.ascontiguousarray(K0, dtype=np.float64),
        np.ascontiguousarray(G, dtype=np.float64),
        np.ascontiguousarray(W0, dtype=np.float64),
        float(lip),
        int(max_iters),
        float(rel_tol),
    )
