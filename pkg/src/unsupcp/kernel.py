"""Separable Gaussian kernels on (instance, label) pairs.

The kernel is K((x,y),(x',y')) = exp(-||x-x'||^2 / (2 sigma^2)) * 1{y = y'},
bounded by kappa = 1. Ordering pairs as (i, y) -> i*c + (y-1) makes the full
(n*c) x (n*c) Gram matrix block-diagonal after grouping by label, and every
label block equals the single n x n calibration Gram. The context therefore
stores that one block plus the label-collapsed cross statistics against the
training sample; nothing at desk scale ever materializes the full matrix
except ``dense_K`` for small sanity checks.
"""

import math
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .errors import EmptyInputError, InterpolationError
from .quantile import conformal_quantile_weighted

BASE_BANDWIDTH_SCALES = tuple(10.0 ** (-1.0 + t / 3.0) for t in range(10))
CG_JITTER_SCALE = 1e-10
SELECTION_RIDGE = 3.0


@dataclass(frozen=True)
class KernelSpec:
    """Bandwidth of the separable Gaussian kernel. kappa = sup sqrt(K) = 1."""

    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")

    @property
    def kappa(self) -> float:
        return 1.0


def bandwidth_grid(num_features: int, scales=None) -> list[KernelSpec]:
    """Candidate bandwidths sigma0 * sqrt(d/2) over a decade-spanning grid."""
    if num_features < 1:
        raise ValueError(f"num_features must be >= 1, got {num_features}")
    scales = BASE_BANDWIDTH_SCALES if scales is None else tuple(scales)
    root = math.sqrt(num_features / 2.0)
    return [KernelSpec(sigma=s * root) for s in sorted(scales)]


def kernel_eval(x1, y1: int, x2, y2: int, spec: KernelSpec) -> float:
    """Pointwise kernel between two (instance, label) pairs."""
    if y1 != y2:
        return 0.0
    diff = np.asarray(x1, dtype=np.float64) - np.asarray(x2, dtype=np.float64)
    return float(math.exp(-float(diff @ diff) / (2.0 * spec.sigma**2)))


def _sq_dists(X1: np.ndarray, X2: np.ndarray) -> np.ndarray:
    """Pairwise squared Euclidean distances, clipped at 0."""
    n1 = np.sum(X1 * X1, axis=1)
    n2 = np.sum(X2 * X2, axis=1)
    D2 = n1[:, None] + n2[None, :] - 2.0 * (X1 @ X2.T)
    return np.maximum(D2, 0.0)


def _gram_from_sq_dists(D2: np.ndarray, sigma: float) -> np.ndarray:
    return np.exp(D2 / (-2.0 * sigma**2))


def gaussian_gram(X1: np.ndarray, X2: np.ndarray, sigma: float) -> np.ndarray:
    """Feature-space Gaussian Gram matrix between two point sets."""
    return _gram_from_sq_dists(_sq_dists(np.asarray(X1, np.float64), np.asarray(X2, np.float64)), sigma)


@dataclass(frozen=True)
class KernelContext:
    """Everything the weight solver and bound evaluators need.

    ``base_gram`` is the n x n calibration Gram K0 (each label block of the
    full pair kernel). ``cross_v``[i, y-1] collapses the cross Gram against
    training pairs with label y, so the objective's linear term v is its
    row-major flattening. ``train_self`` is the training sample's own mean
    kernel, the constant completing the squared-MMD objective.
    """

    spec: KernelSpec
    base_gram: np.ndarray
    cross_v: np.ndarray
    train_self: float
    n: int
    m: int
    c: int
    cal_instances: np.ndarray
    train_instances: np.ndarray
    train_labels: np.ndarray

    @property
    def kappa(self) -> float:
        return self.spec.kappa

    @property
    def v_flat(self) -> np.ndarray:
        return self.cross_v.ravel()

    def dense_K(self) -> np.ndarray:
        """Materialize the full (n*c) x (n*c) pair kernel. Small n only."""
        return np.kron(self.base_gram, np.eye(self.c))


def build_context(cal_instances: np.ndarray, train: Dataset, spec: KernelSpec) -> KernelContext:
    """Assemble the kernel context from calibration features and a labeled
    training sample."""
    cal_instances = np.asarray(cal_instances, dtype=np.float64)
    if cal_instances.ndim != 2 or cal_instances.shape[0] == 0:
        raise EmptyInputError("calibration instances must be a non-empty (n, d) matrix")
    if train.labels is None:
        raise ValueError("training dataset must be labeled")
    if len(train) == 0:
        raise EmptyInputError("training dataset is empty")
    if train.num_features != cal_instances.shape[1]:
        raise ValueError(
            f"feature dimension mismatch: calibration {cal_instances.shape[1]}, training {train.num_features}"
        )
    n, m, c = cal_instances.shape[0], len(train), train.num_classes
    K0 = gaussian_gram(cal_instances, cal_instances, spec.sigma)
    onehot = np.zeros((m, c))
    onehot[np.arange(m), train.labels - 1] = 1.0
    cross = gaussian_gram(cal_instances, train.instances, spec.sigma)
    V = cross @ onehot
    Kt = gaussian_gram(train.instances, train.instances, spec.sigma)
    train_self = float(np.sum((Kt @ onehot) * onehot)) / (m * m)
    return KernelContext(
        spec=spec,
        base_gram=K0,
        cross_v=V,
        train_self=train_self,
        n=n,
        m=m,
        c=c,
        cal_instances=cal_instances,
        train_instances=np.asarray(train.instances, dtype=np.float64),
        train_labels=np.asarray(train.labels, dtype=np.int64),
    )


def _as_weight_matrix(w, n: int, c: int) -> np.ndarray:
    W = np.asarray(getattr(w, "w", w), dtype=np.float64)
    if W.ndim == 1:
        if W.size != n * c:
            raise ValueError(f"weight vector length {W.size} != n*c = {n * c}")
        W = W.reshape(n, c)
    elif W.shape != (n, c):
        raise ValueError(f"weight matrix shape {W.shape} != ({n}, {c})")
    return W


def mmd_objective(w, ctx: KernelContext) -> float:
    """Root of the clamped squared MMD between the weighted calibration
    embedding and the training sample embedding."""
    W = _as_weight_matrix(w, ctx.n, ctx.c)
    quad = float(np.sum(W * (ctx.base_gram @ W)))
    cross = float(np.sum(W * ctx.cross_v))
    sq = quad / ctx.n**2 - 2.0 * cross / (ctx.n * ctx.m) + ctx.train_self
    return math.sqrt(max(sq, 0.0))


@dataclass(frozen=True)
class InterpolationResult:
    """Min-norm kernel interpolation of targets u: coefficients, squared
    RKHS norm u^T gamma, residual of the jittered solve, iteration count."""

    gamma: np.ndarray
    min_norm_sq: float
    residual: float
    iterations: int
    converged: bool


def _cg_columns(matvec, B: np.ndarray, tol: float, max_iters: int):
    """Conjugate gradients on an SPD operator, all columns of B at once.

    Converged columns freeze (their alpha and beta are forced to 0) so slow
    columns can keep iterating without disturbing finished ones.
    """
    X = np.zeros_like(B)
    R = B.copy()
    P = R.copy()
    rs = np.sum(R * R, axis=0)
    thresh = tol * np.maximum(np.sqrt(np.sum(B * B, axis=0)), 1e-300)
    active = np.sqrt(rs) > thresh
    iters = 0
    while bool(active.any()) and iters < max_iters:
        AP = matvec(P)
        pAp = np.sum(P * AP, axis=0)
        safe = np.where(pAp <= 0.0, 1.0, pAp)
        alpha = np.where(active & (pAp > 0.0), rs / safe, 0.0)
        X += alpha * P
        R -= alpha * AP
        rs_new = np.sum(R * R, axis=0)
        beta = np.where(active, rs_new / np.where(rs == 0.0, 1.0, rs), 0.0)
        P = R + beta * P
        rs = rs_new
        active = np.sqrt(rs) > thresh
        iters += 1
    return X, np.sqrt(rs), iters, not bool(active.any())


def min_norm_interpolation(K: np.ndarray, u: np.ndarray, tol: float = 1e-8, max_iters: int | None = None) -> InterpolationResult:
    """Solve (K + jitter I) gamma = u by conjugate gradients.

    The jitter is 1e-10 times the mean kernel diagonal. Non-convergence at
    the iteration cap raises InterpolationError carrying the residual; the
    reported min_norm_sq = u^T gamma is clamped at 0 (it is nonnegative in
    exact arithmetic for PSD K).
    """
    K = np.asarray(K, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise ValueError(f"K must be square, got shape {K.shape}")
    if u.shape != (K.shape[0],):
        raise ValueError(f"u length {u.shape} != {K.shape[0]}")
    t = K.shape[0]
    if t == 0:
        raise EmptyInputError("empty system")
    jitter = CG_JITTER_SCALE * float(np.mean(np.diag(K)))
    if max_iters is None:
        max_iters = 10 * t + 100
    X, res, iters, converged = _cg_columns(lambda P: K @ P + jitter * P, u[:, None], tol, max_iters)
    gamma = X[:, 0]
    residual = float(res[0])
    if not converged:
        raise InterpolationError(f"CG did not converge in {max_iters} iterations", residual=residual)
    return InterpolationResult(
        gamma=gamma,
        min_norm_sq=max(float(u @ gamma), 0.0),
        residual=residual,
        iterations=iters,
        converged=converged,
    )


def _blocked_interpolation(K0: np.ndarray, U: np.ndarray, tol: float, max_iters: int, ridge: float = 0.0):
    """Fit all label columns of U against the shared base Gram.

    The pair kernel is block diagonal with identical blocks, so K gamma = u
    splits into c independent systems K0 gamma_y = u_y solved together.
    ``ridge`` adds to the numerical jitter; zero asks for plain interpolation,
    a positive value solves the penalized system (K0 + ridge I) gamma = u
    whose statistic u^T gamma equals min_f ||f||^2 + ||f(Z) - u||^2 / ridge.
    Returns (Gamma, statistic u^T gamma, max column residual, iterations,
    converged).
    """
    shift = CG_JITTER_SCALE * float(np.mean(np.diag(K0))) + ridge
    Gam, res, iters, converged = _cg_columns(lambda P: K0 @ P + shift * P, U, tol, max_iters)
    return Gam, float(np.sum(U * Gam)), float(res.max()), iters, converged


def select_kernel(candidates, cal_instances, score_matrix, naive_weights, alpha: float,
                  ridge: float = SELECTION_RIDGE):
    """Pick the bandwidth whose kernel fits the naive coverage indicator
    with the smallest penalized squared RKHS norm.

    The indicator u marks pairs at or below the naive weighted threshold.
    Each candidate is scored by u^T gamma with (K + ridge I) gamma = u, the
    value of min_f ||f||^2 + ||f(Z) - u||^2 / ridge. The ridge matters: u
    carries score randomization, so exact interpolants of it have norms that
    grow without bound as the kernel smooths, and the raw interpolation
    statistic would always hand the argmin to the spikiest candidate. The
    penalized statistic trades fit against norm instead, so rough kernels pay
    for their large norms and overly smooth ones pay for their residuals.

    Candidates whose solve fails to converge are skipped; equal statistics
    break toward the smaller sigma. Returns (KernelSpec, diagnostics dict).
    """
    candidates = sorted(candidates, key=lambda s: s.sigma)
    if not candidates:
        raise EmptyInputError("no kernel candidates")
    if ridge < 0:
        raise ValueError(f"ridge must be nonnegative, got {ridge}")
    cal_instances = np.asarray(cal_instances, dtype=np.float64)
    W = _as_weight_matrix(naive_weights, score_matrix.n, score_matrix.c)
    q0 = conformal_quantile_weighted(score_matrix.values, W, alpha)
    U = (score_matrix.values <= q0).astype(np.float64)
    D2 = _sq_dists(cal_instances, cal_instances)
    stats = np.full(len(candidates), np.nan)
    residuals = np.full(len(candidates), np.nan)
    iteration_counts = np.zeros(len(candidates), dtype=np.int64)
    for j, spec in enumerate(candidates):
        K0 = _gram_from_sq_dists(D2, spec.sigma)
        Gam, stat, res, iters, converged = _blocked_interpolation(
            K0, U, tol=1e-8, max_iters=1500, ridge=ridge)
        iteration_counts[j] = iters
        residuals[j] = res
        if converged:
            stats[j] = stat
    if np.isnan(stats).all():
        raise InterpolationError("all kernel candidates failed to interpolate", residual=float(np.nanmin(residuals)))
    best = int(np.nanargmin(stats))
    diagnostics = {
        "q_hat0": q0,
        "ridge": ridge,
        "sigmas": np.array([s.sigma for s in candidates]),
        "statistics": stats,
        "residuals": residuals,
        "iterations": iteration_counts,
        "selected_index": best,
    }
    return candidates[best], diagnostics


def rkhs_probe(w, ctx: KernelContext, coeff_cal: np.ndarray, coeff_train: np.ndarray) -> float:
    """Evaluate one normalized RKHS probe against the embedding difference.

    The probe is f = sum of kernel sections at the calibration pairs (one
    coefficient per (instance, label)) and at the training pairs. Its value
    is |weighted calibration mean of f - training mean of f| / ||f||, zero
    when f vanishes. Kernel values are recomputed from raw instances, so the
    route shares nothing with ``mmd_objective`` beyond the kernel itself.
    """
    W = _as_weight_matrix(w, ctx.n, ctx.c)
    Gcal = np.asarray(coeff_cal, dtype=np.float64)
    gtr = np.asarray(coeff_train, dtype=np.float64)
    if Gcal.shape != (ctx.n, ctx.c) or gtr.shape != (ctx.m,):
        raise ValueError("probe coefficient shapes must be (n, c) and (m,)")
    sigma = ctx.spec.sigma
    Kcc = gaussian_gram(ctx.cal_instances, ctx.cal_instances, sigma)
    Kct = gaussian_gram(ctx.cal_instances, ctx.train_instances, sigma)
    Ktt = gaussian_gram(ctx.train_instances, ctx.train_instances, sigma)
    onehot = np.zeros((ctx.m, ctx.c))
    onehot[np.arange(ctx.m), ctx.train_labels - 1] = 1.0
    scaled = gtr[:, None] * onehot
    F_cal = Kcc @ Gcal + Kct @ scaled
    rows = np.arange(ctx.m)
    F_tr = (Kct.T @ Gcal)[rows, ctx.train_labels - 1] + (Ktt @ scaled)[rows, ctx.train_labels - 1]
    norm_sq = float(np.sum(Gcal * F_cal) + gtr @ F_tr)
    if norm_sq <= 0.0:
        return 0.0
    numer = float(np.sum(W * F_cal) / ctx.n - np.sum(F_tr) / ctx.m)
    return abs(numer) / math.sqrt(norm_sq)


def witness_probe(w, ctx: KernelContext) -> float:
    """Probe at the exact dual witness (the normalized embedding difference);
    equals the MMD objective up to roundoff."""
    W = _as_weight_matrix(w, ctx.n, ctx.c)
    return rkhs_probe(w, ctx, W / ctx.n, np.full(ctx.m, -1.0 / ctx.m))


def dual_witness_check(w, ctx: KernelContext, probe_count: int = 16, seed: int = 0) -> dict:
    """Random unit-norm RKHS probes; each lower-bounds the MMD objective.

    Returns the objective, the best random probe value, and all probe
    values. Cauchy-Schwarz makes objective >= every probe, with equality
    approached only by probes aligned with the witness.
    """
    if probe_count < 1:
        raise ValueError("probe_count must be >= 1")
    rng = np.random.default_rng(seed)
    probes = np.empty(probe_count)
    for k in range(probe_count):
        probes[k] = rkhs_probe(w, ctx, rng.standard_normal((ctx.n, ctx.c)), rng.standard_normal(ctx.m))
    return {
        "objective": mmd_objective(w, ctx),
        "best_probe": float(probes.max()),
        "probes": probes,
    }
