"""Label-weight QP over a product of per-instance simplices.

Minimizes Phi(w) = (1/n) w^T K w - (2/m) v^T w subject to each calibration
instance's label weights lying on the simplex and an optional scalar loss
constraint B w <= b. The quadratic couples instances only through the shared
base Gram, so iterations run on (n, c) matrices with one GEMM each.

The inequality is enforced by bisection on a multiplier lambda >= 0 whose
term lambda * B joins the gradient; the bisection stops when the slack
b - B w lands in [-1e-8 b, 0] (active within tolerance) or lambda = 0 is
already feasible.
"""

from dataclasses import dataclass

import numpy as np

from ._accel import _resolve, get_impls
from .classifier import ProbModel, predict_labels, predict_proba_matrix
from .errors import InfeasibleConstraintError
from .kernel import KernelContext, _as_weight_matrix

BLOCK_SUM_TOL = 1e-9
SLACK_REL_TOL = 1e-8


@dataclass(frozen=True)
class LabelWeights:
    """Per-instance label distributions, flattened pair-major.

    ``w[i*c + (y-1)]`` is instance i's weight on label y. Every block is a
    point of the probability simplex (checked at construction).
    """

    w: np.ndarray
    n: int
    c: int

    def __post_init__(self):
        w = np.asarray(self.w, dtype=np.float64)
        if w.shape != (self.n * self.c,):
            raise ValueError(f"w length {w.shape} != n*c = {self.n * self.c}")
        if w.min() < 0:
            raise ValueError("weights must be nonnegative")
        sums = w.reshape(self.n, self.c).sum(axis=1)
        worst = float(np.abs(sums - 1.0).max())
        if worst > BLOCK_SUM_TOL:
            raise ValueError(f"block sums deviate from 1 by {worst:.2e}")
        w = w.copy()
        w.flags.writeable = False
        object.__setattr__(self, "w", w)

    @property
    def matrix(self) -> np.ndarray:
        return self.w.reshape(self.n, self.c)


def supervised_weights(labels: np.ndarray, num_classes: int) -> LabelWeights:
    """One-hot weights at the true labels (the supervised reduction)."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.ndim != 1 or labels.size == 0:
        raise ValueError("labels must be a non-empty vector")
    if labels.min() < 1 or labels.max() > num_classes:
        raise ValueError(f"labels must lie in 1..{num_classes}")
    W = np.zeros((labels.size, num_classes))
    W[np.arange(labels.size), labels - 1] = 1.0
    return LabelWeights(w=W.ravel(), n=labels.size, c=num_classes)


def naive_weights(model: ProbModel, instances: np.ndarray) -> LabelWeights:
    """One-hot weights at the classifier's argmax predictions."""
    preds = predict_labels(model, instances)
    return supervised_weights(preds, model.num_classes)


def project_simplex_block(block: np.ndarray) -> np.ndarray:
    """Euclidean projection of one coefficient block onto the simplex."""
    block = np.asarray(block, dtype=np.float64)
    if block.ndim != 1 or block.size == 0:
        raise ValueError(f"block must be a non-empty vector, got shape {block.shape}")
    if not np.isfinite(block).all():
        raise ValueError("block must be finite")
    proj = get_impls()[0]
    return proj(np.ascontiguousarray(block[None, :]))[0]


@dataclass(frozen=True)
class ConstraintSet:
    """Loss constraint B w <= b with per-pair losses laid out like weights."""

    loss_matrix: np.ndarray
    bound: float

    def __post_init__(self):
        B = np.asarray(self.loss_matrix, dtype=np.float64)
        if B.ndim != 2:
            raise ValueError(f"loss_matrix must be (n, c), got shape {B.shape}")
        if not np.isfinite(B).all() or B.min() < 0:
            raise ValueError("losses must be finite and nonnegative")
        if not self.bound > 0:
            raise ValueError(f"bound must be positive, got {self.bound}")
        B = B.copy()
        B.flags.writeable = False
        object.__setattr__(self, "loss_matrix", B)

    @property
    def flat(self) -> np.ndarray:
        return self.loss_matrix.ravel()


def build_loss_constraints(model: ProbModel, instances: np.ndarray, loss_bound_value: float) -> ConstraintSet:
    """Per-pair cross-entropy losses with right-hand side n * loss bound."""
    P = predict_proba_matrix(model, instances)
    return ConstraintSet(loss_matrix=-np.log(P), bound=instances.shape[0] * loss_bound_value)


@dataclass(frozen=True)
class SolverOptions:
    max_iters: int = 20000
    rel_tol: float = 1e-7
    backend: str | None = None


@dataclass(frozen=True)
class SolverReport:
    """Diagnostics of one solve.

    ``objective_value`` is the un-rooted quadratic form Phi(w); the history
    (one value per accepted iterate of the final inner solve) is monotone
    non-increasing. ``inequality_slack`` is b - B w, +inf when unconstrained;
    it never drops below -1e-8 b.
    """

    objective_value: float
    iterations: int
    final_rel_change: float
    inequality_slack: float
    dual_lambda: float
    converged: bool
    backend: str
    objective_history: np.ndarray


def _phi(K0: np.ndarray, V: np.ndarray, W: np.ndarray, n: int, m: int) -> float:
    return float(np.sum(W * (K0 @ W)) / n - 2.0 * np.sum(V * W) / m)


def solve_label_weights(
    ctx: KernelContext,
    constraints: ConstraintSet | None = None,
    options: SolverOptions | None = None,
    init: LabelWeights | None = None,
):
    """Solve the weight QP. Returns (LabelWeights, SolverReport).

    ``init`` seeds the iteration (the pipeline passes the naive weights);
    None starts from uniform blocks. Raises InfeasibleConstraintError when
    even the per-block loss-minimizing vertices violate the bound.
    """
    options = options or SolverOptions()
    n, m, c = ctx.n, ctx.m, ctx.c
    K0 = ctx.base_gram
    V = ctx.cross_v
    fista = get_impls(options.backend)[1]
    backend_name = _resolve(options.backend)
    lip = max(2.0 / n * float(K0.sum(axis=1).max()), 1e-12)
    W0 = np.full((n, c), 1.0 / c) if init is None else _as_weight_matrix(init, n, c).copy()
    G_base = (2.0 / m) * V

    B = None
    b = np.inf
    if constraints is not None:
        B = constraints.loss_matrix
        if B.shape != (n, c):
            raise ValueError(f"loss_matrix shape {B.shape} != ({n}, {c})")
        b = constraints.bound
        if float(B.min(axis=1).sum()) > b * (1.0 + SLACK_REL_TOL):
            raise InfeasibleConstraintError(
                f"loss constraint unsatisfiable: even the minimum-loss vertex costs {B.min(axis=1).sum():.6g} > {b:.6g}"
            )

    total_iters = 0

    def run(lam, W_init):
        nonlocal total_iters
        G = G_base if lam == 0.0 else G_base - lam * B
        out = fista(
            np.ascontiguousarray(K0),
            np.ascontiguousarray(G),
            np.ascontiguousarray(W_init),
            lip,
            options.max_iters,
            options.rel_tol,
        )
        total_iters += out[3]
        return out

    W, KW, _, _, rel, converged, hist = run(0.0, W0)
    lam = 0.0
    slack = np.inf if B is None else b - float(np.sum(B * W))

    if B is not None and slack < -SLACK_REL_TOL * b:
        slack_tol = SLACK_REL_TOL * b
        lam_lo = 0.0
        lam_hi = 1.0
        best = None
        for _ in range(200):
            W, KW, _, _, rel, converged, hist = run(lam_hi, W)
            slack = b - float(np.sum(B * W))
            if slack >= -slack_tol:
                best = (W, KW, rel, converged, hist, lam_hi, slack)
                break
            lam_lo = lam_hi
            lam_hi *= 2.0
        if best is None:
            raise InfeasibleConstraintError("bisection failed to bracket a feasible multiplier")
        if not (-slack_tol <= best[6] <= 0.0):
            for _ in range(100):
                mid = 0.5 * (lam_lo + lam_hi)
                W_mid, KW_mid, _, _, rel_mid, conv_mid, hist_mid = run(mid, best[0])
                s_mid = b - float(np.sum(B * W_mid))
                if -slack_tol <= s_mid <= 0.0:
                    best = (W_mid, KW_mid, rel_mid, conv_mid, hist_mid, mid, s_mid)
                    break
                if s_mid > 0.0:
                    lam_hi = mid
                    best = (W_mid, KW_mid, rel_mid, conv_mid, hist_mid, mid, s_mid)
                else:
                    lam_lo = mid
                if lam_hi - lam_lo <= 1e-12 * max(1.0, lam_hi):
                    break
        W, KW, rel, converged, hist, lam, slack = best

    # flat blocks (gradient constant within the block) are optimum-indifferent;
    # resolve them to uniform when that keeps the constraint satisfied
    G_lin = G_base if lam == 0.0 else G_base - lam * B
    grad = (2.0 / n) * KW - G_lin
    flat = (grad.max(axis=1) - grad.min(axis=1)) == 0.0
    if bool(flat.any()):
        W_alt = W.copy()
        W_alt[flat] = 1.0 / c
        alt_slack = np.inf if B is None else b - float(np.sum(B * W_alt))
        if B is None or alt_slack >= -SLACK_REL_TOL * b:
            W = W_alt
            slack = alt_slack

    weights = LabelWeights(w=W.ravel(), n=n, c=c)
    report = SolverReport(
        objective_value=_phi(K0, V, W, n, m),
        iterations=total_iters,
        final_rel_change=float(rel),
        inequality_slack=float(slack),
        dual_lambda=float(lam),
        converged=bool(converged),
        backend=backend_name,
        objective_history=hist,
    )
    return weights, report
