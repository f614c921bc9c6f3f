"""Monte Carlo harness: seeded trials, method pipelines, result emission.

A trial draws (or partitions) data, fits the classifier on the training
split minus a held-out validation slice, scores calibration and test
instances, then runs each requested method:

- supervised: threshold from true-label calibration scores,
- naive: threshold with one-hot weights at the classifier's predictions,
- unsupervised: bandwidth selection, kernel context against m training
  samples redrawn from the classifier's own training data, the constrained
  weight QP, then the weighted threshold. Calibration labels stay hidden
  from this path; the evaluator reads them only for diagnostics.

(config, seed) fixes every emitted number except wall-clock columns.
"""

import csv
import json
import math
import os
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _accel
from .bounds import BoundInputs, coverage_diagnostic_E, excess_gap_kernel
from .classifier import estimate_loss_bound, predict_labels, train_logistic
from .data import Dataset, SplitSpec, SyntheticConfig, generate_synthetic, load_csv_dataset, split_dataset
from .errors import EmptyInputError
from .kernel import SELECTION_RIDGE, _blocked_interpolation, bandwidth_grid, build_context, mmd_objective, select_kernel
from .quantile import conformal_quantile_supervised, conformal_quantile_weighted, evaluate, prediction_mask
from .scores import SCORE_KINDS, build_score_matrix
from .solver import SolverOptions, build_loss_constraints, naive_weights, solve_label_weights

METHODS = ("supervised", "unsupervised", "naive")
VALIDATION_FRACTION = 0.2
WORKERS_ENV = "UNSUPCP_WORKERS"


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a run needs; serializable to/from JSON.

    ``dataset`` is either {"type": "synthetic", "class_means": [[...]],
    "cov_scale": s, "priors": [...]} or {"type": "csv", "path": "..."}.
    ``cal_sizes`` sweeps the calibration size n; ``m`` is the number of
    training samples redrawn for the kernel context (None means m = n).
    """

    dataset: dict
    train_size: int
    cal_sizes: tuple
    test_size: int
    alpha: float
    trials: int
    seed: int
    score: str = "adaptive"
    methods: tuple = METHODS
    m: int | None = None
    bandwidth_scales: tuple | None = None
    selection_ridge: float = SELECTION_RIDGE
    noise_epsilon: float | None = None
    l2: float = 1e-3
    classifier_max_iters: int = 500
    solver_max_iters: int = 20000
    solver_rel_tol: float = 1e-7
    delta: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "cal_sizes", tuple(int(v) for v in self.cal_sizes))
        object.__setattr__(self, "methods", tuple(self.methods))
        if self.bandwidth_scales is not None:
            object.__setattr__(self, "bandwidth_scales", tuple(float(v) for v in self.bandwidth_scales))
        if not isinstance(self.dataset, dict) or self.dataset.get("type") not in ("synthetic", "csv"):
            raise ValueError("dataset must be a dict with type 'synthetic' or 'csv'")
        if not self.cal_sizes or min(self.cal_sizes) < 1:
            raise ValueError("cal_sizes must be non-empty positive ints")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must be in (0, 1), got {self.alpha}")
        if self.score not in SCORE_KINDS:
            raise ValueError(f"score must be one of {SCORE_KINDS}")
        unknown = set(self.methods) - set(METHODS)
        if not self.methods or unknown:
            raise ValueError(f"methods must be a non-empty subset of {METHODS}, got {self.methods}")
        if self.test_size < 1 or self.train_size < 2:
            raise ValueError("test_size must be >= 1 and train_size >= 2")
        if self.selection_ridge < 0:
            raise ValueError(f"selection_ridge must be nonnegative, got {self.selection_ridge}")
        fit_size = self.train_size - _val_count(self.train_size)
        if "unsupervised" in self.methods:
            for n in self.cal_sizes:
                m = self.m if self.m is not None else n
                if m > fit_size:
                    raise ValueError(
                        f"m = {m} exceeds the {fit_size} training samples left after the validation holdout"
                    )

    @staticmethod
    def from_dict(d: dict) -> "ExperimentConfig":
        known = {f for f in ExperimentConfig.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown config keys: {sorted(extra)}")
        d = dict(d)
        for key in ("cal_sizes", "methods", "bandwidth_scales"):
            if key in d and d[key] is not None:
                d[key] = tuple(d[key])
        return ExperimentConfig(**d)

    @staticmethod
    def from_json(path: str) -> "ExperimentConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return ExperimentConfig.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["cal_sizes"] = list(self.cal_sizes)
        d["methods"] = list(self.methods)
        if self.bandwidth_scales is not None:
            d["bandwidth_scales"] = list(self.bandwidth_scales)
        return d


def _val_count(train_size: int) -> int:
    return max(1, int(round(VALIDATION_FRACTION * train_size)))


@dataclass(frozen=True)
class MethodResult:
    method: str
    coverage: float
    mean_size: float
    q_hat: float
    wall_seconds: float
    sigma: float | None = None
    mmd: float | None = None
    solver_objective: float | None = None
    solver_iterations: int | None = None
    solver_slack: float | None = None
    solver_converged: bool | None = None
    e_diag: float | None = None
    kernel_bound: float | None = None


@dataclass(frozen=True)
class TrialRecord:
    cal_size: int
    trial_index: int
    classifier_error: float
    loss_bound: float
    results: tuple = field(default_factory=tuple)

    def rows(self) -> list[dict]:
        out = []
        for r in self.results:
            row = {
                "cal_size": self.cal_size,
                "trial": self.trial_index,
                "method": r.method,
                "coverage": r.coverage,
                "mean_size": r.mean_size,
                "q_hat": r.q_hat,
                "sigma": r.sigma,
                "mmd": r.mmd,
                "solver_objective": r.solver_objective,
                "solver_iterations": r.solver_iterations,
                "solver_slack": r.solver_slack,
                "solver_converged": r.solver_converged,
                "e_diag": r.e_diag,
                "kernel_bound": r.kernel_bound,
                "classifier_error": self.classifier_error,
                "loss_bound": self.loss_bound,
                "wall_seconds": r.wall_seconds,
            }
            out.append(row)
        return out


TRIAL_COLUMNS = (
    "cal_size",
    "trial",
    "method",
    "coverage",
    "mean_size",
    "q_hat",
    "sigma",
    "mmd",
    "solver_objective",
    "solver_iterations",
    "solver_slack",
    "solver_converged",
    "e_diag",
    "kernel_bound",
    "classifier_error",
    "loss_bound",
    "wall_seconds",
)

TIMING_COLUMNS = ("wall_seconds",)


def _trial_seeds(cfg: ExperimentConfig, cal_size: int, trial_index: int) -> np.ndarray:
    ss = np.random.SeedSequence(entropy=cfg.seed, spawn_key=(cal_size, trial_index))
    return ss.generate_state(5, dtype=np.uint64)


def _get_dataset(cfg: ExperimentConfig, total: int, data_seed: int) -> Dataset:
    spec = cfg.dataset
    if spec["type"] == "synthetic":
        syn = SyntheticConfig(
            class_means=np.asarray(spec["class_means"], dtype=np.float64),
            cov_scale=float(spec["cov_scale"]),
            priors=np.asarray(spec["priors"], dtype=np.float64),
        )
        ds, _ = generate_synthetic(syn, total, data_seed)
        return ds
    return load_csv_dataset(spec["path"], labeled=True)


def _unsupervised_qhat(cfg, model, cal, fit, cal_scores, loss_bound, mdraw_seed):
    """Bandwidth selection, context build, constrained QP, threshold."""
    n = len(cal)
    m = cfg.m if cfg.m is not None else n
    rng = np.random.default_rng(mdraw_seed)
    idx = rng.choice(len(fit), size=m, replace=False)
    train_sub = Dataset(fit.instances[idx], fit.labels[idx], fit.num_classes)
    naive_w = naive_weights(model, cal.instances)
    grid = bandwidth_grid(cal.instances.shape[1], cfg.bandwidth_scales)
    spec, sel_diag = select_kernel(grid, cal.instances, cal_scores, naive_w.matrix, cfg.alpha,
                                   ridge=cfg.selection_ridge)
    ctx = build_context(cal.instances, train_sub, spec)
    constraints = build_loss_constraints(model, cal.instances, loss_bound.value)
    opts = SolverOptions(max_iters=cfg.solver_max_iters, rel_tol=cfg.solver_rel_tol)
    weights, report = solve_label_weights(ctx, constraints, opts, init=naive_w)
    q_hat = conformal_quantile_weighted(cal_scores.values, weights.matrix, cfg.alpha)
    return q_hat, weights, report, ctx, spec, len(grid)


def _tightest_kernel_bound(ctx, u_final, cfg, grid_size: int) -> float | None:
    """Smallest coverage-gap bound over a short path of penalized fits.

    Every fit f of the final inclusion indicator certifies the bound
    approx_error(f) + 2 kappa (1 + sqrt(log(2s/delta))) sqrt(1/n + 1/m)
    ||f||, so the minimum over a few ridge values is itself certified. The
    measured ingredients are the fit's L1 error averaged per instance and
    its RKHS norm. Returns None when no fit on the path converges.
    """
    base = cfg.selection_ridge if cfg.selection_ridge > 0 else SELECTION_RIDGE
    best = None
    for ridge in (base / 10.0, base, base * 10.0):
        Gam, stat, _, _, converged = _blocked_interpolation(
            ctx.base_gram, u_final, tol=1e-8, max_iters=1500, ridge=ridge)
        if not converged:
            continue
        fitted = ctx.base_gram @ Gam
        norm_sq = max(float(np.sum(Gam * fitted)), 0.0)
        approx = float(np.abs(u_final - fitted).sum()) / ctx.n
        value = excess_gap_kernel(
            BoundInputs(
                n=ctx.n,
                m=ctx.m,
                delta=cfg.delta,
                kappa=ctx.kappa,
                rkhs_norm=math.sqrt(norm_sq),
                approx_error=approx,
                num_candidates=grid_size,
            )
        )
        if best is None or value < best:
            best = value
    return best


def run_trial(cfg: ExperimentConfig, trial_index: int, cal_size: int | None = None) -> TrialRecord:
    """One seeded trial at one calibration size. Deterministic in
    (config, seed, trial_index, cal_size)."""
    n = int(cal_size if cal_size is not None else cfg.cal_sizes[0])
    seeds = _trial_seeds(cfg, n, trial_index)
    total = cfg.train_size + n + cfg.test_size
    ds = _get_dataset(cfg, total, int(seeds[0]))
    train, cal, test = split_dataset(ds, SplitSpec(cfg.train_size, n, cfg.test_size, int(seeds[1])))
    vc = _val_count(cfg.train_size)
    fit = Dataset(train.instances[:-vc], train.labels[:-vc], train.num_classes)
    val = Dataset(train.instances[-vc:], train.labels[-vc:], train.num_classes)
    model = train_logistic(fit, l2=cfg.l2, max_iters=cfg.classifier_max_iters)
    loss_bound = estimate_loss_bound(model, val)
    classifier_error = float(np.mean(predict_labels(model, test.instances) != test.labels))
    cal_scores = build_score_matrix(model, cal.instances, cfg.score, int(seeds[2]), cfg.noise_epsilon)
    test_scores = build_score_matrix(model, test.instances, cfg.score, int(seeds[3]), 0.0)

    results = []
    for method in cfg.methods:
        t0 = time.perf_counter()
        extra = {}
        if method == "supervised":
            if cal.hidden_labels is None:
                raise ValueError("supervised method requires calibration labels")
            true_scores = cal_scores.values[np.arange(len(cal)), cal.hidden_labels - 1]
            q_hat = conformal_quantile_supervised(true_scores, cfg.alpha)
        elif method == "naive":
            w = naive_weights(model, cal.instances)
            q_hat = conformal_quantile_weighted(cal_scores.values, w.matrix, cfg.alpha)
            if cal.hidden_labels is not None:
                extra["e_diag"] = coverage_diagnostic_E(w.matrix, cal_scores.values, q_hat, cal.hidden_labels)
        else:
            q_hat, weights, report, ctx, spec, grid_size = _unsupervised_qhat(
                cfg, model, cal, fit, cal_scores, loss_bound, int(seeds[4])
            )
            extra = {
                "sigma": spec.sigma,
                "mmd": mmd_objective(weights, ctx),
                "solver_objective": report.objective_value,
                "solver_iterations": report.iterations,
                "solver_slack": report.inequality_slack,
                "solver_converged": report.converged,
            }
            u_final = (cal_scores.values <= q_hat).astype(np.float64)
            bound = _tightest_kernel_bound(ctx, u_final, cfg, grid_size)
            if bound is not None:
                extra["kernel_bound"] = bound
            if cal.hidden_labels is not None:
                extra["e_diag"] = coverage_diagnostic_E(weights.matrix, cal_scores.values, q_hat, cal.hidden_labels)
        rep = evaluate(prediction_mask(test_scores.values, q_hat), test.labels)
        results.append(
            MethodResult(
                method=method,
                coverage=rep.coverage,
                mean_size=rep.mean_size,
                q_hat=q_hat,
                wall_seconds=time.perf_counter() - t0,
                **extra,
            )
        )
    return TrialRecord(
        cal_size=n,
        trial_index=trial_index,
        classifier_error=classifier_error,
        loss_bound=loss_bound.value,
        results=tuple(results),
    )


@dataclass(frozen=True)
class ExperimentResults:
    config: ExperimentConfig
    records: tuple
    failures: tuple
    environment: dict


def _environment() -> dict:
    from . import __version__

    return {
        "python": platform.python_version(),
        "numpy": np.__version__,
        "backend": _accel.active_backend(),
        "package_version": __version__,
    }


def _trial_task(cfg: ExperimentConfig, n: int, t: int):
    try:
        return (n, t, run_trial(cfg, t, n), None)
    except Exception as exc:  # pragma: no cover - exercised via failure path test
        return (n, t, None, f"{type(exc).__name__}: {exc}")


def run_experiment(cfg: ExperimentConfig, workers: int | None = None) -> ExperimentResults:
    """Run the full (cal_size x trial) grid, optionally in worker processes.

    Trial outcomes are deterministic per (cal_size, trial) regardless of
    scheduling; records come back sorted. Per-trial exceptions become
    failure entries instead of aborting the run.
    """
    if workers is None:
        workers = int(os.environ.get(WORKERS_ENV, "1"))
    if workers < 1:
        raise ValueError(f"workers must be >= 1, got {workers}")
    grid = [(n, t) for n in cfg.cal_sizes for t in range(cfg.trials)]
    outcomes = []
    if workers == 1:
        for n, t in grid:
            outcomes.append(_trial_task(cfg, n, t))
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_trial_task, [cfg] * len(grid), [g[0] for g in grid], [g[1] for g in grid]))
    outcomes.sort(key=lambda o: (o[0], o[1]))
    records = tuple(o[2] for o in outcomes if o[2] is not None)
    failures = tuple({"cal_size": o[0], "trial": o[1], "error": o[3]} for o in outcomes if o[3] is not None)
    return ExperimentResults(config=cfg, records=records, failures=failures, environment=_environment())


def aggregate(records, alpha: float) -> list[dict]:
    """Mean and quartile summaries per (cal_size, method)."""
    rows = [row for rec in records for row in rec.rows()]
    keys = sorted({(r["cal_size"], r["method"]) for r in rows})
    out = []
    for cal_size, method in keys:
        cov = np.array([r["coverage"] for r in rows if r["cal_size"] == cal_size and r["method"] == method])
        size = np.array([r["mean_size"] for r in rows if r["cal_size"] == cal_size and r["method"] == method])
        gaps = np.abs(cov - (1.0 - alpha))
        out.append(
            {
                "cal_size": int(cal_size),
                "method": method,
                "trials": int(cov.size),
                "coverage_mean": float(np.mean(cov)),
                "coverage_q25": float(np.percentile(cov, 25)),
                "coverage_q75": float(np.percentile(cov, 75)),
                "size_mean": float(np.mean(size)),
                "size_q25": float(np.percentile(size, 25)),
                "size_q75": float(np.percentile(size, 75)),
                "mean_abs_gap": float(np.mean(gaps)),
                "gap_q25": float(np.percentile(gaps, 25)),
                "gap_q75": float(np.percentile(gaps, 75)),
            }
        )
    return out


RESULTS_SCHEMA = {
    "type": "object",
    "required": ["config", "environment", "aggregates", "failures"],
    "properties": {
        "config": {"type": "object"},
        "environment": {
            "type": "object",
            "required": ["python", "numpy", "backend", "package_version"],
            "properties": {
                "python": {"type": "string"},
                "numpy": {"type": "string"},
                "backend": {"type": "string"},
                "package_version": {"type": "string"},
            },
        },
        "aggregates": {
            "type": "array",
            "items": {
                "type": "object",
                "required": [
                    "cal_size",
                    "method",
                    "trials",
                    "coverage_mean",
                    "coverage_q25",
                    "coverage_q75",
                    "size_mean",
                    "size_q25",
                    "size_q75",
                    "mean_abs_gap",
                    "gap_q25",
                    "gap_q75",
                ],
                "properties": {
                    "cal_size": {"type": "integer"},
                    "method": {"type": "string"},
                    "trials": {"type": "integer"},
                    "coverage_mean": {"type": "number"},
                    "coverage_q25": {"type": "number"},
                    "coverage_q75": {"type": "number"},
                    "size_mean": {"type": "number"},
                    "size_q25": {"type": "number"},
                    "size_q75": {"type": "number"},
                    "mean_abs_gap": {"type": "number"},
                    "gap_q25": {"type": "number"},
                    "gap_q75": {"type": "number"},
                },
            },
        },
        "failures": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["cal_size", "trial", "error"],
            },
        },
    },
}


def _csv_cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def emit_results(results: ExperimentResults, out_dir: str, formats=("json", "csv")) -> dict:
    """Write summary.json (config, environment, aggregates, failures),
    trials.csv (one row per trial per method), and gapcurve.csv (mean
    absolute gap per calibration size). Floats in CSV use shortest
    round-trip formatting so re-parsing reproduces them bit for bit."""
    if not results.records and not results.failures:
        raise EmptyInputError("no records to emit")
    os.makedirs(out_dir, exist_ok=True)
    paths = {}
    aggs = aggregate(results.records, results.config.alpha)
    if "json" in formats:
        paths["summary"] = os.path.join(out_dir, "summary.json")
        payload = {
            "config": results.config.to_dict(),
            "environment": results.environment,
            "aggregates": aggs,
            "failures": list(results.failures),
        }
        with open(paths["summary"], "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2)
            fh.write("\n")
    if "csv" in formats:
        paths["trials"] = os.path.join(out_dir, "trials.csv")
        with open(paths["trials"], "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(TRIAL_COLUMNS)
            for rec in results.records:
                for row in rec.rows():
                    writer.writerow([_csv_cell(row[k]) for k in TRIAL_COLUMNS])
        paths["gapcurve"] = os.path.join(out_dir, "gapcurve.csv")
        with open(paths["gapcurve"], "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["cal_size", "method", "mean_abs_gap", "gap_q25", "gap_q75"])
            for a in aggs:
                writer.writerow(
                    [a["cal_size"], a["method"], repr(a["mean_abs_gap"]), repr(a["gap_q25"]), repr(a["gap_q75"])]
                )
    return paths
