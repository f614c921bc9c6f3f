"""Split conformal classification with unsupervised calibration.

Calibration-set labels are replaced by per-instance label weights chosen to
minimize a kernel two-sample discrepancy against a labeled training sample,
under a loss constraint. The weighted conformal quantile then thresholds
scores exactly as in the supervised procedure; one-hot weights at the true
labels recover it bit for bit.
"""

from ._accel import active_backend
from .bounds import (
    BoundInputs,
    CoverageBounds,
    coverage_diagnostic_E,
    excess_gap_general,
    excess_gap_kernel,
    objective_value_bound,
    rademacher_kernel_bound,
    supervised_coverage_bounds,
)
from .classifier import (
    LossBound,
    ProbModel,
    ce_objective_grad,
    estimate_loss_bound,
    predict_labels,
    predict_proba,
    predict_proba_matrix,
    train_logistic,
)
from .data import (
    Dataset,
    PosteriorOracle,
    SplitSpec,
    SyntheticConfig,
    generate_synthetic,
    load_csv_dataset,
    split_dataset,
)
from .harness import (
    ExperimentConfig,
    ExperimentResults,
    MethodResult,
    TrialRecord,
    aggregate,
    emit_results,
    run_experiment,
    run_trial,
)
from .kernel import (
    InterpolationResult,
    KernelContext,
    KernelSpec,
    bandwidth_grid,
    build_context,
    dual_witness_check,
    gaussian_gram,
    kernel_eval,
    min_norm_interpolation,
    mmd_objective,
    rkhs_probe,
    select_kernel,
    witness_probe,
)
from .quantile import (
    CoverageReport,
    PredictionSet,
    conformal_level,
    conformal_quantile_supervised,
    conformal_quantile_weighted,
    evaluate,
    prediction_mask,
    prediction_set,
    weighted_quantile,
)
from .scores import ScoreMatrix, aps_score, build_score_matrix, prob_score
from .solver import (
    ConstraintSet,
    LabelWeights,
    SolverOptions,
    SolverReport,
    build_loss_constraints,
    naive_weights,
    project_simplex_block,
    solve_label_weights,
    supervised_weights,
)

__version__ = "0.1.0"

__all__ = [
    "BoundInputs",
    "ConstraintSet",
    "CoverageBounds",
    "CoverageReport",
    "Dataset",
    "ExperimentConfig",
    "ExperimentResults",
    "InterpolationResult",
    "KernelContext",
    "KernelSpec",
    "LabelWeights",
    "LossBound",
    "MethodResult",
    "PosteriorOracle",
    "PredictionSet",
    "ProbModel",
    "ScoreMatrix",
    "SolverOptions",
    "SolverReport",
    "SplitSpec",
    "SyntheticConfig",
    "TrialRecord",
    "active_backend",
    "aggregate",
    "aps_score",
    "bandwidth_grid",
    "build_context",
    "build_loss_constraints",
    "build_score_matrix",
    "ce_objective_grad",
    "conformal_level",
    "conformal_quantile_supervised",
    "conformal_quantile_weighted",
    "coverage_diagnostic_E",
    "dual_witness_check",
    "emit_results",
    "estimate_loss_bound",
    "evaluate",
    "excess_gap_general",
    "excess_gap_kernel",
    "gaussian_gram",
    "generate_synthetic",
    "kernel_eval",
    "load_csv_dataset",
    "min_norm_interpolation",
    "mmd_objective",
    "naive_weights",
    "objective_value_bound",
    "prediction_mask",
    "prediction_set",
    "predict_labels",
    "predict_proba",
    "predict_proba_matrix",
    "prob_score",
    "project_simplex_block",
    "rademacher_kernel_bound",
    "rkhs_probe",
    "run_experiment",
    "run_trial",
    "select_kernel",
    "solve_label_weights",
    "split_dataset",
    "supervised_coverage_bounds",
    "supervised_weights",
    "train_logistic",
    "weighted_quantile",
    "witness_probe",
]
