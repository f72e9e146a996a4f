"""Regularization by projection for statistical inverse learning on a finite cosine truncation."""

from projlearn.analysis import assemble_b_nu, certify_classes, cross_term, lambda_profile
from projlearn.estimator import (
    EstimateReport,
    EstimatorConfig,
    ProjectedLeastSquares,
    choose_m,
    choose_R,
    ml_estimate,
    truncate,
)
from projlearn.minimax import build_function_packing, build_sign_packing, fano_threshold, kl_divergence
from projlearn.problem import (
    DesignMeasure,
    ForwardOperator,
    GroundTruth,
    ProblemSpec,
    SubspaceFamily,
    make_ground_truth,
    source_check,
)
from projlearn.sampling import Dataset, SeedPlan, synthesize

__all__ = [
    "Dataset", "DesignMeasure", "EstimateReport", "EstimatorConfig", "ForwardOperator", "GroundTruth",
    "ProblemSpec", "ProjectedLeastSquares", "SeedPlan", "SubspaceFamily", "assemble_b_nu",
    "build_function_packing", "build_sign_packing", "certify_classes", "choose_R", "choose_m", "cross_term",
    "fano_threshold", "kl_divergence", "lambda_profile", "make_ground_truth", "ml_estimate", "source_check",
    "synthesize", "truncate",
]
