"""Budgeted benchmark evaluation with adaptive querying and valid coverage.

Fit a logistic factor model on historical model-question outcomes, pick
questions for a new model under a fixed budget with a hybrid sampling
policy, and report an unbiased accuracy estimate with a Wald confidence
interval whose coverage holds regardless of model fidelity.
"""

from .backend import BACKEND
from .belief import GaussianBelief, PredictionVector, laplace_update, predict
from .estimators import (
    EstimateReport,
    QueryTrace,
    aipw_stream_run,
    ess,
    pai_estimate,
    pai_run,
    pai_variance,
    traditional_ai_run,
    wald_ci,
)
from .factors import FactorSet, FitConfig, cross_validate, empirical_prior, fit
from .history import (
    DifficultyVector,
    OutcomeMatrix,
    difficulty_means,
    induce_missingness,
    load_matrix,
    save_matrix,
    split_rows,
)
from .policies import (
    PolicyConfig,
    SamplingDistribution,
    active_learning_score,
    hybrid_policy,
    oracle_score,
    schedule,
    stream_label_probs,
)

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "DifficultyVector",
    "EstimateReport",
    "FactorSet",
    "FitConfig",
    "GaussianBelief",
    "OutcomeMatrix",
    "PolicyConfig",
    "PredictionVector",
    "QueryTrace",
    "SamplingDistribution",
    "active_learning_score",
    "aipw_stream_run",
    "cross_validate",
    "difficulty_means",
    "empirical_prior",
    "ess",
    "fit",
    "hybrid_policy",
    "induce_missingness",
    "laplace_update",
    "load_matrix",
    "oracle_score",
    "pai_estimate",
    "pai_run",
    "pai_variance",
    "predict",
    "save_matrix",
    "schedule",
    "split_rows",
    "stream_label_probs",
    "traditional_ai_run",
    "wald_ci",
]
