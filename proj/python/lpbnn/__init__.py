"""Desk-scale latent-posterior BNN laboratory (python surface)."""

from lpbnn._core import (
    __version__,
    accuracy,
    aupr,
    auroc,
    be_forward,
    diversity_stats,
    ece,
    ensemble_predict,
    fpr_at_95_tpr,
    generate_dataset,
    implicit_covariance_matrix,
    kl_diag_gaussian_std,
    lpbnn_layer_forward,
    materialize_member_weight,
    predictive_entropy,
    rank_approx_error,
    run,
    run_experiment,
    singular_values,
)

__all__ = [
    "__version__",
    "accuracy",
    "aupr",
    "auroc",
    "be_forward",
    "diversity_stats",
    "ece",
    "ensemble_predict",
    "fpr_at_95_tpr",
    "generate_dataset",
    "implicit_covariance_matrix",
    "kl_diag_gaussian_std",
    "lpbnn_layer_forward",
    "materialize_member_weight",
    "predictive_entropy",
    "rank_approx_error",
    "run",
    "run_experiment",
    "singular_values",
]
