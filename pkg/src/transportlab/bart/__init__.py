"""Bayesian additive regression trees with per-row likelihood weights."""

from .io import dumps, load, loads, save
from .predict import PredictiveSummary, interval_ranks, predict_posterior, summarize_draws
from .priors import (
    BartConfig,
    calibrate_sigma_prior,
    lambda_from_variance,
    leaf_log_marginal,
    leaf_posterior,
    sample_sigma,
    sigma_posterior_params,
    split_prob,
    tree_log_prior,
)
from .sampler import BartFitError, BartPosterior, fit
from .tree import Ensemble, Tree

__all__ = [
    "BartConfig",
    "BartFitError",
    "BartPosterior",
    "Ensemble",
    "PredictiveSummary",
    "Tree",
    "calibrate_sigma_prior",
    "dumps",
    "fit",
    "interval_ranks",
    "lambda_from_variance",
    "leaf_log_marginal",
    "leaf_posterior",
    "load",
    "loads",
    "predict_posterior",
    "sample_sigma",
    "save",
    "sigma_posterior_params",
    "split_prob",
    "summarize_draws",
    "tree_log_prior",
]
