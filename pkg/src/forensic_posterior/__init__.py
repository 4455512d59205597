"""Bayesian same-source inference over relevant sub-populations."""

from .inference import (
    DEFAULT_THETA,
    CaseResult,
    PriorConfig,
    Verdict,
    category_lr,
    category_posterior,
    combine_odds_additive,
    combine_odds_exact,
    conditional_h1_posterior,
    decide,
    odds_against_to_prob,
    posterior_factorized,
    posterior_general,
    prob_to_odds_against,
    same_source_odds_lr,
    sensitivity_sweep,
)
from .model import (
    CategoryCatalog,
    CategoryModel,
    Evidence,
    different_source_log_likelihood,
    marginal_log_likelihood,
    same_source_log_likelihood,
)

__all__ = [
    "DEFAULT_THETA",
    "CaseResult",
    "CategoryCatalog",
    "CategoryModel",
    "Evidence",
    "PriorConfig",
    "Verdict",
    "category_lr",
    "category_posterior",
    "combine_odds_additive",
    "combine_odds_exact",
    "conditional_h1_posterior",
    "decide",
    "different_source_log_likelihood",
    "marginal_log_likelihood",
    "odds_against_to_prob",
    "posterior_factorized",
    "posterior_general",
    "prob_to_odds_against",
    "same_source_log_likelihood",
    "same_source_odds_lr",
    "sensitivity_sweep",
]
