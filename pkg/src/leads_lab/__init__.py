"""Skill discovery by maximizing a successor-state-measure diversity bound,
with exact tabular oracles for every estimator."""
from .leads import HyperParams, Leads

__all__ = ["HyperParams", "Leads"]
__version__ = "0.1.0"
