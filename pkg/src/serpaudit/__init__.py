"""Tools for auditing personalization in web search results."""

from .metrics import d_metric, edit_distance, prefix_weight, rbo_ext
from .model import BotProfile, ComparisonRecord, MetricConfig, Query, SerpRecord
from .stats import anova_oneway, bonferroni, bootstrap_ci, mann_whitney_u

__version__ = "0.1.0"

__all__ = [
    "BotProfile", "ComparisonRecord", "MetricConfig", "Query", "SerpRecord",
    "anova_oneway", "bonferroni", "bootstrap_ci", "d_metric", "edit_distance",
    "mann_whitney_u", "prefix_weight", "rbo_ext",
]
