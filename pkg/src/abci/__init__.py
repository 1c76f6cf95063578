"""Confidence intervals for A/B-test metrics: CLT, online Poisson bootstrap, and both combined."""

__version__ = "0.1.0"

from .aggregate import (MomentSummary, ObservationLine, UserAggregate, ingest, read_csv,
                        read_kdd_tsv, summarize, summarize_tilde)
from .bootstrap import (BootstrapDistribution, OnlineBootstrap, mixed_ci, poisson_weight,
                        quantile_ci, run_online_bootstrap)
from .clt import CiReport, Method, asymptotic_variance, clt_ci, inv_normal_cdf
from .estimator import ABTestInterval, TildeTransformer
from .harness import (CoverageResult, SyntheticPopulationSpec, blank_split,
                      empirical_vs_binomial_sd, naive_display_variance, run_coverage)
from .model import (DesignParams, Group, MeanVector, MetricKind, TildeVector, evaluate_metric,
                    nonzero, tilde)

__all__ = [
    "ABTestInterval", "BootstrapDistribution", "CiReport", "CoverageResult", "DesignParams",
    "Group", "MeanVector", "Method", "MetricKind", "MomentSummary", "ObservationLine",
    "OnlineBootstrap", "SyntheticPopulationSpec", "TildeTransformer", "TildeVector",
    "UserAggregate", "asymptotic_variance", "blank_split", "clt_ci", "empirical_vs_binomial_sd",
    "evaluate_metric", "ingest", "inv_normal_cdf", "mixed_ci", "naive_display_variance",
    "nonzero", "poisson_weight", "quantile_ci", "read_csv", "read_kdd_tsv", "run_coverage",
    "run_online_bootstrap", "summarize", "summarize_tilde", "tilde",
]
