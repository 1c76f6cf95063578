"""scikit-learn style front ends.

``TildeTransformer`` turns a log into per-user tilde vectors and
``ABTestInterval`` fits a confidence interval on a log, so both can be used
with ``get_params`` / ``set_params`` / ``clone`` like any other estimator.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .aggregate import aggregates_to_arrays, as_lines, ingest, summarize_tilde
from .bootstrap import BootstrapDistribution, mixed_ci, quantile_ci, run_online_bootstrap
from .clt import CiReport, Method, check_level, clt_ci
from .errors import InvalidReplicateCount, OutOfDomain, UnsupportedCombination
from .harness import naive_display_interval
from .model import DesignParams, MetricKind, tilde_array


def check_design(alpha_a, alpha_b) -> DesignParams:
    return DesignParams(float(alpha_a), float(alpha_b))


def check_lines(X) -> list:
    """Materialise and validate log lines (ObservationLines, tuples or a DataFrame)."""
    return list(as_lines(X))


class TildeTransformer(TransformerMixin, BaseEstimator):
    """Aggregate log lines by user and return the (n_users, 4) tilde matrix
    with columns (xa, ya, xb, yb)."""

    def __init__(self, alpha_a=0.5, alpha_b=0.5):
        self.alpha_a = alpha_a
        self.alpha_b = alpha_b

    def fit(self, X, y=None):
        self.design_ = check_design(self.alpha_a, self.alpha_b)
        return self

    def transform(self, X):
        check_is_fitted(self, "design_")
        aggregates = ingest(X)
        self.user_ids_ = [a.user_id for a in aggregates]
        return tilde_array(*aggregates_to_arrays(aggregates), self.design_)

    def get_feature_names_out(self, input_features=None):
        return np.array(["xa", "ya", "xb", "yb"], dtype=object)


class ABTestInterval(BaseEstimator):
    """Confidence interval for one A/B metric.

    Parameters
    ----------
    metric : {"sum-diff", "sum-ratio", "ratio-diff", "ratio-rel"}
    method : {"clt", "bootstrap", "bootstrap-clt", "naive-display"}
        ``clt`` groups the log by user and plugs moment estimates into the
        closed-form variance; the bootstrap methods read the log once.
    level : float
        Two-sided confidence level.
    n_bootstraps : int
        Replicate count M for the bootstrap methods.
    seed : int
        Seed of the keyed Poisson weights.
    n_jobs : int
        Threads over replicate blocks; results do not depend on it.

    Attributes
    ----------
    report_ : CiReport
    estimate_ : float
    interval_ : tuple of float
    n_users_ : int
    summary_ : MomentSummary (clt only)
    distribution_ : BootstrapDistribution (bootstrap methods only)
    """

    def __init__(self, metric="ratio-diff", method="bootstrap-clt", level=0.95, alpha_a=0.5,
                 alpha_b=0.5, n_bootstraps=10, seed=0, n_jobs=1):
        self.metric = metric
        self.method = method
        self.level = level
        self.alpha_a = alpha_a
        self.alpha_b = alpha_b
        self.n_bootstraps = n_bootstraps
        self.seed = seed
        self.n_jobs = n_jobs

    def _validate_params(self):
        kind = MetricKind.parse(self.metric)
        method = Method.parse(self.method)
        check_level(self.level)
        design = check_design(self.alpha_a, self.alpha_b)
        if method.uses_bootstrap and int(self.n_bootstraps) < 1:
            raise InvalidReplicateCount(f"n_bootstraps must be >= 1, got {self.n_bootstraps}")
        if method is Method.NAIVE_DISPLAY and kind is not MetricKind.RATIO_DIFF:
            raise UnsupportedCombination("naive-display only covers the CTR increment (ratio-diff)")
        if int(self.n_jobs) < 1:
            raise OutOfDomain(f"n_jobs must be >= 1, got {self.n_jobs}")
        return kind, method, design

    def fit(self, X, y=None):
        kind, method, design = self._validate_params()
        lines = check_lines(X)
        if method is Method.CLT:
            report = self._fit_clt(lines, kind, design)
        elif method is Method.NAIVE_DISPLAY:
            report = self._fit_naive(lines, kind)
        else:
            dist = self._bootstrap(lines, kind, design)
            self.distribution_ = dist
            if method is Method.BOOTSTRAP_QUANTILE:
                report = quantile_ci(dist, self.level)
            else:
                report = mixed_ci(dist.point_estimate, dist, self.level)
        self.report_ = report
        self.estimate_ = report.estimate
        self.interval_ = (report.lo, report.hi)
        self.n_users_ = report.n
        return self

    def _fit_clt(self, lines, kind, design) -> CiReport:
        groups, x, y = aggregates_to_arrays(ingest(lines))
        self.summary_ = summarize_tilde(tilde_array(groups, x, y, design))
        return clt_ci(kind, self.summary_, self.level)

    def _fit_naive(self, lines, kind) -> CiReport:
        groups, x, y = aggregates_to_arrays(ingest(lines))
        estimate, lo, hi = naive_display_interval(groups, x, y, self.level)
        return CiReport(kind, estimate, lo, hi, float(self.level), int(groups.shape[0]),
                        Method.NAIVE_DISPLAY)

    def _bootstrap(self, lines, kind, design) -> BootstrapDistribution:
        M, jobs = int(self.n_bootstraps), int(self.n_jobs)
        if jobs == 1:
            return run_online_bootstrap(lines, design, kind, M, self.seed)
        blocks = [b for b in np.array_split(np.arange(M), jobs) if b.size]
        with ThreadPoolExecutor(len(blocks)) as pool:
            parts = list(pool.map(
                lambda block: run_online_bootstrap(lines, design, kind, M, self.seed,
                                                   replicates=block), blocks))
        return BootstrapDistribution.concatenate(parts)
