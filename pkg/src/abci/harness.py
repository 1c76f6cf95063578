"""Blank A/B tests: synthetic populations, salted splits and coverage scoring.

In a blank test both populations receive the same system, so the true
increment is known (0 for differences, 1 for ratios) and the fraction of
intervals containing it measures calibration.
"""
from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import stats

from .aggregate import ingest, summarize_tilde
from .bootstrap import BootstrapDistribution, OnlineBootstrap, mixed_ci, quantile_ci
from .clt import Method, check_level, clt_ci, normal_multiplier
from .errors import InsufficientReplicates, OutOfDomain, UnsupportedCombination
from .model import DesignParams, Group, MetricKind, tilde_array
from .rng import STREAM_SPLIT, derive_seed, mix, to_unit, user_key, user_keys

DEFAULT_LEVELS = (0.5, 0.8, 0.9, 0.95, 0.99)
DEFAULT_TESTS = 500


# -- populations --------------------------------------------------------------

@dataclass(frozen=True)
class Law:
    """Per-user count distribution. ``name`` is one of poisson, zip, geometric, constant."""

    name: str
    mean: float
    zero_prob: float = 0.0

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.name == "poisson":
            return rng.poisson(self.mean, size).astype(np.float64)
        if self.name == "zip":
            # zero-inflated Poisson; ``mean`` is the rate of the Poisson part
            draws = rng.poisson(self.mean, size).astype(np.float64)
            draws[rng.random(size) < self.zero_prob] = 0.0
            return draws
        if self.name == "geometric":
            # support {1, 2, ...}
            return rng.geometric(1.0 / self.mean, size).astype(np.float64)
        if self.name == "constant":
            return np.full(size, float(self.mean))
        raise OutOfDomain(f"unknown law {self.name!r}")


@dataclass(frozen=True)
class SyntheticPopulationSpec:
    """Synthetic click log with per-user overdispersion.

    With ``corr="thinning"`` each user draws a click propensity from
    Beta(ctr * concentration, (1 - ctr) * concentration), i.e. a heterogeneity
    multiplier of mean 1 around ``ctr``, and clicks ~ Binomial(displays,
    propensity). ``concentration=None`` removes the heterogeneity. With
    ``corr="independent"`` clicks follow ``law_x`` independently of displays.
    """

    n_users: int = 50_000
    law_y: Law = Law("geometric", 4.3)
    law_x: Law | None = None
    ctr: float = 0.044
    concentration: float | None = 3.8
    corr: str = "thinning"

    def generate(self, seed: int) -> "Population":
        rng = np.random.default_rng(seed)
        y = self.law_y.sample(rng, self.n_users)
        if self.corr == "thinning":
            if self.concentration is None:
                p = np.full(self.n_users, self.ctr)
            else:
                p = rng.beta(self.ctr * self.concentration,
                             (1.0 - self.ctr) * self.concentration, self.n_users)
            x = rng.binomial(y.astype(np.int64), p).astype(np.float64)
        elif self.corr == "independent":
            if self.law_x is None:
                raise OutOfDomain("corr='independent' needs law_x")
            x = self.law_x.sample(rng, self.n_users)
        else:
            raise OutOfDomain(f"unknown correlation mechanism {self.corr!r}")
        return Population(np.arange(self.n_users), x, y)


@dataclass
class Population:
    """Fixed per-user metric values reused by every blank test."""

    user_ids: np.ndarray
    x: np.ndarray
    y: np.ndarray
    _keys: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)

    @property
    def keys(self) -> np.ndarray:
        # hashing every id is the slow part of building a population, so do it on first use
        if self._keys is None:
            self._keys = user_keys(self.user_ids)
        return self._keys

    @property
    def n_users(self) -> int:
        return int(self.x.shape[0])

    @classmethod
    def from_lines(cls, lines: Iterable) -> "Population":
        """Aggregate a log by user; any group column is ignored (tests re-split)."""
        aggs = ingest(lines)
        ids = np.array([a.user_id for a in aggs], dtype=object)
        return cls(ids, [a.x_sum for a in aggs], [a.y_sum for a in aggs])


# -- splitting and baselines --------------------------------------------------

def _check_alpha(alpha_a: float) -> None:
    if not 0.0 < alpha_a < 1.0:
        raise OutOfDomain(f"alpha_a must lie in (0, 1), got {alpha_a}")


def assign_groups(keys, seed: int, alpha_a: float, alpha_b: float) -> np.ndarray:
    """Salted-hash assignment of pre-hashed user keys to A, B or neither (Group codes)."""
    u = to_unit(mix(STREAM_SPLIT, seed, np.asarray(keys, dtype=np.uint64)))
    return np.select([u < alpha_a, u < alpha_a + alpha_b],
                     [np.int8(Group.A), np.int8(Group.B)], np.int8(Group.UNASSIGNED)).astype(np.int8)


def split_keys(keys, test_seed: int, alpha_a: float) -> np.ndarray:
    """Vectorised ``blank_split`` over pre-hashed user keys; returns Group codes."""
    _check_alpha(alpha_a)
    return assign_groups(keys, test_seed, alpha_a, 1.0 - alpha_a)


def blank_split(user_id, test_seed: int, alpha_a: float) -> Group:
    """Salted-hash assignment: A with probability ``alpha_a``, else B."""
    _check_alpha(alpha_a)
    u = float(to_unit(mix(STREAM_SPLIT, test_seed, user_key(user_id))))
    return Group.A if u < alpha_a else Group.B


def naive_display_variance(ctr_a: float, d_a: float, ctr_b: float, d_b: float) -> float:
    """Variance of CTR_B - CTR_A when every display is an independent Bernoulli trial."""
    for name, ctr in (("ctr_a", ctr_a), ("ctr_b", ctr_b)):
        if not 0.0 <= ctr <= 1.0:
            raise OutOfDomain(f"{name} must lie in [0, 1], got {ctr}")
    for name, d in (("d_a", d_a), ("d_b", d_b)):
        if not d > 0:
            raise OutOfDomain(f"{name} must be positive, got {d}")
    return ctr_a * (1.0 - ctr_a) / d_a + ctr_b * (1.0 - ctr_b) / d_b


def naive_display_interval(groups, x, y, level: float):
    """(estimate, lo, hi) of the CTR increment under display independence."""
    groups = np.asarray(groups)
    in_a, in_b = groups == Group.A, groups == Group.B
    d_a, d_b = float(y[in_a].sum()), float(y[in_b].sum())
    ctr_a, ctr_b = float(x[in_a].sum()) / d_a, float(x[in_b].sum()) / d_b
    half = normal_multiplier(level) * math.sqrt(naive_display_variance(ctr_a, d_a, ctr_b, d_b))
    estimate = ctr_b - ctr_a
    return estimate, estimate - half, estimate + half


def click_total_distribution(population: Population, M: int, seed: int) -> BootstrapDistribution:
    """Bootstrap distribution of the total click count of ``population``.

    Each replicate reports n * (weighted clicks / weighted users), the click
    total of a resampled population of the original size.
    """
    boot = OnlineBootstrap(M, seed)
    contrib = np.zeros((population.n_users, 4))
    contrib[:, 2] = population.x
    boot.update_arrays(population.keys, contrib, np.ones(population.n_users, dtype=bool))
    sizes = boot.sizes
    totals = np.where(sizes > 0, population.n_users * boot.sums[:, 2] / np.maximum(sizes, 1), np.nan)
    return BootstrapDistribution(totals, sizes, MetricKind.SUM_DIFF, seed, population.n_users,
                                 boot.sums, float(population.x.sum()))


def empirical_vs_binomial_sd(total_click_distribution: BootstrapDistribution, n_displays: float,
                             ctr: float) -> tuple[float, float]:
    if not n_displays > 0:
        raise OutOfDomain(f"n_displays must be positive, got {n_displays}")
    if not 0.0 <= ctr <= 1.0:
        raise OutOfDomain(f"ctr must lie in [0, 1], got {ctr}")
    values = total_click_distribution.valid_estimates
    if values.size < 2:
        raise InsufficientReplicates("need at least 2 valid replicates")
    return float(np.std(values, ddof=1)), math.sqrt(n_displays * ctr * (1.0 - ctr))


# -- coverage -----------------------------------------------------------------

@dataclass
class BlankCase:
    """One blank test: the split and everything an interval method may need."""

    index: int
    population: Population
    groups: np.ndarray
    design: DesignParams
    kind: MetricKind
    bootstrap_seed: int
    M: int | None

    @property
    def tildes(self) -> np.ndarray:
        return tilde_array(self.groups, self.population.x, self.population.y, self.design)


IntervalFn = Callable[[BlankCase, Sequence[float]], list]


def _clt_intervals(case: BlankCase, levels):
    summary = summarize_tilde(case.tildes)
    return [clt_ci(case.kind, summary, q) for q in levels]


def _bootstrap(case: BlankCase) -> BootstrapDistribution:
    if not case.M:
        raise InsufficientReplicates("bootstrap methods need a replicate count M")
    pop = case.population
    boot = OnlineBootstrap(case.M, case.bootstrap_seed)
    boot.update_arrays(pop.keys, case.tildes, np.ones(pop.n_users, dtype=bool))
    return boot.distribution(case.kind, n_users=pop.n_users)


def _quantile_intervals(case: BlankCase, levels):
    dist = _bootstrap(case)
    return [quantile_ci(dist, q) for q in levels]


def _mixed_intervals(case: BlankCase, levels):
    dist = _bootstrap(case)
    return [mixed_ci(dist.point_estimate, dist, q) for q in levels]


def _naive_intervals(case: BlankCase, levels):
    pop = case.population
    return [naive_display_interval(case.groups, pop.x, pop.y, q)[1:] for q in levels]


_METHODS: dict[Method, IntervalFn] = {
    Method.CLT: _clt_intervals,
    Method.BOOTSTRAP_QUANTILE: _quantile_intervals,
    Method.BOOTSTRAP_CLT: _mixed_intervals,
    Method.NAIVE_DISPLAY: _naive_intervals,
}


def _bounds(interval) -> tuple[float, float]:
    if hasattr(interval, "lo"):
        return interval.lo, interval.hi
    lo, hi = interval
    return lo, hi


@dataclass
class CoverageResult:
    levels: list
    observed: list
    num_tests: int
    method: str
    hits: list = field(default_factory=list)

    def band(self, level: float, confidence: float = 0.99) -> tuple[float, float]:
        return binomial_band(level, self.num_tests, confidence)

    def in_band(self, level: float, confidence: float = 0.99) -> bool:
        lo, hi = self.band(level, confidence)
        return lo <= self.observed[self.levels.index(level)] <= hi

    def coverage(self, level: float) -> float:
        return self.observed[self.levels.index(level)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(("level", "observed", "num_tests", "method"))
        for level, obs in zip(self.levels, self.observed):
            writer.writerow((repr(float(level)), repr(float(obs)), self.num_tests, self.method))
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {"levels": [float(v) for v in self.levels],
                "observed": [float(v) for v in self.observed],
                "num_tests": self.num_tests, "method": self.method,
                "hits": [int(h) for h in self.hits]}


def binomial_band(level: float, num_tests: int, confidence: float = 0.99) -> tuple[float, float]:
    """Central ``confidence`` band of the coverage fraction of an exactly calibrated method."""
    tail = (1.0 - confidence) / 2.0
    lo = stats.binom.ppf(tail, num_tests, level)
    hi = stats.binom.ppf(1.0 - tail, num_tests, level)
    return float(lo) / num_tests, float(hi) / num_tests


def _run_tests(population, method, kind, levels, indices, seed, M, design):
    interval_fn = _METHODS[method] if isinstance(method, Method) else method
    truth = kind.blank_truth
    hits = np.zeros(len(levels), dtype=np.int64)
    for t in indices:
        groups = split_keys(population.keys, derive_seed(seed, t, 0), design.alpha_a)
        case = BlankCase(t, population, groups, design, kind, derive_seed(seed, t, 1), M)
        for j, interval in enumerate(interval_fn(case, levels)):
            lo, hi = _bounds(interval)
            hits[j] += lo <= truth <= hi
    return hits


def run_coverage(source, method, kind, levels: Sequence[float] = DEFAULT_LEVELS,
                 num_tests: int = DEFAULT_TESTS, seed: int = 0, M: int | None = None,
                 alpha_a: float = 0.5, workers: int = 1) -> CoverageResult:
    """Score ``num_tests`` blank tests over one fixed population.

    ``source`` is a Population, a SyntheticPopulationSpec (generated with
    ``seed``) or an iterable of log lines. ``method`` is a Method or a callable
    ``(BlankCase, levels) -> intervals``; intervals are CiReports or (lo, hi).
    """
    kind = MetricKind.parse(kind)
    if not callable(method):
        method = Method.parse(method)
    if method is Method.NAIVE_DISPLAY and kind is not MetricKind.RATIO_DIFF:
        raise UnsupportedCombination("naive-display only covers the CTR increment (ratio-diff)")
    if num_tests < 1:
        raise OutOfDomain(f"num_tests must be >= 1, got {num_tests}")
    levels = [check_level(q) for q in levels]
    _check_alpha(alpha_a)
    design = DesignParams(alpha_a, 1.0 - alpha_a)
    if isinstance(source, SyntheticPopulationSpec):
        population = source.generate(seed)
    elif isinstance(source, Population):
        population = source
    else:
        population = Population.from_lines(source)

    population.keys  # hash once here rather than in every worker
    if workers > 1 and isinstance(method, Method):
        blocks = [range(start, num_tests, workers) for start in range(workers)]
        with ProcessPoolExecutor(workers) as pool:
            parts = pool.map(_run_tests, *zip(*[
                (population, method, kind, levels, block, seed, M, design) for block in blocks]))
            hits = sum(parts)
    else:
        hits = _run_tests(population, method, kind, levels, range(num_tests), seed, M, design)
    label = method.label if isinstance(method, Method) else getattr(method, "__name__", "custom")
    return CoverageResult(list(levels), [int(h) / num_tests for h in hits], num_tests, label,
                          [int(h) for h in hits])
