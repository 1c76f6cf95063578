"""One-pass online Poisson bootstrap over ungrouped log lines.

Each user gets an integer weight per replicate, drawn from a counter-based
generator keyed by ``(seed, user, replicate)``. Lines of the same user, however
far apart in the log, therefore share a weight, and the sums never depend on
the order the log is read in.
"""
from __future__ import annotations

import json
import math
import statistics
from dataclasses import dataclass, field
from itertools import islice
from typing import Callable, Iterable, Sequence

import numpy as np

from ._kernels import accumulate_poisson
from .aggregate import as_lines
from .clt import CiReport, Method, check_level, normal_multiplier
from .errors import EmptyDistribution, InsufficientReplicates, InvalidReplicateCount
from .model import (DesignParams, MetricKind, denominator_columns, evaluate_metric,
                    evaluate_metric_array, guarded_denominators, tilde_array)
from .rng import STREAM_WEIGHT, mix, splitmix64, user_key

CHUNK_LINES = 1 << 14


def _poisson1_thresholds() -> np.ndarray:
    # P(Z <= k) for Z ~ Poisson(1), scaled to 64-bit integers; stop once the tail is below 2**-64
    cdf, pmf, k = [], math.exp(-1.0), 0
    total = 0.0
    while 1.0 - total > 2.0 ** -60 and k < 30:
        total += pmf
        cdf.append(min(total, 1.0))
        k += 1
        pmf /= k
    return np.array([min(int(c * 2.0 ** 64), 2 ** 64 - 1) for c in cdf], dtype=np.uint64)


_THRESHOLDS = _poisson1_thresholds()


def _bits_to_poisson(bits) -> np.ndarray:
    return np.searchsorted(_THRESHOLDS, bits, side="right").astype(np.int64)


def poisson_weight(seed: int, user_id, m: int) -> int:
    """Poisson(1) weight of ``user_id`` in replicate ``m``; a pure function of its arguments."""
    if m < 0:
        raise InvalidReplicateCount(f"replicate index must be >= 0, got {m}")
    bits = mix(STREAM_WEIGHT, seed, user_key(user_id), m)
    return int(_bits_to_poisson(bits))


def poisson_weights(seed: int, keys, replicates) -> np.ndarray:
    """(len(keys), len(replicates)) weight matrix for pre-hashed user keys."""
    keys = np.asarray(keys, dtype=np.uint64)
    replicates = np.asarray(replicates, dtype=np.uint64)
    per_user = splitmix64(mix(STREAM_WEIGHT, seed) ^ keys)
    return _bits_to_poisson(splitmix64(per_user[:, None] ^ replicates[None, :]))


def unit_weights(seed: int, keys, replicates) -> np.ndarray:
    """Test hook: every user weighs 1 in every replicate."""
    return np.ones((len(keys), len(replicates)), dtype=np.int64)


WeightFn = Callable[[int, np.ndarray, np.ndarray], np.ndarray]


def _weighted_column_sums(weights: np.ndarray, contrib: np.ndarray) -> np.ndarray:
    # row-by-row reduction: each replicate's sum has the same rounding whatever
    # other replicates are computed alongside it
    out = np.empty((weights.shape[1], contrib.shape[1]))
    w = weights.astype(np.float64)
    for k in range(contrib.shape[1]):
        out[:, k] = (w * contrib[:, k:k + 1]).sum(axis=0)
    return out


class OnlineBootstrap:
    """Streaming accumulator of the replicate sums.

    Feed it blocks of lines with :meth:`update`; read the replicate means with
    :meth:`distribution`. ``replicates`` selects which replicate indices this
    instance owns, so several instances can split the work and be concatenated.
    """

    def __init__(self, n_replicates: int, seed: int, replicates: Sequence[int] | None = None,
                 weight_fn: WeightFn | None = None):
        if n_replicates < 1:
            raise InvalidReplicateCount(f"need at least one replicate, got {n_replicates}")
        self.n_replicates = n_replicates
        self.seed = int(seed)
        self.replicates = np.arange(n_replicates) if replicates is None else np.asarray(replicates)
        self.weight_fn = weight_fn
        self.sums = np.zeros((len(self.replicates), 4))
        self.sizes = np.zeros(len(self.replicates), dtype=np.int64)
        self.total = np.zeros(4)
        self.seen: dict[object, int] = {}

    @property
    def n_users(self) -> int:
        return len(self.seen)

    def update_arrays(self, keys, contrib, first) -> "OnlineBootstrap":
        """Fold in pre-hashed lines: ``contrib`` is (L, 4) tilde contributions and
        ``first`` marks lines that are the first occurrence of their user."""
        contrib = np.ascontiguousarray(contrib, dtype=np.float64)
        first = np.asarray(first, dtype=bool)
        if self.weight_fn is None:
            accumulate_poisson(np.uint64(mix(STREAM_WEIGHT, self.seed)),
                               np.asarray(keys, dtype=np.uint64),
                               self.replicates.astype(np.uint64), contrib, first,
                               _THRESHOLDS, self.sums, self.sizes)
        else:
            weights = self.weight_fn(self.seed, keys, self.replicates)
            self.sums += _weighted_column_sums(weights, contrib)
            self.sizes += weights[first].sum(axis=0)
        self.total += contrib.sum(axis=0)
        return self

    def update(self, lines: Sequence, design: DesignParams) -> "OnlineBootstrap":
        keys = np.empty(len(lines), dtype=np.uint64)
        first = np.zeros(len(lines), dtype=bool)
        for i, line in enumerate(lines):
            key = self.seen.get(line.user_id)
            if key is None:
                key = self.seen[line.user_id] = user_key(line.user_id)
                first[i] = True
            keys[i] = key
        groups = np.fromiter((int(line.group) for line in lines), dtype=np.int8, count=len(lines))
        x = np.fromiter((line.x for line in lines), dtype=np.float64, count=len(lines))
        y = np.fromiter((line.y for line in lines), dtype=np.float64, count=len(lines))
        return self.update_arrays(keys, tilde_array(groups, x, y, design), first)

    def distribution(self, kind: MetricKind, n_users: int | None = None) -> "BootstrapDistribution":
        kind = MetricKind.parse(kind)
        n_users = self.n_users if n_users is None else int(n_users)
        return BootstrapDistribution.from_sums(kind, self.sums, self.sizes, self.seed, n_users,
                                               total=self.total)


@dataclass
class BootstrapDistribution:
    estimates: np.ndarray
    replicate_sizes: np.ndarray
    kind: MetricKind
    seed: int
    n_users: int
    sums: np.ndarray | None = None
    point_estimate: float | None = None
    flags: tuple = field(default=())

    def __post_init__(self):
        self.estimates = np.asarray(self.estimates, dtype=np.float64)
        self.replicate_sizes = np.asarray(self.replicate_sizes, dtype=np.int64)
        if self.estimates.shape != self.replicate_sizes.shape or self.estimates.ndim != 1:
            raise InvalidReplicateCount("estimates and replicate_sizes must be 1-d and of equal length")
        if self.estimates.size < 1:
            raise InvalidReplicateCount("a bootstrap distribution needs at least one replicate")

    @classmethod
    def from_sums(cls, kind: MetricKind, sums, sizes, seed: int, n_users: int,
                  total=None) -> "BootstrapDistribution":
        sums = np.asarray(sums, dtype=np.float64)
        sizes = np.asarray(sizes, dtype=np.int64)
        valid = sizes > 0
        for col in denominator_columns(kind):
            valid &= sums[:, col] != 0.0
        means = sums / np.where(sizes > 0, sizes, 1)[:, None]
        estimates = np.where(valid, evaluate_metric_array(kind, means), np.nan)
        point, flags = None, []
        if total is not None and n_users > 0:
            full_means = np.asarray(total, dtype=np.float64) / n_users
            point = evaluate_metric(kind, full_means)
            flags += [f"guarded_{name}" for name in guarded_denominators(kind, full_means)]
        if not valid.all():
            flags.append(f"invalid_replicates={int((~valid).sum())}")
        return cls(estimates, sizes, kind, int(seed), int(n_users), sums, point, tuple(flags))

    @property
    def valid(self) -> np.ndarray:
        return np.isfinite(self.estimates)

    @property
    def valid_estimates(self) -> np.ndarray:
        return self.estimates[self.valid]

    @property
    def n_replicates(self) -> int:
        return int(self.estimates.size)

    def to_json(self) -> str:
        return json.dumps({
            "estimates": [None if not math.isfinite(v) else float(v) for v in self.estimates],
            "replicate_sizes": [int(v) for v in self.replicate_sizes],
            "seed": self.seed,
            "kind": self.kind.value,
        })

    @classmethod
    def concatenate(cls, parts: Sequence["BootstrapDistribution"]) -> "BootstrapDistribution":
        """Join distributions computed over disjoint replicate blocks of one run."""
        first = parts[0]
        sums = None if any(p.sums is None for p in parts) else np.concatenate([p.sums for p in parts])
        flags = tuple(f for f in first.flags if not f.startswith("invalid_replicates"))
        estimates = np.concatenate([p.estimates for p in parts])
        invalid = int((~np.isfinite(estimates)).sum())
        if invalid:
            flags += (f"invalid_replicates={invalid}",)
        return cls(estimates, np.concatenate([p.replicate_sizes for p in parts]), first.kind,
                   first.seed, first.n_users, sums, first.point_estimate, flags)


def _chunks(lines: Iterable, size: int):
    it = iter(lines)
    while True:
        block = list(islice(it, size))
        if not block:
            return
        yield block


def run_online_bootstrap(lines: Iterable, design: DesignParams, kind: MetricKind, M: int,
                         seed: int, *, replicates: Sequence[int] | None = None,
                         weight_fn: WeightFn | None = None,
                         chunk_lines: int = CHUNK_LINES) -> BootstrapDistribution:
    """Single pass over ``lines``; returns the M replicate estimates.

    ``replicates`` restricts the run to a subset of replicate indices (for
    parallel blocks); ``weight_fn`` replaces the Poisson generator (test hook).
    """
    kind = MetricKind.parse(kind)
    if M < 1:
        raise InvalidReplicateCount(f"need at least one replicate, got {M}")
    boot = OnlineBootstrap(M, seed, replicates, weight_fn)
    for block in _chunks(as_lines(lines), chunk_lines):
        boot.update(block, design)
    return boot.distribution(kind)


def empirical_quantile(sorted_values: np.ndarray, p: float) -> float:
    """Linear interpolation between order statistics at 1-based position (M - 1) p + 1."""
    m = sorted_values.shape[0]
    h = (m - 1) * p + 1
    i = int(math.floor(h))
    if i >= m:
        return float(sorted_values[m - 1])
    lo, hi = float(sorted_values[i - 1]), float(sorted_values[i])
    return lo + (h - i) * (hi - lo)


def quantile_ci(dist: BootstrapDistribution, level: float = 0.95) -> CiReport:
    q = check_level(level)
    values = np.sort(dist.valid_estimates)
    if values.size == 0:
        raise EmptyDistribution("no valid bootstrap replicate")
    lo = empirical_quantile(values, (1.0 - q) / 2.0)
    hi = empirical_quantile(values, (1.0 + q) / 2.0)
    estimate = dist.point_estimate
    if estimate is None:
        estimate = empirical_quantile(values, 0.5)
    return CiReport(dist.kind, float(estimate), lo, hi, q, dist.n_users,
                    Method.BOOTSTRAP_QUANTILE, dist.n_replicates, dist.seed, tuple(dist.flags))


def mixed_ci(estimate: float, dist: BootstrapDistribution, level: float = 0.95) -> CiReport:
    """Normal interval around ``estimate`` with the bootstrap spread as standard error."""
    values = dist.valid_estimates
    if values.size < 2:
        raise InsufficientReplicates(f"need at least 2 valid replicates, got {values.size}")
    # exact summation: identical replicates give exactly zero spread
    sd = statistics.stdev(values.tolist())
    half = normal_multiplier(level) * sd
    return CiReport(dist.kind, float(estimate), estimate - half, estimate + half, float(level),
                    dist.n_users, Method.BOOTSTRAP_CLT, dist.n_replicates, dist.seed,
                    tuple(dist.flags))
