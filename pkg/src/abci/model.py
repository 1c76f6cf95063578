"""Vocabulary of the A/B model: design, metric kinds, tilde transform and metric functionals.

A user is in population A with probability ``alpha_a``, in B with probability
``alpha_b`` and in neither otherwise. Every per-user metric is rescaled by its
population ratio and set to zero outside the population ("tilde" values), so
that all four population averages are plain means over *all* users.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import OutOfDomain


class Group(enum.IntEnum):
    UNASSIGNED = 0
    A = 1
    B = 2

    @property
    def token(self) -> str:
        return {Group.UNASSIGNED: "-", Group.A: "A", Group.B: "B"}[self]

    @classmethod
    def parse(cls, value) -> "Group":
        if isinstance(value, Group):
            return value
        if isinstance(value, (int, np.integer)):
            return cls(int(value))
        token = str(value).strip()
        try:
            return _GROUP_TOKENS[token]
        except KeyError:
            raise OutOfDomain(f"unknown group {value!r}; expected one of A, B, -") from None


_GROUP_TOKENS = {"A": Group.A, "a": Group.A, "B": Group.B, "b": Group.B,
                 "-": Group.UNASSIGNED, "": Group.UNASSIGNED}


class MetricKind(enum.Enum):
    """The four estimators: x'-x, x'/x, x'/y'-x/y and (x'/y')/(x/y)."""

    SUM_DIFF = "sum-diff"
    SUM_RATIO = "sum-ratio"
    RATIO_DIFF = "ratio-diff"
    RATIO_OF_RATIOS = "ratio-rel"

    @property
    def label(self) -> str:
        return _KIND_LABELS[self]

    @property
    def is_relative(self) -> bool:
        """True when the blank-test truth is 1 rather than 0."""
        return self in (MetricKind.SUM_RATIO, MetricKind.RATIO_OF_RATIOS)

    @property
    def blank_truth(self) -> float:
        return 1.0 if self.is_relative else 0.0

    @classmethod
    def parse(cls, value) -> "MetricKind":
        if isinstance(value, MetricKind):
            return value
        token = str(value).strip()
        for kind in cls:
            if token in (kind.value, kind.label, kind.name):
                return kind
        valid = ", ".join(k.value for k in cls)
        raise OutOfDomain(f"unknown metric kind {value!r}; valid kinds: {valid}")


_KIND_LABELS = {
    MetricKind.SUM_DIFF: "SumDiff",
    MetricKind.SUM_RATIO: "SumRatio",
    MetricKind.RATIO_DIFF: "RatioDiff",
    MetricKind.RATIO_OF_RATIOS: "RatioOfRatios",
}


@dataclass(frozen=True)
class DesignParams:
    alpha_a: float = 0.5
    alpha_b: float = 0.5

    def __post_init__(self):
        for name in ("alpha_a", "alpha_b"):
            value = getattr(self, name)
            if not 0.0 < value <= 1.0:
                raise OutOfDomain(f"{name} must lie in (0, 1], got {value}")
        if self.alpha_a + self.alpha_b > 1.0 + 1e-12:
            raise OutOfDomain(
                f"alpha_a + alpha_b must not exceed 1, got {self.alpha_a + self.alpha_b}")


class TildeVector(NamedTuple):
    xa: float
    ya: float
    xb: float
    yb: float


class MeanVector(NamedTuple):
    mxa: float
    mya: float
    mxb: float
    myb: float

    def swapped(self) -> "MeanVector":
        return MeanVector(self.mxb, self.myb, self.mxa, self.mya)


def nonzero(x: float) -> float:
    """Map 0 to 1 and leave every other value untouched."""
    return 1.0 if x == 0 else x


def nonzero_array(x):
    x = np.asarray(x, dtype=np.float64)
    return np.where(x == 0.0, 1.0, x)


def tilde(user, design: DesignParams) -> TildeVector:
    """Tilde transform of one aggregated user (anything with ``group``, ``x_sum``, ``y_sum``)."""
    group = Group.parse(user.group)
    x, y = float(user.x_sum), float(user.y_sum)
    if group is Group.A:
        return TildeVector(x / design.alpha_a, y / design.alpha_a, 0.0, 0.0)
    if group is Group.B:
        return TildeVector(0.0, 0.0, x / design.alpha_b, y / design.alpha_b)
    return TildeVector(0.0, 0.0, 0.0, 0.0)


def tilde_array(groups, x, y, design: DesignParams) -> np.ndarray:
    """Vectorised tilde transform; ``groups`` holds ``Group`` codes. Returns an (n, 4) array."""
    groups = np.asarray(groups)
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    in_a = groups == Group.A
    in_b = groups == Group.B
    out = np.zeros((x.shape[0], 4), dtype=np.float64)
    out[in_a, 0] = x[in_a] / design.alpha_a
    out[in_a, 1] = y[in_a] / design.alpha_a
    out[in_b, 2] = x[in_b] / design.alpha_b
    out[in_b, 3] = y[in_b] / design.alpha_b
    return out


def evaluate_metric(kind: MetricKind, means) -> float:
    mxa, mya, mxb, myb = (float(v) for v in means)
    if kind is MetricKind.SUM_DIFF:
        return mxb - mxa
    if kind is MetricKind.SUM_RATIO:
        return mxb / nonzero(mxa)
    if kind is MetricKind.RATIO_DIFF:
        return mxb / nonzero(myb) - mxa / nonzero(mya)
    if kind is MetricKind.RATIO_OF_RATIOS:
        return (mxb / nonzero(myb)) / nonzero(mxa / nonzero(mya))
    raise OutOfDomain(f"unknown metric kind {kind!r}")


def evaluate_metric_array(kind: MetricKind, means) -> np.ndarray:
    """Row-wise ``evaluate_metric`` over an (m, 4) array of mean vectors."""
    means = np.asarray(means, dtype=np.float64)
    mxa, mya, mxb, myb = means[..., 0], means[..., 1], means[..., 2], means[..., 3]
    if kind is MetricKind.SUM_DIFF:
        return mxb - mxa
    if kind is MetricKind.SUM_RATIO:
        return mxb / nonzero_array(mxa)
    if kind is MetricKind.RATIO_DIFF:
        return mxb / nonzero_array(myb) - mxa / nonzero_array(mya)
    if kind is MetricKind.RATIO_OF_RATIOS:
        return (mxb / nonzero_array(myb)) / nonzero_array(mxa / nonzero_array(mya))
    raise OutOfDomain(f"unknown metric kind {kind!r}")


def denominator_columns(kind: MetricKind) -> tuple[int, ...]:
    """Indices into (mxa, mya, mxb, myb) that appear in a denominator of ``kind``."""
    return {
        MetricKind.SUM_DIFF: (),
        MetricKind.SUM_RATIO: (0,),
        MetricKind.RATIO_DIFF: (1, 3),
        MetricKind.RATIO_OF_RATIOS: (0, 1, 3),
    }[kind]


def guarded_denominators(kind: MetricKind, means) -> list[str]:
    """Names of denominators that are zero, i.e. where the nonzero guard kicked in."""
    names = ("mxa", "mya", "mxb", "myb")
    return [names[i] for i in denominator_columns(kind) if float(means[i]) == 0.0]
