"""Closed-form asymptotic variances and normal-approximation intervals."""
from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass, field

from .aggregate import MomentSummary
from .errors import DegenerateMeans, InsufficientUsers, OutOfDomain
from .model import MetricKind, evaluate_metric

# coefficient of variation above which the normal approximation is flagged
HIGH_CV = 10.0


class Method(enum.Enum):
    CLT = "clt"
    BOOTSTRAP_QUANTILE = "bootstrap"
    BOOTSTRAP_CLT = "bootstrap-clt"
    NAIVE_DISPLAY = "naive-display"

    @property
    def label(self) -> str:
        return {
            Method.CLT: "CLT",
            Method.BOOTSTRAP_QUANTILE: "BootstrapQuantile",
            Method.BOOTSTRAP_CLT: "BootstrapCLT",
            Method.NAIVE_DISPLAY: "NaiveDisplay",
        }[self]

    @property
    def uses_bootstrap(self) -> bool:
        return self in (Method.BOOTSTRAP_QUANTILE, Method.BOOTSTRAP_CLT)

    @classmethod
    def parse(cls, value) -> "Method":
        if isinstance(value, Method):
            return value
        token = str(value).strip()
        for method in cls:
            if token in (method.value, method.label, method.name):
                return method
        valid = ", ".join(m.value for m in cls)
        raise OutOfDomain(f"unknown method {value!r}; valid methods: {valid}")


@dataclass(frozen=True)
class CiReport:
    kind: MetricKind
    estimate: float
    lo: float
    hi: float
    level: float
    n: int
    method: Method
    m_replicates: int | None = None
    seed: int | None = None
    flags: tuple = field(default=())

    @property
    def half_width(self) -> float:
        return 0.5 * (self.hi - self.lo)

    def contains(self, value: float) -> bool:
        return self.lo <= value <= self.hi

    def to_dict(self) -> dict:
        out = asdict(self)
        out["kind"] = self.kind.value
        out["method"] = self.method.label
        out["flags"] = list(self.flags)
        return out


def check_level(q: float) -> float:
    q = float(q)
    if not 0.0 <= q < 1.0:
        raise OutOfDomain(f"confidence level must lie in [0, 1), got {q}")
    return q


# Wichura (1988), algorithm AS 241, PPND16: about 1e-16 relative accuracy.
_A = (3.3871328727963666080e0, 1.3314166789178437745e2, 1.9715909503065514427e3,
      1.3731693765509461125e4, 4.5921953931549871457e4, 6.7265770927008700853e4,
      3.3430575583588128105e4, 2.5090809287301226727e3)
_B = (1.0, 4.2313330701600911252e1, 6.8718700749205790830e2, 5.3941960214247511077e3,
      2.1213794301586595867e4, 3.9307895800092710610e4, 2.8729085735721942674e4,
      5.2264952788528545610e3)
_C = (1.42343711074968357734e0, 4.63033784615654529590e0, 5.76949722146069140550e0,
      3.64784832476320460504e0, 1.27045825245236838258e0, 2.41780725177450611770e-1,
      2.27238449892691845833e-2, 7.74545014278341407640e-4)
_D = (1.0, 2.05319162663775882187e0, 1.67638483018380384940e0, 6.89767334985100004550e-1,
      1.48103976427480074590e-1, 1.51986665636164571966e-2, 5.47593808499534494600e-4,
      1.05075007164441684324e-9)
_E = (6.65790464350110377720e0, 5.46378491116411436990e0, 1.78482653991729133580e0,
      2.96560571828504891230e-1, 2.65321895265761230930e-2, 1.24266094738807843860e-3,
      2.71155556874348757815e-5, 2.01033439929228813265e-7)
_F = (1.0, 5.99832206555887937690e-1, 1.36929880922735805310e-1, 1.48753612908506148525e-2,
      7.86869131145613259100e-4, 1.84631831751005468180e-5, 1.42151175831644588870e-7,
      2.04426310338993978564e-15)


def _poly(coefs, x: float) -> float:
    acc = 0.0
    for c in reversed(coefs):
        acc = acc * x + c
    return acc


def inv_normal_cdf(p: float) -> float:
    """Standard normal quantile."""
    p = float(p)
    if not 0.0 < p < 1.0:
        raise OutOfDomain(f"probability must lie in (0, 1), got {p}")
    q = p - 0.5
    if abs(q) <= 0.425:
        r = 0.180625 - q * q
        return q * _poly(_A, r) / _poly(_B, r)
    r = math.sqrt(-math.log(p if q < 0.0 else 1.0 - p))
    if r <= 5.0:
        r -= 1.6
        z = _poly(_C, r) / _poly(_D, r)
    else:
        r -= 5.0
        z = _poly(_E, r) / _poly(_F, r)
    return -z if q < 0.0 else z


def normal_multiplier(q: float) -> float:
    """Two-sided multiplier N^{-1}((1 + q) / 2)."""
    return inv_normal_cdf((1.0 + check_level(q)) / 2.0)


_REQUIRED_MEANS = {
    MetricKind.SUM_DIFF: (),
    MetricKind.SUM_RATIO: ("mxa", "mxb"),
    MetricKind.RATIO_DIFF: ("mxa", "mya", "mxb", "myb"),
    MetricKind.RATIO_OF_RATIOS: ("mxa", "mya", "mxb", "myb"),
}


def _check_means(kind: MetricKind, s: MomentSummary) -> None:
    bad = [name for name in _REQUIRED_MEANS[kind] if not getattr(s.means, name) > 0.0]
    if bad:
        raise DegenerateMeans(f"{kind.label} needs strictly positive means; not positive: {', '.join(bad)}")


def _ratio_variance(mx: float, my: float, sd_x: float, sd_y: float, corr: float) -> float:
    cv_x, cv_y = sd_x / mx, sd_y / my
    return (mx / my) ** 2 * (cv_x * cv_x + cv_y * cv_y - 2.0 * corr * cv_x * cv_y)


def asymptotic_variance(kind: MetricKind, s: MomentSummary) -> float:
    """Variance of the limiting normal law of sqrt(n) * (estimate - truth)."""
    kind = MetricKind.parse(kind)
    _check_means(kind, s)
    m = s.means
    if kind is MetricKind.SUM_DIFF:
        return s.sd_xa ** 2 + s.sd_xb ** 2 + 2.0 * m.mxa * m.mxb
    if kind is MetricKind.SUM_RATIO:
        return (m.mxb / m.mxa) ** 2 * ((s.sd_xa / m.mxa) ** 2 + (s.sd_xb / m.mxb) ** 2 + 2.0)
    v_a = _ratio_variance(m.mxa, m.mya, s.sd_xa, s.sd_ya, s.corr_a)
    v_b = _ratio_variance(m.mxb, m.myb, s.sd_xb, s.sd_yb, s.corr_b)
    if kind is MetricKind.RATIO_DIFF:
        return v_a + v_b
    r_a, r_b = m.mxa / m.mya, m.mxb / m.myb
    return (r_b / r_a) ** 2 * (v_a / r_a ** 2 + v_b / r_b ** 2)


def _cv_flags(kind: MetricKind, s: MomentSummary) -> list[str]:
    if kind is MetricKind.SUM_DIFF:
        return []
    m = s.means
    pairs = {"xa": (s.sd_xa, m.mxa), "ya": (s.sd_ya, m.mya),
             "xb": (s.sd_xb, m.mxb), "yb": (s.sd_yb, m.myb)}
    names = ("xa", "xb") if kind is MetricKind.SUM_RATIO else tuple(pairs)
    return [f"high_cv_{name}" for name in names if pairs[name][0] > HIGH_CV * pairs[name][1]]


def clt_ci(kind: MetricKind, s: MomentSummary, level: float = 0.95) -> CiReport:
    kind = MetricKind.parse(kind)
    if s.n < 2:
        raise InsufficientUsers(f"need at least 2 users, got {s.n}")
    s_mult = normal_multiplier(level)
    variance = asymptotic_variance(kind, s)
    sigma_n = math.sqrt(max(variance, 0.0) / s.n)
    estimate = evaluate_metric(kind, s.means)
    half = s_mult * sigma_n
    flags = tuple(s.flags) + tuple(_cv_flags(kind, s))
    return CiReport(kind, estimate, estimate - half, estimate + half, float(level), s.n,
                    Method.CLT, flags=flags)
