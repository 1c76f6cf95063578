"""Ingestion of ungrouped log lines, per-user aggregation and tilde moment estimators."""
from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, NamedTuple

import numpy as np

from .errors import ConflictingGroup, InsufficientUsers, NegativeMetric, OutOfDomain
from .model import DesignParams, Group, MeanVector, tilde_array
from .rng import user_key

CSV_HEADER = ("user_id", "group", "x", "y")
KDD_HEADER = ("UserId", "NbDisplays", "NbClicks")

# rows per block of the streaming moment update
_BLOCK = 1 << 16


class ObservationLine(NamedTuple):
    user_id: object
    group: Group
    x: float
    y: float


class UserAggregate(NamedTuple):
    user_id: object
    group: Group
    x_sum: float
    y_sum: float


def make_line(user_id, group, x, y) -> ObservationLine:
    """Validated constructor: parses the group token and promotes metrics to float."""
    x, y = float(x), float(y)
    if not (x >= 0.0 and y >= 0.0):
        raise NegativeMetric(f"user {user_id!r}: metrics must be non-negative, got x={x}, y={y}")
    return ObservationLine(user_id, Group.parse(group), x, y)


def as_lines(data) -> Iterator[ObservationLine]:
    """Iterate over validated lines from ObservationLines, 4-tuples, or a
    DataFrame-like object with ``user_id, group, x, y`` columns."""
    if hasattr(data, "columns") and hasattr(data, "itertuples"):
        missing = [c for c in CSV_HEADER if c not in data.columns]
        if missing:
            raise OutOfDomain(f"missing columns: {missing}")
        rows = data[list(CSV_HEADER)].itertuples(index=False, name=None)
    else:
        rows = data
    for row in rows:
        if isinstance(row, ObservationLine):
            if not (row.x >= 0.0 and row.y >= 0.0):
                raise NegativeMetric(f"user {row.user_id!r}: negative metric")
            yield row
        else:
            yield make_line(*row)


def _merge_group(user_id, current: Group, new: Group) -> Group:
    if new is Group.UNASSIGNED or new is current:
        return current
    if current is Group.UNASSIGNED:
        return new
    raise ConflictingGroup(f"user {user_id!r} appears in both populations")


def ingest(lines: Iterable) -> list[UserAggregate]:
    """Group lines by user in one pass. Output follows first-appearance order."""
    table: dict[object, list] = {}
    for line in as_lines(lines):
        slot = table.get(line.user_id)
        if slot is None:
            table[line.user_id] = [line.group, line.x, line.y]
        else:
            slot[0] = _merge_group(line.user_id, slot[0], line.group)
            slot[1] += line.x
            slot[2] += line.y
    return [UserAggregate(uid, g, xs, ys) for uid, (g, xs, ys) in table.items()]


def shard_of(user_id, n_shards: int) -> int:
    return user_key(user_id) % n_shards


def ingest_sharded(lines: Iterable, n_shards: int) -> list[UserAggregate]:
    """Aggregate each user-id shard separately, then take the disjoint union."""
    shards: list[list[ObservationLine]] = [[] for _ in range(n_shards)]
    for line in as_lines(lines):
        shards[shard_of(line.user_id, n_shards)].append(line)
    out: list[UserAggregate] = []
    for shard in shards:
        out.extend(ingest(shard))
    return out


def aggregates_to_arrays(aggregates: Iterable[UserAggregate]):
    """Columnar view (groups, x_sum, y_sum) of a collection of aggregates."""
    aggregates = list(aggregates)
    groups = np.fromiter((int(a.group) for a in aggregates), dtype=np.int8, count=len(aggregates))
    x = np.fromiter((a.x_sum for a in aggregates), dtype=np.float64, count=len(aggregates))
    y = np.fromiter((a.y_sum for a in aggregates), dtype=np.float64, count=len(aggregates))
    return groups, x, y


class MomentAccumulator:
    """Mergeable count / mean / co-moment accumulator for 4-dimensional tilde vectors.

    Blocks are centred on their own mean before being folded in with the
    pairwise (Chan et al.) update, so no raw sums of squares are ever formed.
    """

    def __init__(self, dim: int = 4):
        self.count = 0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros((dim, dim))

    def update(self, row) -> "MomentAccumulator":
        row = np.asarray(row, dtype=np.float64)
        self.count += 1
        delta = row - self.mean
        self.mean = self.mean + delta / self.count
        self.m2 = self.m2 + np.outer(delta, row - self.mean)
        return self

    def update_batch(self, rows) -> "MomentAccumulator":
        rows = np.asarray(rows, dtype=np.float64)
        for start in range(0, rows.shape[0], _BLOCK):
            block = rows[start:start + _BLOCK]
            other = MomentAccumulator(rows.shape[1])
            other.count = block.shape[0]
            other.mean = block.mean(axis=0)
            centred = block - other.mean
            other.m2 = centred.T @ centred
            self.merge(other)
        return self

    def merge(self, other: "MomentAccumulator") -> "MomentAccumulator":
        if other.count == 0:
            return self
        if self.count == 0:
            self.count, self.mean, self.m2 = other.count, other.mean.copy(), other.m2.copy()
            return self
        n = self.count + other.count
        delta = other.mean - self.mean
        self.mean = self.mean + delta * (other.count / n)
        self.m2 = self.m2 + other.m2 + np.outer(delta, delta) * (self.count * other.count / n)
        self.count = n
        return self

    def covariance(self) -> np.ndarray:
        if self.count < 2:
            raise InsufficientUsers(f"need at least 2 users, got {self.count}")
        return self.m2 / (self.count - 1)

    def summary(self) -> "MomentSummary":
        cov = self.covariance()
        sds = np.sqrt(np.clip(np.diag(cov), 0.0, None))
        flags = []
        corrs = []
        for pop, (i, j) in (("a", (0, 1)), ("b", (2, 3))):
            if sds[i] > 0.0 and sds[j] > 0.0:
                corrs.append(float(np.clip(cov[i, j] / (sds[i] * sds[j]), -1.0, 1.0)))
            else:
                corrs.append(0.0)
                flags.append(f"zero_sd_corr_{pop}")
        return MomentSummary(
            n=self.count,
            means=MeanVector(*(float(m) for m in self.mean)),
            sd_xa=float(sds[0]), sd_ya=float(sds[1]),
            sd_xb=float(sds[2]), sd_yb=float(sds[3]),
            corr_a=corrs[0], corr_b=corrs[1],
            flags=tuple(flags),
        )


@dataclass(frozen=True)
class MomentSummary:
    n: int
    means: MeanVector
    sd_xa: float
    sd_ya: float
    sd_xb: float
    sd_yb: float
    corr_a: float
    corr_b: float
    flags: tuple = field(default=())

    def swapped(self) -> "MomentSummary":
        flags = tuple(_swap_suffix(f) for f in self.flags)
        return MomentSummary(self.n, self.means.swapped(), self.sd_xb, self.sd_yb,
                             self.sd_xa, self.sd_ya, self.corr_b, self.corr_a, flags)


def _swap_suffix(flag: str) -> str:
    if flag.endswith("_a"):
        return flag[:-2] + "_b"
    if flag.endswith("_b"):
        return flag[:-2] + "_a"
    return flag


def summarize_tilde(tildes) -> MomentSummary:
    """Moment summary of an (n, 4) array of tilde vectors."""
    tildes = np.asarray(tildes, dtype=np.float64)
    if tildes.ndim != 2 or tildes.shape[1] != 4:
        raise OutOfDomain(f"expected an (n, 4) array of tilde vectors, got shape {tildes.shape}")
    if tildes.shape[0] < 2:
        raise InsufficientUsers(f"need at least 2 users, got {tildes.shape[0]}")
    return MomentAccumulator().update_batch(tildes).summary()


def summarize(aggregates: Iterable[UserAggregate], design: DesignParams) -> MomentSummary:
    groups, x, y = aggregates_to_arrays(aggregates)
    if groups.shape[0] < 2:
        raise InsufficientUsers(f"need at least 2 users, got {groups.shape[0]}")
    return summarize_tilde(tilde_array(groups, x, y, design))


def summarize_sharded(aggregates: Iterable[UserAggregate], design: DesignParams,
                      n_shards: int) -> MomentSummary:
    """Same as ``summarize`` but accumulates user shards separately and merges them."""
    aggregates = list(aggregates)
    if len(aggregates) < 2:
        raise InsufficientUsers(f"need at least 2 users, got {len(aggregates)}")
    parts = [[] for _ in range(n_shards)]
    for agg in aggregates:
        parts[shard_of(agg.user_id, n_shards)].append(agg)
    total = MomentAccumulator()
    for part in parts:
        if part:
            total.merge(MomentAccumulator().update_batch(tilde_array(*aggregates_to_arrays(part), design)))
    return total.summary()


# -- file formats -------------------------------------------------------------

def _open_text(source):
    if isinstance(source, (str, os.PathLike)):
        return open(source, newline="", encoding="utf-8"), True
    return source, False


def read_csv(source) -> Iterator[ObservationLine]:
    """Stream lines from a ``user_id,group,x,y`` CSV (path or text handle)."""
    handle, owned = _open_text(source)
    try:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None:
            return
        if tuple(h.strip() for h in header) != CSV_HEADER:
            raise OutOfDomain(f"expected CSV header {','.join(CSV_HEADER)}, got {','.join(header)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise OutOfDomain(f"line {lineno}: expected 4 fields, got {len(row)}")
            try:
                yield make_line(row[0], row[1], row[2], row[3])
            except ValueError as exc:
                if isinstance(exc, (NegativeMetric, OutOfDomain)):
                    raise
                raise OutOfDomain(f"line {lineno}: {exc}") from None
    finally:
        if owned:
            handle.close()


def read_kdd_tsv(source, assign: Callable[[object], Group]) -> Iterator[ObservationLine]:
    """Stream a ``UserId\\tNbDisplays\\tNbClicks`` log; x is clicks, y is displays.

    ``assign`` maps a user id to its population (a fixed group or a blank split).
    """
    handle, owned = _open_text(source)
    try:
        reader = csv.reader(handle, delimiter="\t")
        header = next(reader, None)
        if header is None:
            return
        if tuple(h.strip() for h in header) != KDD_HEADER:
            raise OutOfDomain(f"expected TSV header {' '.join(KDD_HEADER)}, got {' '.join(header)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise OutOfDomain(f"line {lineno}: expected 3 fields, got {len(row)}")
            uid = row[0].strip()
            try:
                displays, clicks = float(row[1]), float(row[2])
            except ValueError:
                raise OutOfDomain(f"line {lineno}: non-numeric metric") from None
            yield make_line(uid, assign(uid), clicks, displays)
    finally:
        if owned:
            handle.close()


def write_csv(lines: Iterable[ObservationLine], handle) -> None:
    writer = csv.writer(handle, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for line in lines:
        writer.writerow((line.user_id, Group.parse(line.group).token, _fmt(line.x), _fmt(line.y)))


def _fmt(value: float) -> str:
    return str(int(value)) if float(value).is_integer() else repr(float(value))


def lines_to_csv_text(lines: Iterable[ObservationLine]) -> str:
    buf = io.StringIO()
    write_csv(lines, buf)
    return buf.getvalue()
