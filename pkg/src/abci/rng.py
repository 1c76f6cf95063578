"""Counter-based keyed random numbers.

Every random quantity in abci (bootstrap weights, blank-test splits, synthetic
populations keyed by test index) is a pure function of integer keys, so the
same user receives the same draw wherever it appears in a log and whatever
order the log is read in.
"""
from __future__ import annotations

import hashlib

import numpy as np

_MASK = (1 << 64) - 1
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)

# domain separators so that weights, splits and seeds never share a stream
STREAM_WEIGHT = 0x5745494748540001
STREAM_SPLIT = 0x53504C4954000002
STREAM_SEED = 0x5345454400000003


def splitmix64(z):
    """SplitMix64 finaliser, vectorised over uint64 arrays (wrapping arithmetic)."""
    z = np.asarray(z, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = z + _GOLDEN
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
        z = z ^ (z >> np.uint64(31))
    return z


def mix(*parts):
    """Fold integer (or uint64 array) parts into one 64-bit key, left to right."""
    h = np.uint64(0)
    for part in parts:
        if isinstance(part, (int, np.integer)):
            part = np.uint64(int(part) & _MASK)
        else:
            part = np.asarray(part, dtype=np.uint64)
        h = splitmix64(h ^ part)
    return h


def user_key(user_id) -> int:
    """Stable 64-bit key of a user id; ids are compared through their string form."""
    digest = hashlib.blake2b(str(user_id).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def user_keys(user_ids) -> np.ndarray:
    return np.fromiter((user_key(u) for u in user_ids), dtype=np.uint64, count=len(user_ids))


def to_unit(bits) -> np.ndarray:
    """Top 53 bits of a uint64 mapped to a double in [0, 1)."""
    bits = np.asarray(bits, dtype=np.uint64)
    return (bits >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)


def derive_seed(seed: int, *parts: int) -> int:
    """Child seed for a sub-experiment (e.g. one blank test)."""
    return int(mix(STREAM_SEED, seed, *parts))
