"""Fused weight-generation and accumulation loop for the default Poisson weights.

Sums are accumulated line by line in input order, matching the numpy
reduction in ``bootstrap._weighted_column_sums`` bit for bit.
"""
import numba
import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)


@numba.njit(cache=True, inline="always")
def _splitmix(z):
    z = z + _GOLDEN
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@numba.njit(cache=True, nogil=True)
def accumulate_poisson(base, keys, replicates, contrib, first, thresholds, sums, sizes):
    n_lines = keys.shape[0]
    n_reps = replicates.shape[0]
    n_thr = thresholds.shape[0]
    for l in range(n_lines):
        per_user = _splitmix(base ^ keys[l])
        c0 = contrib[l, 0]
        c1 = contrib[l, 1]
        c2 = contrib[l, 2]
        c3 = contrib[l, 3]
        for r in range(n_reps):
            bits = _splitmix(per_user ^ replicates[r])
            w = 0
            while w < n_thr and bits >= thresholds[w]:
                w += 1
            fw = np.float64(w)
            sums[r, 0] += fw * c0
            sums[r, 1] += fw * c1
            sums[r, 2] += fw * c2
            sums[r, 3] += fw * c3
            if first[l]:
                sizes[r] += w
