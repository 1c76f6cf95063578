import json
import math
import random

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from abci.aggregate import ingest, make_line, summarize
from abci.bootstrap import (BootstrapDistribution, OnlineBootstrap, _weighted_column_sums,
                            empirical_quantile, mixed_ci, poisson_weight, poisson_weights,
                            quantile_ci, run_online_bootstrap, unit_weights)
from abci.clt import Method
from abci.errors import (EmptyDistribution, InsufficientReplicates, InvalidReplicateCount,
                         OutOfDomain)
from abci.harness import SyntheticPopulationSpec, split_keys
from abci.model import DesignParams, Group, MetricKind, evaluate_metric
from abci.rng import user_key, user_keys


def dist(values, kind=MetricKind.RATIO_DIFF, point=None):
    values = np.asarray(values, dtype=float)
    return BootstrapDistribution(values, np.ones(values.size, dtype=np.int64), kind, 0,
                                 10, point_estimate=point)


def synthetic_lines(n_users=3000, seed=0, lines_per_user=2):
    """Log with each user's activity split over several lines, users interleaved."""
    rng = np.random.default_rng(seed)
    pop = SyntheticPopulationSpec(n_users=n_users).generate(seed)
    groups = split_keys(pop.keys, seed, 0.5)
    out = []
    for uid, g, x, y in zip(pop.user_ids, groups, pop.x, pop.y):
        cuts = rng.dirichlet(np.ones(lines_per_user))
        for c in cuts:
            out.append(make_line(int(uid), Group(int(g)), x * c, y * c))
    rng.shuffle(out)
    return out


# -- weights ------------------------------------------------------------------

def test_poisson_weight_deterministic():
    assert poisson_weight(7, "user", 3) == poisson_weight(7, "user", 3)
    with pytest.raises(InvalidReplicateCount):
        poisson_weight(7, "user", -1)


def test_scalar_and_vector_weights_agree():
    ids = [f"u{i}" for i in range(200)] + list(range(200))
    vec = poisson_weights(11, user_keys(ids), np.arange(5))
    for i, uid in enumerate(ids):
        for m in range(5):
            assert vec[i, m] == poisson_weight(11, uid, m)


@pytest.fixture(scope="module")
def million_weights():
    keys = np.arange(1, 1_000_001, dtype=np.uint64) * np.uint64(0x9E3779B97F4A7C15)
    return poisson_weights(2026, keys, [0])[:, 0]


def test_poisson_weight_mean(million_weights):
    assert 0.997 <= million_weights.mean() <= 1.003


def test_poisson_weight_zero_mass(million_weights):
    assert abs(np.mean(million_weights == 0) - math.exp(-1)) <= 0.002


def test_poisson_weight_pmf_goodness_of_fit(million_weights):
    from scipy import stats
    counts = np.bincount(million_weights, minlength=6)[:6]
    probs = stats.poisson.pmf(np.arange(6), 1.0)
    expected = probs * million_weights.size
    chi2 = float(((counts - expected) ** 2 / expected).sum())
    assert chi2 < stats.chi2.ppf(0.999, df=5)


def test_seed_sensitivity():
    keys = user_keys(range(2000))
    a, b = poisson_weights(1, keys, range(4)), poisson_weights(2, keys, range(4))
    assert not np.array_equal(a, b)
    assert abs(a.mean() - 1) < 0.05 and abs(b.mean() - 1) < 0.05


# -- accumulation -------------------------------------------------------------

def test_hand_trace(two_user_lines, half_design):
    fixed = {user_key("u1"): 2, user_key("u2"): 0}

    def weights(seed, keys, replicates):
        return np.array([[fixed[int(k)]] * len(replicates) for k in keys], dtype=np.int64)

    boot = OnlineBootstrap(1, 0, weight_fn=weights).update(two_user_lines, half_design)
    np.testing.assert_array_equal(boot.sums[0], [8.0, 16.0, 0.0, 0.0])
    assert boot.sizes[0] == 2
    mean = boot.sums[0] / boot.sizes[0]
    assert mean[0] / mean[1] == 0.5
    # the B side has zero weight, so the ratio replicate is invalid and excluded
    d = boot.distribution(MetricKind.RATIO_DIFF)
    assert not d.valid[0]
    assert "invalid_replicates=1" in d.flags


def test_shape(two_user_lines, half_design):
    d = run_online_bootstrap(two_user_lines, half_design, MetricKind.SUM_DIFF, 3, 0)
    assert d.estimates.shape == (3,) and d.replicate_sizes.shape == (3,)
    with pytest.raises(InvalidReplicateCount):
        run_online_bootstrap(two_user_lines, half_design, MetricKind.SUM_DIFF, 0, 0)


@pytest.mark.parametrize("kind", list(MetricKind))
def test_unit_weights_reproduce_plain_estimate(kind, half_design):
    lines = synthetic_lines(500)
    d = run_online_bootstrap(lines, half_design, kind, 4, 0, weight_fn=unit_weights)
    plain = evaluate_metric(kind, summarize(ingest(lines), half_design).means)
    np.testing.assert_allclose(d.estimates, plain, rtol=1e-12)
    assert d.point_estimate == pytest.approx(plain, rel=1e-12)


def test_replicate_sizes_count_each_user_once(half_design):
    lines = synthetic_lines(800, lines_per_user=3)
    d = run_online_bootstrap(lines, half_design, MetricKind.RATIO_DIFF, 6, 5)
    ids = sorted({l.user_id for l in lines})
    expected = [sum(poisson_weight(5, uid, m) for uid in ids) for m in range(6)]
    assert d.replicate_sizes.tolist() == expected
    assert d.n_users == len(ids)


def test_line_order_invariance(half_design):
    lines = synthetic_lines(1500)
    shuffled = list(lines)
    random.Random(3).shuffle(shuffled)
    for kind in MetricKind:
        a = run_online_bootstrap(lines, half_design, kind, 20, 9)
        b = run_online_bootstrap(shuffled, half_design, kind, 20, 9)
        np.testing.assert_allclose(a.estimates, b.estimates, rtol=1e-9)
        assert a.replicate_sizes.tolist() == b.replicate_sizes.tolist()


@pytest.mark.parametrize("chunk", [1, 7, 1000, 100_000])
def test_chunk_size_does_not_change_counts(chunk, half_design):
    lines = synthetic_lines(400)
    ref = run_online_bootstrap(lines, half_design, MetricKind.SUM_DIFF, 5, 1)
    d = run_online_bootstrap(lines, half_design, MetricKind.SUM_DIFF, 5, 1, chunk_lines=chunk)
    assert d.replicate_sizes.tolist() == ref.replicate_sizes.tolist()
    np.testing.assert_allclose(d.estimates, ref.estimates, rtol=1e-12)


@pytest.mark.parametrize("kind", [MetricKind.SUM_RATIO, MetricKind.RATIO_OF_RATIOS])
def test_ratio_kinds_cancel_normalisation(kind, half_design):
    boot = OnlineBootstrap(8, 4).update(synthetic_lines(600), half_design)
    d = boot.distribution(kind)
    for c in (1.0, 0.37, 1e6):
        rescaled = [evaluate_metric(kind, row * c) for row in boot.sums]
        np.testing.assert_allclose(d.estimates, rescaled, rtol=1e-12)


def test_kernel_matches_numpy_reference(half_design):
    lines = synthetic_lines(700)
    fast = OnlineBootstrap(9, 13).update(lines, half_design)
    slow = OnlineBootstrap(9, 13, weight_fn=poisson_weights).update(lines, half_design)
    np.testing.assert_array_equal(fast.sums, slow.sums)
    np.testing.assert_array_equal(fast.sizes, slow.sizes)


def test_replicate_blocks_concatenate_bit_identically(half_design):
    lines = synthetic_lines(700)
    full = run_online_bootstrap(lines, half_design, MetricKind.RATIO_OF_RATIOS, 10, 3)
    parts = [run_online_bootstrap(lines, half_design, MetricKind.RATIO_OF_RATIOS, 10, 3,
                                  replicates=block)
             for block in (range(0, 4), range(4, 5), range(5, 10))]
    joined = BootstrapDistribution.concatenate(parts)
    assert joined.estimates.tobytes() == full.estimates.tobytes()
    assert joined.replicate_sizes.tolist() == full.replicate_sizes.tolist()


def test_weighted_column_sums_reference():
    w = np.array([[1, 0], [2, 3]])
    c = np.array([[1.0, 2.0, 0.0, 0.0], [0.5, 0.0, 1.0, 1.0]])
    np.testing.assert_array_equal(_weighted_column_sums(w, c), (w.T @ c))


def test_json_fields(two_user_lines, half_design):
    d = run_online_bootstrap(two_user_lines, half_design, MetricKind.SUM_DIFF, 3, 42)
    payload = json.loads(d.to_json())
    assert set(payload) == {"estimates", "replicate_sizes", "seed", "kind"}
    assert payload["seed"] == 42 and payload["kind"] == "sum-diff"
    assert len(payload["estimates"]) == 3


def test_distribution_validation():
    with pytest.raises(InvalidReplicateCount):
        BootstrapDistribution(np.array([]), np.array([]), MetricKind.SUM_DIFF, 0, 0)
    with pytest.raises(InvalidReplicateCount):
        BootstrapDistribution(np.array([1.0]), np.array([1, 2]), MetricKind.SUM_DIFF, 0, 0)


# -- intervals ----------------------------------------------------------------

def test_quantile_ci_example():
    r = quantile_ci(dist([5, 3, 1, 4, 2]), 0.6)
    assert (r.lo, r.hi) == pytest.approx((1.8, 4.2), abs=1e-12)
    assert r.method is Method.BOOTSTRAP_QUANTILE


def test_quantile_ci_single_value():
    r = quantile_ci(dist([2.5]), 0.95)
    assert r.lo == r.hi == 2.5


def test_quantile_ci_level_zero_gives_median():
    r = quantile_ci(dist([1, 2, 3, 4, 5]), 0.0)
    assert (r.lo, r.hi) == (3.0, 3.0)
    assert r.estimate == 3.0


def test_quantile_ci_uses_point_estimate_and_skips_invalid():
    r = quantile_ci(dist([1, np.nan, 3], point=2.2), 0.5)
    assert r.estimate == 2.2
    assert (r.lo, r.hi) == (1.5, 2.5)


def test_quantile_ci_errors():
    with pytest.raises(EmptyDistribution):
        quantile_ci(dist([np.nan, np.nan]), 0.9)
    with pytest.raises(OutOfDomain):
        quantile_ci(dist([1.0, 2.0]), 1.0)


def _oracle_quantile(values, p):
    s = sorted(values)
    h = (len(s) - 1) * p + 1
    lo = math.floor(h)
    if lo >= len(s):
        return s[-1]
    return s[lo - 1] + (h - lo) * (s[lo] - s[lo - 1])


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=30), st.floats(0, 1))
def test_empirical_quantile_matches_oracle(values, p):
    assert empirical_quantile(np.sort(values), p) == _oracle_quantile(values, p)


@given(st.lists(st.floats(-100, 100), min_size=1, max_size=30), st.floats(0, 0.99))
def test_quantile_interval_ordered(values, q):
    r = quantile_ci(dist(values), q)
    assert min(values) <= r.lo <= r.hi <= max(values)


def test_mixed_ci_example():
    r = mixed_ci(0.5, dist([0.49, 0.50, 0.51]), 0.95)
    assert (r.lo, r.hi) == pytest.approx((0.4804, 0.5196), abs=5e-6)
    assert r.method is Method.BOOTSTRAP_CLT


def test_mixed_ci_zero_spread():
    r = mixed_ci(1.0, dist([0.7, 0.7, 0.7]), 0.9)
    assert r.lo == r.hi == 1.0


@settings(max_examples=50)
@given(st.lists(st.floats(-10, 10), min_size=2, max_size=20), st.floats(0.01, 0.9),
       st.floats(0.001, 0.09))
def test_mixed_ci_monotone(values, q, dq):
    small, large = mixed_ci(0.0, dist(values), q), mixed_ci(0.0, dist(values), q + dq)
    assert large.lo <= small.lo <= 0.0 <= small.hi <= large.hi


def test_mixed_ci_needs_two_valid():
    with pytest.raises(InsufficientReplicates):
        mixed_ci(0.0, dist([1.0, np.nan]), 0.95)
