import math

import numpy as np
import pytest

from abci.bootstrap import run_online_bootstrap
from abci.clt import Method
from abci.errors import OutOfDomain, UnsupportedCombination
from abci.harness import (CoverageResult, Law, Population, SyntheticPopulationSpec,
                          binomial_band, blank_split, click_total_distribution,
                          empirical_vs_binomial_sd, naive_display_variance, run_coverage,
                          split_keys)
from abci.model import DesignParams, Group, MetricKind, evaluate_metric, tilde_array
from abci.aggregate import summarize_tilde


def test_blank_split_deterministic():
    assert blank_split("alice", 3, 0.5) is blank_split("alice", 3, 0.5)


def test_blank_split_fraction():
    groups = [blank_split(i, 17, 0.5) for i in range(100_000)]
    assert abs(sum(g is Group.A for g in groups) / len(groups) - 0.5) <= 0.01


def test_blank_split_salt_sensitivity():
    ids = range(20_000)
    changed = np.mean([blank_split(i, 1, 0.5) is not blank_split(i, 2, 0.5) for i in ids])
    assert changed > 0.2


def test_vector_split_matches_scalar():
    pop = SyntheticPopulationSpec(n_users=300).generate(0)
    codes = split_keys(pop.keys, 9, 0.3)
    assert [Group(int(c)) for c in codes] == [blank_split(int(u), 9, 0.3) for u in pop.user_ids]


@pytest.mark.parametrize("alpha", [0.0, 1.0, 1.5])
def test_blank_split_domain(alpha):
    with pytest.raises(OutOfDomain):
        blank_split("u", 0, alpha)


@pytest.mark.parametrize("args, expected", [
    ((0.05, 10_000, 0.05, 10_000), 9.5e-6),
    ((0.0, 10, 0.0, 20), 0.0),
    ((1.0, 10, 1.0, 20), 0.0),
])
def test_naive_display_variance(args, expected):
    assert naive_display_variance(*args) == pytest.approx(expected, rel=1e-12, abs=0)


@pytest.mark.parametrize("args", [(-0.1, 10, 0.1, 10), (0.1, 0, 0.1, 10), (0.1, 10, 1.1, 10)])
def test_naive_display_variance_domain(args):
    with pytest.raises(OutOfDomain):
        naive_display_variance(*args)


def test_binomial_sd_example():
    pop = Population(np.arange(50), np.ones(50), np.ones(50))
    dist = click_total_distribution(pop, 5, 0)
    assert empirical_vs_binomial_sd(dist, 10_000, 0.05)[1] == pytest.approx(math.sqrt(475), rel=1e-12)
    assert math.sqrt(475) == pytest.approx(21.79, abs=0.005)


def test_bernoulli_population_matches_binomial():
    # one display per user: bootstrapping users is resampling displays
    spec = SyntheticPopulationSpec(n_users=20_000, law_y=Law("constant", 1.0), concentration=None)
    pop = spec.generate(4)
    dist = click_total_distribution(pop, 400, 8)
    ctr = pop.x.sum() / pop.y.sum()
    empirical, binomial = empirical_vs_binomial_sd(dist, pop.y.sum(), ctr)
    # sd of a sample sd from 400 draws is about 3.5%
    assert empirical == pytest.approx(binomial, rel=0.12)


def test_overdispersed_population_exceeds_binomial():
    pop = SyntheticPopulationSpec(n_users=20_000).generate(4)
    dist = click_total_distribution(pop, 400, 8)
    ctr = pop.x.sum() / pop.y.sum()
    empirical, binomial = empirical_vs_binomial_sd(dist, pop.y.sum(), ctr)
    assert empirical > 1.3 * binomial


def test_default_population_mimics_click_log_statistics():
    pop = SyntheticPopulationSpec(n_users=200_000).generate(0)
    assert pop.y.mean() == pytest.approx(4.3, rel=0.02)
    assert pop.x.mean() == pytest.approx(0.19, rel=0.05)
    assert pop.x.sum() / pop.y.sum() == pytest.approx(0.044, rel=0.05)
    assert (pop.y >= 1).all() and (pop.x >= 0).all() and (pop.x <= pop.y).all()


@pytest.mark.parametrize("law", [Law("poisson", 2.0), Law("zip", 3.0, 0.6), Law("geometric", 2.5),
                                 Law("constant", 1.0)])
def test_laws_are_non_negative(law):
    draws = law.sample(np.random.default_rng(0), 10_000)
    assert (draws >= 0).all()


def test_independent_population_needs_law_x():
    with pytest.raises(OutOfDomain):
        SyntheticPopulationSpec(corr="independent").generate(0)


def test_blank_truth_across_tests():
    pop = SyntheticPopulationSpec(n_users=5_000).generate(1)
    design = DesignParams(0.5, 0.5)
    est = {k: [] for k in MetricKind}
    for t in range(300):
        g = split_keys(pop.keys, t, 0.5)
        means = summarize_tilde(tilde_array(g, pop.x, pop.y, design)).means
        for k in MetricKind:
            est[k].append(evaluate_metric(k, means))
    for k, values in est.items():
        values = np.array(values)
        se = values.std(ddof=1) / math.sqrt(values.size)
        assert abs(values.mean() - k.blank_truth) < 4 * se


def test_always_infinite_interval_covers_everything():
    def everything(case, levels):
        return [(-math.inf, math.inf) for _ in levels]

    res = run_coverage(SyntheticPopulationSpec(n_users=200), everything, "ratio-diff",
                       num_tests=20)
    assert res.observed == [1.0] * 5
    assert res.method == "everything"


def test_naive_display_needs_ctr_kind():
    with pytest.raises(UnsupportedCombination):
        run_coverage(SyntheticPopulationSpec(n_users=200), "naive-display", "ratio-rel",
                     num_tests=2)


def test_binomial_band():
    lo, hi = binomial_band(0.95, 500)
    assert lo < 0.95 < hi
    assert 0.92 < lo < 0.935 and 0.965 < hi < 0.98


def test_coverage_csv_shape():
    res = run_coverage(SyntheticPopulationSpec(n_users=500), Method.CLT, MetricKind.SUM_DIFF,
                       levels=[0.5, 0.9], num_tests=10, seed=3)
    rows = res.to_csv().splitlines()
    assert rows[0] == "level,observed,num_tests,method"
    assert len(rows) == 3 and rows[1].startswith("0.5,") and rows[1].endswith(",10,CLT")
    assert all(0 <= h <= 10 for h in res.hits)


def test_coverage_independent_of_workers():
    spec = SyntheticPopulationSpec(n_users=2_000)
    a = run_coverage(spec, "bootstrap-clt", "ratio-rel", num_tests=12, seed=5, M=10)
    b = run_coverage(spec, "bootstrap-clt", "ratio-rel", num_tests=12, seed=5, M=10, workers=3)
    assert a.to_csv() == b.to_csv()


def test_coverage_on_log_lines(two_user_lines):
    run_lines = two_user_lines * 3
    pop = Population.from_lines(run_lines)
    assert pop.n_users == 2 and pop.x.tolist() == [6.0, 3.0]
    res = run_coverage(run_lines, "clt", "sum-diff", num_tests=3, levels=[0.9])
    assert res.num_tests == 3
