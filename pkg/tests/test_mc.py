import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from heightcond import mc


def test_estimator_matches_numpy():
    rng = np.random.default_rng(71)
    x = rng.normal(size=1000)
    est = mc.Estimator.from_samples(x)
    assert est.mean == pytest.approx(x.mean())
    assert est.variance == pytest.approx(x.var(ddof=1))
    assert est.stderr == pytest.approx(x.std(ddof=1) / math.sqrt(x.size))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=3, max_size=60), st.integers(1, 58), st.integers(1, 58))
def test_merge_is_associative(values, i, j):
    x = np.array(values)
    i, j = sorted((min(i, x.size - 1), min(j, x.size - 1)))
    a, b, c = (mc.Estimator.from_samples(p) for p in (x[:i], x[i:j], x[j:]))
    left = a.merge(b).merge(c)
    right = a.merge(b.merge(c))
    whole = mc.Estimator.from_samples(x)
    for e in (left, right):
        assert e.count == whole.count
        assert e.mean == pytest.approx(whole.mean, abs=1e-9)
        assert e.m2 == pytest.approx(whole.m2, rel=1e-9, abs=1e-6)


def test_weighted_estimator():
    x = np.array([1.0, 2.0, 3.0])
    w = np.array([1.0, 0.0, 3.0])
    est = mc.Estimator.from_samples(x, w)
    assert est.mean == pytest.approx(2.5)
    assert est.effective_count == pytest.approx(16 / 10)


def test_seed_streams_are_reproducible_and_distinct():
    a = mc.seed_stream(5, 0).random(1000)
    b = mc.seed_stream(5, 0).random(1000)
    c = mc.seed_stream(5, 1).random(1000)
    d = mc.seed_stream(6, 0).random(1000)
    assert np.array_equal(a, b)
    assert abs(np.corrcoef(a, c)[0, 1]) < 4 / math.sqrt(1000)
    assert abs(np.corrcoef(a, d)[0, 1]) < 4 / math.sqrt(1000)


def test_config_hash_ignores_key_order():
    assert mc.config_hash({"a": 1, "b": 2}) == mc.config_hash({"b": 2, "a": 1})
    assert mc.config_hash({"a": 1}) != mc.config_hash({"a": 2})


def test_martingale_constancy_pass_and_fail():
    rng = np.random.default_rng(72)
    good = [rng.exponential(1.0, 20_000) for _ in range(3)]
    assert mc.martingale_constancy(good, 1.0).passed
    bad = good[:2] + [good[2] * 1.1]
    assert not mc.martingale_constancy(bad, 1.0).passed


def test_ks_identical_samples():
    x = np.random.default_rng(73).random(500)
    assert mc.ks_two_sample(x, x).pvalue == pytest.approx(1.0)


def test_weighted_ks_unit_weights_match_plain():
    x = np.random.default_rng(74).random(2000)
    plain = mc.ks_vs_cdf(x, lambda v: np.clip(v, 0, 1))
    weighted = mc.weighted_ks(x, np.ones_like(x), lambda v: np.clip(v, 0, 1))
    assert weighted.statistic == pytest.approx(plain.statistic)


def test_weighted_ks_detects_reweighting():
    # weights 2u turn Uniform(0,1) into the density 2u
    rng = np.random.default_rng(75)
    u = rng.random(20_000)
    assert mc.weighted_ks(u, 2 * u, lambda v: np.clip(v, 0, 1) ** 2).passed
    assert not mc.weighted_ks(u, 2 * u, lambda v: np.clip(v, 0, 1)).passed


def test_chi_square_pools_small_cells():
    rep = mc.chi_square_gof(np.array([50, 30, 15, 4, 1]), np.array([0.5, 0.3, 0.15, 0.04, 0.01]))
    assert rep.sample_sizes["cells"] == 4
    assert rep.passed


def test_blocks_cover_range():
    bl = list(mc.blocks(2500, 1000))
    assert bl == [(0, 0, 1000), (1, 1000, 2000), (2, 2000, 2500)]


def test_report_line():
    rep = mc.TestReport("demo", 0.5, True, pvalue=0.3)
    assert rep.line().startswith("[PASS] demo")
    assert rep.to_dict()["passed"] is True
