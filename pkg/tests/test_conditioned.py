import math

import numpy as np
import pytest
from scipy import stats

from heightcond.conditioned import (InfeasibleError, finite_n_spine_cdf,
                                    first_passage_laplace, importance_estimate, left_right_contours,
                                    phi_inverse_psi, reach_probability_given_rho, rejection_condition,
                                    route_comparison, spine_draws, spine_generation_stats, spine_sample,
                                    weighted_paths)
from heightcond.model import Exponential, PointMass, psi, survival_exact, survival_sequence
from heightcond.pathsim import simulate_cpp_batch

SUB = Exponential(b=0.8, theta=1.0)


def test_rejection_first_generation_rate():
    rng = np.random.default_rng(41)
    x = 1.0
    res = rejection_condition(SUB, x, 1, 2000, rng)
    p = 1 - math.exp(-0.8 * x)
    assert res.predicted == pytest.approx(p)
    assert abs(res.rate - p) < 4 * res.stderr
    assert all(t.max_generation >= 1 for t in res.trees)


def test_rejection_infeasible():
    with pytest.raises(InfeasibleError):
        rejection_condition(SUB, 1.0, 80, 10, np.random.default_rng(0))


def test_reach_probability_at_time_zero():
    # at t = 0 the measure is the root alone
    for a in (1, 3, 6):
        assert reach_probability_given_rho([1.5], SUB, a) == pytest.approx(survival_exact(SUB, a, 1.5))
    assert reach_probability_given_rho([1.0, 0.5, 0.2], SUB, 2) == 1.0


def test_weights_have_mean_one():
    rng = np.random.default_rng(42)
    for t in (0.5, 2.0):
        _, w = weighted_paths(SUB, 1.0, t, 40_000, rng)
        assert abs(w.mean() - 1) < 4 * w.std() / math.sqrt(w.size)


def test_weighted_survival_is_one():
    rng = np.random.default_rng(43)
    ws = importance_estimate(SUB, 1.0, 1.0, lambda p: p.t0 is None, 40_000, rng)
    assert abs(ws.estimate - 1) < 4 * ws.stderr


def test_rb_and_plain_rejection_agree():
    rng = np.random.default_rng(44)
    rows = route_comparison(SUB, 1.0, 1.0, [1.0], [2, 3], 20_000, rng)
    for r in rows:
        se = math.hypot(r["rejection_se"], r["rejection_rb_se"])
        assert abs(r["rejection"] - r["rejection_rb"]) < 4 * se
        assert r["rejection_rb_se"] < r["rejection_se"]


def test_spine_draws_size_biased():
    rng = np.random.default_rng(45)
    U, D = spine_draws(SUB, 50_000, rng)
    assert stats.kstest(D, stats.gamma(2).cdf).pvalue > 0.01
    assert stats.kstest(U * D / D, "uniform").pvalue > 0.01
    # U D and (1 - U) D are independent Exp(1)
    assert stats.kstest(U * D, "expon").pvalue > 0.01


def test_spine_point_mass():
    rng = np.random.default_rng(46)
    _, D = spine_draws(PointMass(0.9, 1.0), 100, rng)
    assert np.all(D == 1.0)


def test_spine_tree_reaches_depth():
    rng = np.random.default_rng(47)
    for _ in range(20):
        sp = spine_sample(SUB, 5, rng)
        tr = sp.to_tree()
        tr.validate()
        assert tr.max_generation >= 4
        births = np.concatenate([[0.0], np.cumsum(sp.A[:-1])])
        for k in range(5):
            sel = (tr.generation == k) & np.isclose(tr.alpha, births[k])
            assert np.any(np.isclose(tr.lifetimes[sel], sp.T[k]))


def test_finite_n_law_is_normalized():
    cdf = finite_n_spine_cdf(SUB, 6, 1)
    assert cdf(0.0) == pytest.approx(0.0, abs=1e-15)
    assert cdf(60.0) == pytest.approx(1.0, abs=1e-12)


def test_finite_n_law_converges_to_size_biased():
    z = np.linspace(0, 30, 3001)
    gaps = [np.abs(finite_n_spine_cdf(SUB, n, 1)(z) - SUB.size_biased_cdf(z)).max() for n in (3, 5, 7, 12, 30)]
    assert all(np.diff(gaps) < 0)
    assert gaps[-1] < 1e-3


def test_rejection_matches_finite_n_law():
    rng = np.random.default_rng(48)
    n = 4
    res = rejection_condition(SUB, None, n, 4000, rng)
    life, frac, _ = spine_generation_stats(res.trees, n, 1)
    assert stats.kstest(life, finite_n_spine_cdf(SUB, n, 1)).pvalue > 0.01


def test_rejection_approaches_spine_with_depth():
    rng = np.random.default_rng(49)
    ds = []
    for n in (3, 5, 7):
        res = rejection_condition(SUB, None, n, 4000, rng)
        life, _, _ = spine_generation_stats(res.trees, n, 1)
        ds.append(stats.kstest(life, SUB.size_biased_cdf).statistic)
    assert ds[0] > ds[2]


def test_phi_inverts_psi():
    for q in (0.1, 1.0, 3.0):
        lam = phi_inverse_psi(SUB, q)
        assert psi(SUB, lam) == pytest.approx(q, rel=1e-12)


def test_first_passage_laplace_monte_carlo():
    rng = np.random.default_rng(50)
    x, q = 1.0, 0.5
    paths = simulate_cpp_batch(SUB, x, 40_000, rng, horizon=1e7)
    v = np.exp(-q * np.array([p.t0 for p in paths]))
    assert abs(v.mean() - first_passage_laplace(SUB, x, q)) < 4 * v.std() / math.sqrt(v.size)


def test_contour_segments():
    rng = np.random.default_rng(51)
    U = np.array([0.3, 0.6, 0.5])
    D = np.array([2.0, 1.0, 3.0])
    pair = left_right_contours(SUB, U, D, rng)
    lift = np.concatenate([[0.0], np.cumsum(U * D)])
    ends = np.cumsum(pair.eta)
    starts = np.concatenate([[0.0], ends[:-1]])
    for k in range(3):
        assert pair.up.value(starts[k]) == pytest.approx(lift[k] + D[k])
        # segment k runs down to the level where spine node k+1 was born
        assert pair.up.value(ends[k] - 1e-12) == pytest.approx(lift[k + 1], abs=1e-9)
    assert pair.down.value(0.0) == pytest.approx(0.0)


def test_contour_segment_durations_laplace():
    rng = np.random.default_rng(52)
    q, n = 0.7, 4000
    start = 1.2
    eta = np.array([left_right_contours(SUB, [0.5], [2 * start], rng).eta[0] for _ in range(n)])
    v = np.exp(-q * eta)
    assert abs(v.mean() - first_passage_laplace(SUB, start, q)) < 4 * v.std() / math.sqrt(n)


def test_survival_sequence_used_by_finite_law():
    q = survival_sequence(SUB, 6)
    assert q[0] == 1.0 and np.all(np.diff(q) < 0)
