import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from heightcond.model import Exponential, PointMass, survival_exact
from heightcond.tree import (IndeterminateError, TreeError, alive_at_generation, generation_stats, sample_forest,
                             sample_tree, tree_from_json, tree_from_lines, tree_from_records)

SUB = Exponential(b=0.8, theta=1.0)

TWO_KIDS = """root 0.0 2.0
1 1.5 1.8
2 0.5 1.2
"""


def test_childless_root():
    tr = tree_from_lines("root 0.0 1.5\n")
    gs = generation_stats(tr)
    assert list(gs.Z) == [1, 0]
    assert gs.J[0] == 1.5
    assert tr.max_generation == 0


def test_two_children_generation_stats():
    tr = tree_from_lines(TWO_KIDS)
    tr.validate()
    gs = generation_stats(tr)
    assert list(gs.Z) == [1, 2, 0]
    assert gs.J[1] == pytest.approx(0.3 + 0.7)
    # child 1 is the youngest: born last
    assert tr.alpha[tr.index_of((1,))] == 1.5


def test_labels_must_be_ordered_by_birth():
    bad = "root 0.0 2.0\n1 0.5 1.2\n2 1.5 1.8\n"
    with pytest.raises(TreeError):
        tree_from_lines(bad).validate()


def test_child_outside_parent_life():
    with pytest.raises(TreeError):
        tree_from_lines("root 0.0 1.0\n1 1.5 2.0\n").validate()


def test_missing_parent():
    with pytest.raises(TreeError):
        tree_from_records([((), 0.0, 1.0), ((1, 1), 0.5, 0.7)])


def test_lines_and_json_round_trip():
    rng = np.random.default_rng(3)
    for tr in sample_forest(SUB, 200, 1.0, rng):
        assert tree_from_lines(tr.to_lines()).same_as(tr, atol=0)
        assert tree_from_json(tr.to_json()).same_as(tr, atol=0)


def test_root_lifetime_is_x():
    rng = np.random.default_rng(4)
    tr = sample_tree(SUB, 2.5, rng)
    assert tr.x == 2.5 and tr.alpha[0] == 0.0


def test_sampled_trees_are_valid():
    rng = np.random.default_rng(5)
    for tr in sample_forest(SUB, 500, None, rng):
        tr.validate()


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), x=st.floats(0.1, 5.0), b=st.floats(0.2, 1.0))
def test_tree_invariants(seed, x, b):
    tr = sample_tree(Exponential(b=b, theta=1.0), x, np.random.default_rng(seed))
    tr.validate()
    for i in range(tr.n_nodes):
        kids = tr.children(i)
        a = tr.alpha[list(kids)]
        assert np.all((a > tr.alpha[i]) & (a < tr.omega[i]))
        assert np.all(np.diff(a) <= 0)  # youngest first
        assert np.all(tr.generation[list(kids)] == tr.generation[i] + 1)


def test_first_generation_is_poisson():
    # given the root lifetime x, Z_1 ~ Poisson(b x)
    rng = np.random.default_rng(6)
    x = 1.5
    forest = sample_forest(SUB, 20_000, x, rng, max_generation=1)
    z1 = np.array([generation_stats(t).Z[1] if t.complete_generations >= 1 else 0 for t in forest])
    kmax = 8
    obs = np.bincount(np.minimum(z1, kmax), minlength=kmax + 1)
    probs = stats.poisson.pmf(np.arange(kmax + 1), 0.8 * x)
    probs[-1] = stats.poisson.sf(kmax - 1, 0.8 * x)
    chi = stats.chisquare(obs, probs * obs.sum())
    assert chi.pvalue > 0.01


def test_first_generation_length_mean():
    # E[J_1] = b x E[lifetime] = m x
    rng = np.random.default_rng(7)
    x = 2.0
    forest = sample_forest(SUB, 40_000, x, rng, max_generation=1)
    j1 = np.array([t.lifetimes[t.generation == 1].sum() for t in forest])
    assert abs(j1.mean() - 0.8 * x) < 3 * j1.std() / math.sqrt(j1.size)


def test_alive_frequency_matches_survival():
    rng = np.random.default_rng(8)
    a, x, n = 4, 1.0, 40_000
    forest = sample_forest(SUB, n, x, rng, max_generation=a)
    hits = np.array([alive_at_generation(t, a) for t in forest])
    p = survival_exact(SUB, a, x)
    assert abs(hits.mean() - p) < 4 * math.sqrt(p * (1 - p) / n)


def test_point_mass_lifetimes():
    rng = np.random.default_rng(9)
    tr = sample_tree(PointMass(1.0, 1.0), 1.0, rng, max_generation=20)
    assert np.allclose(tr.lifetimes[1:], 1.0)


def test_truncation_is_indeterminate():
    rng = np.random.default_rng(10)
    forest = sample_forest(Exponential(1.0, 1.0), 500, 5.0, rng, max_generation=3)
    cut = [t for t in forest if t.truncated]
    assert cut
    with pytest.raises(IndeterminateError):
        alive_at_generation(cut[0], 4)
    assert alive_at_generation(cut[0], 3)


def test_node_cap_marks_truncation():
    rng = np.random.default_rng(11)
    forest = sample_forest(Exponential(1.0, 1.0), 50, 50.0, rng, max_nodes=100)
    assert any(t.truncated for t in forest)
