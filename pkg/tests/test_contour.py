import numpy as np
import pytest

from heightcond.contour import (JccpPath, PathError, generator_residual, height, height_and_rho,
                                jccp_from_tree, martingale_M, tree_from_path)
from heightcond.model import Exponential, ModelError, PointMass
from heightcond.pathsim import simulate_cpp
from heightcond.tree import sample_forest, tree_from_lines

SUB = Exponential(b=0.8, theta=1.0)


def test_childless_tree_is_pure_drift():
    path = jccp_from_tree(tree_from_lines("root 0.0 2.0\n"))
    assert path.n_jumps == 0 and path.t0 == 2.0
    assert path.value(0.5) == pytest.approx(1.5)


def test_one_child_contour():
    tr = tree_from_lines("root 0.0 2.0\n1 1.0 4.0\n")
    path = jccp_from_tree(tr)
    assert np.allclose(path.times, [1.0]) and np.allclose(path.sizes, [3.0])
    assert path.t0 == pytest.approx(5.0)
    assert path.value(1.0) == pytest.approx(4.0)
    assert path.left_limit(1.0) == pytest.approx(1.0)


def test_youngest_child_visited_first():
    tr = tree_from_lines("root 0.0 2.0\n1 1.5 1.8\n2 0.5 1.2\n")
    path = jccp_from_tree(tr)
    # descend 0.5 to the youngest child, explore its 0.3, descend 1.0 to the next
    assert np.allclose(path.times, [0.5, 0.5 + 0.3 + 1.0])
    assert np.allclose(path.sizes, [0.3, 0.7])


def test_rho_single_jump_example():
    path = JccpPath(2.0, [1.0], [3.0])
    rho = height_and_rho(path, 1.5)
    assert rho.H == 1
    assert np.allclose(rho.masses, [1.0, 2.5])
    assert rho.total == pytest.approx(float(path.value(1.5)))


def test_martingale_example():
    path = JccpPath(2.0, [1.0], [3.0])
    assert martingale_M(path, 1.5, 0.8) == pytest.approx(1 + 2.5 / 0.8)
    assert martingale_M(path, 0.0, 0.8) == pytest.approx(2.0)
    assert martingale_M(path, 6.0, 0.8) == 0.0


def test_pure_drift_height_zero():
    rho = height_and_rho(JccpPath(3.0, [], []), 1.0)
    assert rho.H == 0 and np.allclose(rho.masses, [2.0])


def test_martingale_rejects_bad_m():
    path = JccpPath(2.0, [1.0], [3.0])
    with pytest.raises(ModelError):
        martingale_M(path, 1.0, 1.2)


def test_rho_after_absorption_raises():
    with pytest.raises(PathError):
        height_and_rho(JccpPath(2.0, [1.0], [3.0]), 5.0)


def test_invalid_paths():
    with pytest.raises(PathError):
        JccpPath(1.0, [2.0], [1.0])  # jump after hitting 0
    with pytest.raises(PathError):
        JccpPath(1.0, [0.5, 0.3], [1.0, 1.0])
    with pytest.raises(PathError):
        JccpPath(1.0, [0.5], [-1.0])


def test_round_trip_tree_path_tree():
    rng = np.random.default_rng(21)
    for tr in sample_forest(SUB, 2000, 1.0, rng):
        path = jccp_from_tree(tr)
        assert tree_from_path(path).same_as(tr, atol=1e-12)


def test_round_trip_path_tree_path():
    rng = np.random.default_rng(22)
    for _ in range(300):
        path = simulate_cpp(SUB, 1.0, rng, horizon=1e6)
        back = jccp_from_tree(tree_from_path(path))
        assert np.allclose(back.times, path.times, atol=1e-12)
        assert np.allclose(back.sizes, path.sizes, atol=1e-12)


def test_height_equals_generation():
    rng = np.random.default_rng(23)
    for tr in sample_forest(SUB, 300, 2.0, rng):
        path, sched = jccp_from_tree(tr, schedule=True)
        for t in rng.uniform(0, path.t0, 5):
            assert height(path, t) == tr.generation[sched.visited(tr, t)]


def test_mass_conservation():
    rng = np.random.default_rng(24)
    for _ in range(300):
        path = simulate_cpp(SUB, 2.0, rng, horizon=1e6)
        t = rng.uniform(0, path.t0)
        assert height_and_rho(path, t).total == pytest.approx(float(path.value(t)), abs=1e-10)


def grid_rho(path, t, dt):
    # future infimum s -> inf_{[s,t]} X on a grid; its jumps are the record masses
    s = np.arange(0, t, dt)
    vals = np.append(path.value(s), path.value(t))
    fut = np.minimum.accumulate(vals[::-1])[::-1]
    steps = np.diff(fut)
    return fut[0], steps[steps > 20 * dt]


def test_rho_matches_grid_oracle():
    rng = np.random.default_rng(25)
    dt = 1e-4
    checked = 0
    while checked < 40:
        path = simulate_cpp(SUB, 1.0, rng, horizon=1e6)
        if path.n_jumps == 0:
            continue
        t = rng.uniform(0, path.t0)
        rho = height_and_rho(path, t)
        if rho.H and rho.masses[1:].min() < 100 * dt:
            continue
        rho0, jumps = grid_rho(path, t, dt)
        assert rho.masses[0] == pytest.approx(rho0, abs=2 * dt)
        assert jumps.size == rho.H
        assert np.allclose(jumps, rho.masses[1:], atol=3 * dt)
        checked += 1


def test_generator_residual_vanishes_at_m():
    rng = np.random.default_rng(26)
    for meas in (SUB, PointMass(0.9, 1.0)):
        path = simulate_cpp(meas, 2.0, rng, horizon=1e6)
        nu = height_and_rho(path, path.t0 / 2)
        assert generator_residual(nu, meas) == pytest.approx(0.0, abs=1e-12)
        assert abs(generator_residual(nu, meas, m=meas.m * 0.9)) > 1e-3


def test_csv_round_trip():
    rng = np.random.default_rng(27)
    path = simulate_cpp(SUB, 1.5, rng, horizon=1e6)
    back = JccpPath.from_csv(path.to_csv())
    assert back.x0 == path.x0
    assert np.array_equal(back.times, path.times) and np.array_equal(back.sizes, path.sizes)
