import math

import numpy as np
import pytest

from heightcond.model import (BrownianModel, Exponential, InfiniteMassError, ModelError, PointMass, TableCDF,
                              Uniform, kolmogorov_limit, model_from_config, model_to_config, offspring_pk,
                              psi, psi_prime, survival_exact, survival_sequence, yaglom_constant)


def linear_fractional_survival(m, n):
    # exponential lifetimes give geometric offspring, whose survival is explicit
    if m == 1:
        return 1.0 / (n + 1)
    return m ** n * (1 - m) / (1 - m ** (n + 1))


def test_psi_exponential_closed_form():
    e = Exponential(b=0.8, theta=1.0)
    lam = np.array([0.0, 0.5, 1.0, 3.0])
    assert np.allclose(psi(e, lam), lam - 0.8 * lam / (1 + lam), rtol=1e-14)
    assert psi(e, 1.0) == pytest.approx(0.6, rel=1e-14)


def test_psi_prime_matches_finite_difference():
    for meas in (Exponential(0.8, 1.0), PointMass(1.0, 1.0), Uniform(1.5, 1.0)):
        for lam in (0.3, 1.0, 2.5):
            h = 1e-6
            fd = (psi(meas, lam + h) - psi(meas, lam - h)) / (2 * h)
            assert psi_prime(meas, lam) == pytest.approx(fd, rel=1e-6)


def test_point_mass_psi():
    pm = PointMass(b=1.0, z0=1.0)
    lam = np.linspace(0.1, 4, 7)
    assert np.allclose(psi(pm, lam), lam - (1 - np.exp(-lam)), rtol=1e-13)


def test_uniform_laplace_closed_form():
    u = Uniform(b=1.5, z_max=1.0)
    for lam in (1e-5, 0.2, 1.0, 5.0, -0.5):
        assert u.laplace(lam) == pytest.approx(-math.expm1(-lam) / lam, rel=1e-10)


def test_table_matches_uniform():
    t = TableCDF(b=1.5, grid=(0.0, 0.5, 1.0), cdf_values=(0.0, 0.5, 1.0))
    u = Uniform(b=1.5, z_max=1.0)
    for lam in (0.01, 0.7, 3.0):
        assert t.laplace(lam) == pytest.approx(u.laplace(lam), rel=1e-12)
    assert t.m == pytest.approx(0.75)


def test_offspring_geometric():
    e = Exponential(b=0.8, theta=1.0)
    p = 0.8 / 1.8
    for k in range(6):
        assert offspring_pk(e, k) == pytest.approx((1 - p) * p ** k, rel=1e-12)


def test_offspring_point_mass_is_poisson():
    from scipy import stats
    pm = PointMass(b=0.65, z0=1.0)
    for k in range(6):
        assert offspring_pk(pm, k) == pytest.approx(stats.poisson.pmf(k, 0.65), rel=1e-12)


@pytest.mark.parametrize("b", [0.5, 0.8, 1.0])
def test_survival_linear_fractional(b):
    e = Exponential(b=b, theta=1.0)
    q = survival_sequence(e, 40)
    exact = [linear_fractional_survival(b, n) for n in range(41)]
    assert np.allclose(q, exact, rtol=1e-12)


def test_survival_exact_first_generation():
    e = Exponential(b=0.8, theta=1.0)
    for x in (0.5, 2.0):
        assert survival_exact(e, 1, x) == pytest.approx(1 - math.exp(-0.8 * x), rel=1e-14)


def test_survival_exact_monotone():
    e = Exponential(b=0.8, theta=1.0)
    vals = [survival_exact(e, a, 1.0) for a in range(1, 10)]
    assert all(np.diff(vals) < 0)


def test_yaglom_exponential():
    res = yaglom_constant(Exponential(b=0.8, theta=1.0))
    assert res.value == pytest.approx(0.2, abs=1e-5)


def test_yaglom_rejects_critical():
    with pytest.raises(ModelError):
        yaglom_constant(Exponential(b=1.0, theta=1.0))


def test_kolmogorov_critical_exponential():
    value, target = kolmogorov_limit(Exponential(1.0, 1.0), 2000)
    assert target == pytest.approx(1.0)
    assert value == pytest.approx(2000 / 2001, rel=1e-10)


def test_kolmogorov_point_mass():
    value, target = kolmogorov_limit(PointMass(1.0, 1.0), 20000)
    assert target == pytest.approx(2.0)
    assert abs(value / target - 1) < 0.01


def test_config_round_trip():
    for meas in (Exponential(0.8, 1.0), PointMass(0.5, 2.0), Uniform(1.5, 1.0), BrownianModel(1.0, 0.5)):
        assert model_from_config(model_to_config(meas)) == meas


def test_config_rejects_unknown_fields():
    with pytest.raises(ModelError):
        model_from_config({"lifespan": {"kind": "exponential", "b": 1, "theta": 1, "mu": 2}})
    with pytest.raises(ModelError):
        model_from_config({"lifespan": {"kind": "gamma", "b": 1}})
    with pytest.raises(ModelError):
        model_from_config({"lifespan": {"kind": "exponential", "b": 1}})


def test_infinite_mass_is_rejected():
    with pytest.raises(InfiniteMassError):
        model_from_config({"lifespan": {"kind": "exponential", "b": "inf", "theta": 1}})


def test_invalid_parameters():
    with pytest.raises(ModelError):
        Exponential(b=-1.0, theta=1.0)
    with pytest.raises(ModelError):
        Exponential(b=2.0, theta=1.0)


def test_sampling_moments():
    rng = np.random.default_rng(1)
    e = Exponential(b=0.8, theta=2.0)
    z = e.sample(rng, 200_000)
    assert abs(z.mean() - 0.5) < 4 * 0.5 / math.sqrt(z.size)
    zb = e.sample_size_biased(rng, 200_000)
    # size-biased exponential is Gamma(2, θ) with mean 2/θ
    assert abs(zb.mean() - 1.0) < 4 * math.sqrt(2) / 2 / math.sqrt(zb.size)
