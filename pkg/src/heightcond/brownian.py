"""Brownian case ψ(λ) = αλ + βλ²: Euler paths, height (X - I)/β, Kennedy martingale.

Each step samples the exact minimum of the Brownian bridge between grid
values, so absorption at 0 and the running infimum are exact in law at grid
times; only the height supremum inside a step is approximated (bridge
maximum against the infimum at the start of the step).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import integrate, optimize, stats

from . import mc
from .model import BrownianModel, ModelError


class BrownianError(ModelError):
    pass


@dataclass(eq=False)
class EulerPath:
    dt: float
    values: np.ndarray
    infimum: np.ndarray
    absorbed_index: Optional[int]
    beta: float = 1.0

    @property
    def absorbed(self) -> bool:
        return self.absorbed_index is not None

    def height(self, k: int) -> float:
        if self.absorbed_index is not None and k >= self.absorbed_index:
            raise BrownianError("height is undefined after absorption")
        return float((self.values[k] - self.infimum[k]) / self.beta)


def _bridge_min(x, xn, s2, u):
    return 0.5 * (x + xn - np.sqrt((x - xn) ** 2 - 2 * s2 * np.log(u)))


def _bridge_max(x, xn, s2, u):
    return 0.5 * (x + xn + np.sqrt((x - xn) ** 2 - 2 * s2 * np.log(u)))


def simulate_bm(model: BrownianModel, x: float, dt: float, horizon: float, rng: np.random.Generator,
                bridge: bool = True) -> EulerPath:
    """Single path on the grid k*dt up to ``horizon``, frozen at 0 after absorption."""
    if not x > 0 or not dt > 0:
        raise ModelError("x and dt must be positive")
    n = int(math.ceil(horizon / dt))
    s2 = 2 * model.beta * dt
    z = rng.standard_normal(n)
    u = rng.random(n)
    vals = np.empty(n + 1)
    inf = np.empty(n + 1)
    vals[0] = inf[0] = x
    absorbed = None
    xv, iv = x, x
    for k in range(n):
        xn = xv - model.alpha * dt + math.sqrt(s2) * z[k]
        low = _bridge_min(xv, xn, s2, u[k]) if bridge else xn
        iv = min(iv, low)
        if iv <= 0:
            absorbed = k + 1
            vals[k + 1:] = 0.0
            inf[k + 1:] = 0.0
            break
        xv = xn
        vals[k + 1] = xv
        inf[k + 1] = iv
    return EulerPath(dt, vals, inf, absorbed, model.beta)


@dataclass
class GridObservations:
    """X, I and absorption flags of n paths at a list of times."""

    times: np.ndarray
    X: np.ndarray  # (n_times, n)
    I: np.ndarray
    absorbed: np.ndarray


def observe_bm(model: BrownianModel, x: float, dt: float, times, n: int, rng: np.random.Generator,
               bridge: bool = True, drift: Optional[float] = None) -> GridObservations:
    """Simulate n paths and record (X, I, absorbed) at the grid points ``times``.

    ``drift`` overrides the model drift -α (used for tilted proposals).
    """
    times = np.asarray(times, dtype=float)
    steps = np.rint(times / dt).astype(np.int64)
    if np.any(np.abs(steps * dt - times) > 1e-9 * np.maximum(1, times)):
        raise BrownianError("observation times must be multiples of dt")
    s = math.sqrt(2 * model.beta * dt)
    s2 = s * s
    drift = (model.alpha if drift is None else -drift) * dt
    X = np.zeros((times.size, n))
    I = np.zeros((times.size, n))
    dead = np.ones((times.size, n), dtype=bool)
    idx = np.arange(n)
    xv = np.full(n, float(x))
    iv = xv.copy()
    obs = {int(k): j for j, k in enumerate(steps)}
    if 0 in obs:
        j = obs[0]
        X[j], I[j], dead[j] = xv, iv, False
    for k in range(1, int(steps.max()) + 1):
        if idx.size == 0:
            break
        xn = xv - drift + s * rng.standard_normal(idx.size)
        if bridge:
            low = _bridge_min(xv, xn, s2, rng.random(idx.size))
        else:
            low = xn
        iv = np.minimum(iv, low)
        live = iv > 0
        idx, xv, iv = idx[live], xn[live], iv[live]
        j = obs.get(k)
        if j is not None:
            X[j, idx] = xv
            I[j, idx] = iv
            dead[j, idx] = False
    return GridObservations(times, X, I, dead)


def max_height_bm(model: BrownianModel, x: float, dt: float, a_max: float, n: int,
                  rng: np.random.Generator, max_time: float = 1e4, bridge: bool = True):
    """sup of (X - I)/β before absorption, capped at a_max; runs until every path is decided.

    Returns (sup_height, undecided) arrays.
    """
    s = math.sqrt(2 * model.beta * dt)
    s2 = s * s
    drift = model.alpha * dt
    beta = model.beta
    best = np.zeros(n)
    undecided = np.zeros(n, dtype=bool)
    idx = np.arange(n)
    xv = np.full(n, float(x))
    iv = xv.copy()
    hv = np.zeros(n)
    k = 0
    max_steps = int(max_time / dt)
    while idx.size:
        k += 1
        xn = xv - drift + s * rng.standard_normal(idx.size)
        if bridge:
            hi = _bridge_max(xv, xn, s2, rng.random(idx.size))
            low = _bridge_min(xv, xn, s2, rng.random(idx.size))
        else:
            hi = low = xn
        hv = np.maximum(hv, (hi - iv) / beta)
        iv = np.minimum(iv, low)
        done = (hv >= a_max) | (iv <= 0)
        if k >= max_steps:
            undecided[idx[~done]] = True
            done[:] = True
        if np.any(done):
            best[idx[done]] = np.minimum(hv[done], a_max)
            keep = ~done
            idx, xv, iv, hv = idx[keep], xn[keep], iv[keep], hv[keep]
        else:
            xv = xn
    return best, undecided


# --- closed forms ----------------------------------------------------------------

def height_bm(X, I, beta: float):
    return (np.asarray(X) - np.asarray(I)) / beta


def kennedy_M(model: BrownianModel, X, I, absorbed=None):
    """I + (β/α)(e^{(α/β)(X - I)} - 1), or X when α = 0; 0 after absorption."""
    X = np.asarray(X, dtype=float)
    I = np.asarray(I, dtype=float)
    if model.alpha == 0:
        val = X.copy()
    else:
        r = model.alpha / model.beta
        val = I + np.expm1(r * (X - I)) / r
    if absorbed is not None:
        val = np.where(absorbed, 0.0, val)
    return val


def psi_bm(model: BrownianModel, lam):
    lam = np.asarray(lam, dtype=float)
    return model.alpha * lam + model.beta * lam * lam


def phi(model: BrownianModel, t: float) -> float:
    """∫_t^∞ dλ/ψ(λ) by adaptive quadrature, after substituting λ = t/u."""
    if not t > 0:
        raise ModelError("t must be positive")

    def integrand(u):
        if u == 0:
            return 1.0 / (model.beta * t)
        return t / (u * u * float(psi_bm(model, t / u)))

    val, _ = integrate.quad(integrand, 0.0, 1.0, epsabs=0, epsrel=1e-13, limit=200)
    return val


def v_of_a(model: BrownianModel, a) -> float:
    """Inverse of φ: α/(β(e^{αa} - 1)), or 1/(βa) when α = 0."""
    a = np.asarray(a, dtype=float)
    if np.any(a <= 0):
        raise ModelError("a must be positive")
    if model.alpha == 0:
        out = 1.0 / (model.beta * a)
    else:
        out = model.alpha / (model.beta * np.expm1(model.alpha * a))
    return float(out) if out.ndim == 0 else out


def v_numeric(model: BrownianModel, a: float) -> float:
    """v(a) by root-finding on the quadrature φ; independent check of the closed form."""
    lo, hi = 1.0, 1.0
    while phi(model, hi) > a:
        hi *= 2
    while phi(model, lo) < a:
        lo /= 2
    return float(optimize.brentq(lambda v: phi(model, v) - a, lo, hi, xtol=1e-15, rtol=1e-14))


def absorption_cdf(model: BrownianModel, x, t: float):
    """P_x(T0 <= t): first passage of a drifted Brownian motion below 0."""
    x = np.asarray(x, dtype=float)
    sd = math.sqrt(2 * model.beta * t)
    at = model.alpha * t
    with np.errstate(over="ignore", invalid="ignore"):
        far = np.exp(model.alpha * x / model.beta) * stats.norm.cdf((-x - at) / sd)
    return stats.norm.cdf((-x + at) / sd) + np.nan_to_num(far)


def minimum_cdf(model: BrownianModel, x: float, t: float, y):
    """P*_x(I_t <= y) = (y/x) P_x(T_y <= t); tends to y/x as t grows."""
    y = np.clip(np.asarray(y, dtype=float), 0.0, x)
    return y / x * absorption_cdf(model, x - y, t)


def survival_target(model: BrownianModel, x: float, a: float) -> float:
    return float(-np.expm1(-x * v_of_a(model, a)))


# --- experiments --------------------------------------------------------------------

def survival_check(model: BrownianModel, x: float, a_values, dts, n: int, root_seed: int,
                   block: int = 10_000) -> dict:
    """P_x(sup H >= a before T0) against 1 - e^{-x v(a)} along a dt refinement."""
    a_values = np.asarray(a_values, dtype=float)
    rows = []
    for j, dt in enumerate(dts):
        best = []
        for b, lo, hi in mc.blocks(n, block):
            rng = mc.seed_stream(root_seed, 1000 * j + b)
            h, und = max_height_bm(model, x, dt, float(a_values.max()), hi - lo, rng)
            if np.any(und):
                raise BrownianError("undecided paths; increase max_time")
            best.append(h)
        h = np.concatenate(best)
        for a in a_values:
            hit = (h >= a).astype(float)
            est = mc.Estimator.from_samples(hit)
            rows.append({"dt": dt, "a": float(a), "estimate": est.mean, "stderr": est.stderr,
                         "target": survival_target(model, x, a)})
    return {"rows": rows, "n": n, "alpha": model.alpha, "beta": model.beta, "x": x}


def kennedy_check(model: BrownianModel, x: float, times, dt: float, n: int, root_seed: int,
                  block: int = 20_000, bridge: bool = True):
    """Samples of M_{t∧T0} at each time, one row per time."""
    parts = []
    for b, lo, hi in mc.blocks(n, block):
        obs = observe_bm(model, x, dt, times, hi - lo, mc.seed_stream(root_seed, b), bridge=bridge)
        parts.append(kennedy_M(model, obs.X, obs.I, obs.absorbed))
    return np.concatenate(parts, axis=1)


def minimum_decomposition_check(model: BrownianModel, x: float, t: float, dt: float, n: int,
                                root_seed: int, block: int = 100_000, proposal: str = "tilted",
                                target: str = "uniform") -> dict:
    """Law of I_t under P*_x (weights M_t/x) against Uniform(0, x).

    With ``proposal="tilted"`` paths are drawn with drift +α instead of -α and
    the weight picks up the exact likelihood ratio e^{-(α/β)(X_t - x)}, which
    keeps the weights bounded. ``proposal="plain"`` samples under P_x directly;
    its effective sample size collapses as t grows. ``target="exact"`` tests
    against the finite-t law instead of its uniform limit.
    """
    if model.alpha <= 0:
        raise ModelError("the minimum only stabilizes with a positive drift parameter")
    if proposal not in ("tilted", "plain"):
        raise ModelError("proposal must be 'tilted' or 'plain'")
    if target not in ("uniform", "exact"):
        raise ModelError("target must be 'uniform' or 'exact'")
    r = model.alpha / model.beta
    Is, Ws, Hs = [], [], []
    for b, lo, hi in mc.blocks(n, block):
        rng = mc.seed_stream(root_seed, b)
        if proposal == "tilted":
            obs = observe_bm(model, x, dt, [t], hi - lo, rng, drift=model.alpha)
        else:
            obs = observe_bm(model, x, dt, [t], hi - lo, rng)
        live = ~obs.absorbed[0]
        X, I = obs.X[0][live], obs.I[0][live]
        w = kennedy_M(model, X, I) / x
        if proposal == "tilted":
            w = w * np.exp(-r * (X - x))
        Is.append(I)
        Hs.append(X - I)
        Ws.append(w)
    I = np.concatenate(Is)
    w = np.concatenate(Ws)
    post = np.concatenate(Hs)
    cfg = {"model": model.to_config(), "x": x, "t": t, "dt": dt, "n": n, "proposal": proposal}

    def unif(v):
        return np.clip(np.asarray(v) / x, 0, 1)

    if target == "exact":
        weighted = mc.weighted_ks(I, w, lambda v: minimum_cdf(model, x, t, v), name="weighted I_t vs exact law",
                                  seed=root_seed, config=cfg)
    else:
        weighted = mc.weighted_ks(I, w, unif, name="weighted I_t vs uniform", seed=root_seed, config=cfg)
    grid = np.linspace(0, x, 2001)
    # unweighted control: an independent P_x sample, absorbed paths have I_t = 0
    ctrl = observe_bm(model, x, dt, [t], min(n, block), mc.seed_stream(root_seed, 10**6))
    I_ctrl = np.where(ctrl.absorbed[0], 0.0, ctrl.I[0])
    control = mc.ks_vs_cdf(I_ctrl, unif, name="unweighted I_t vs uniform", seed=root_seed, config=cfg)
    # weights over all n draws (zero on absorbed ones) for plain means
    pad = np.zeros(n - I.size)
    w_all = np.concatenate([w, pad])
    half = mc.Estimator.from_samples(np.concatenate([(I <= x / 2).astype(float), pad]) * w_all)
    mean_w = mc.Estimator.from_samples(w_all)
    wn = w / w.sum()
    mi, mp = np.dot(wn, I), np.dot(wn, post)
    cov = np.dot(wn, (I - mi) * (post - mp))
    corr = cov / math.sqrt(np.dot(wn, (I - mi) ** 2) * np.dot(wn, (post - mp) ** 2))
    n_eff = w.sum() ** 2 / np.dot(w, w)
    return {"weighted": weighted, "control": control,
            "p_half": half.mean, "p_half_stderr": half.stderr,
            "mean_weight": mean_w.mean, "mean_weight_stderr": mean_w.stderr,
            "weighted_mean_I": float(mi), "corr_I_post": float(corr), "corr_se": 1 / math.sqrt(n_eff),
            "n_eff": float(n_eff),
            "limit_gap": float(np.abs(minimum_cdf(model, x, t, grid) - grid / x).max())}
