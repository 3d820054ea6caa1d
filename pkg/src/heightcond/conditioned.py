"""Trees and paths conditioned to reach large heights.

Three routes to the same law: plain rejection on {sup H >= a}, reweighting
by the height martingale M/x, and the size-biased spine construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import optimize

from . import mc
from .contour import JccpPath, martingale_M
from .model import Exponential, LifespanMeasure, ModelError, PointMass, psi, survival_exact, survival_sequence
from .pathsim import simulate_cpp_batch
from .tree import (DEFAULT_MAX_NODES, ChronologicalTree, sample_forest,
                   tree_from_records)

ACCEPTANCE_FLOOR = 1e-6


class InfeasibleError(RuntimeError):
    def __init__(self, message, estimate=None):
        super().__init__(message)
        self.estimate = estimate


# --- rejection ----------------------------------------------------------------

@dataclass
class RejectionResult:
    trees: list
    trials: int
    predicted: float

    @property
    def accepted(self) -> int:
        return len(self.trees)

    @property
    def rate(self) -> float:
        return self.accepted / self.trials if self.trials else float("nan")

    @property
    def stderr(self) -> float:
        p = self.predicted
        return math.sqrt(p * (1 - p) / self.trials) if self.trials else float("nan")


def reaches(tree: ChronologicalTree, a: int) -> bool:
    return tree.max_generation >= a


def rejection_condition(measure: LifespanMeasure, x, a: int, n_accept: int, rng: np.random.Generator,
                        batch: int = 10_000, max_trials: Optional[int] = None,
                        max_nodes: int = DEFAULT_MAX_NODES) -> RejectionResult:
    """Trees from P_x (or P if x is None) kept when generation a is populated.

    Only generations up to a matter for acceptance, so sampling stops there.
    """
    if a < 1:
        raise ModelError("a must be at least 1")
    if x is None:
        predicted = float(survival_sequence(measure, a)[a])
    else:
        predicted = survival_exact(measure, a, x)
    if predicted < ACCEPTANCE_FLOOR:
        raise InfeasibleError(f"predicted acceptance {predicted:.3g} below floor {ACCEPTANCE_FLOOR}",
                              estimate=predicted)
    if max_trials is None:
        max_trials = int(50 * n_accept / predicted) + batch
    kept, trials = [], 0
    while len(kept) < n_accept:
        if trials >= max_trials:
            raise InfeasibleError(f"only {len(kept)} acceptances in {trials} trials",
                                  estimate=len(kept) / trials)
        forest = sample_forest(measure, batch, x, rng, max_nodes=max_nodes, max_generation=a)
        for tr in forest:
            trials += 1
            if tr.max_generation >= a:
                kept.append(tr)
                if len(kept) == n_accept:
                    break
    return RejectionResult(kept, trials, predicted)


def reach_probability_given_rho(rho_masses, measure: LifespanMeasure, a: int, q=None) -> float:
    """P(sup H >= a | F_t) on {t < T0, sup_{s<=t} H_s < a}.

    The mass ρ_i is the residual life of an individual of generation i; each of
    its future children independently founds a line reaching generation a with
    probability q_{a-i-1}.
    """
    if q is None:
        q = survival_sequence(measure, a)
    rho = np.asarray(rho_masses, dtype=float)
    i = np.arange(rho.size)
    if np.any(i >= a):
        return 1.0
    return float(-np.expm1(-measure.b * np.dot(rho, q[a - i - 1])))


# --- importance weighting -----------------------------------------------------------

@dataclass
class WeightedSample:
    values: np.ndarray
    weights: np.ndarray  # M_{t∧T0} / x

    def __post_init__(self):
        if np.any(self.weights < 0):
            raise ValueError("weights must be nonnegative")

    @property
    def estimator(self) -> mc.Estimator:
        return mc.Estimator.from_samples(self.values * self.weights)

    @property
    def estimate(self) -> float:
        return self.estimator.mean

    @property
    def stderr(self) -> float:
        return self.estimator.stderr


def weighted_paths(measure: LifespanMeasure, x: float, t: float, n: int, rng: np.random.Generator):
    """Paths observed on [0, t] and their weights M_{t∧T0}/x."""
    paths = simulate_cpp_batch(measure, x, n, rng, horizon=t)
    m = measure.m
    w = np.array([martingale_M(p, t, m) for p in paths]) / x
    return paths, w


def importance_estimate(measure: LifespanMeasure, x: float, t: float, f: Callable, n: int,
                        rng: np.random.Generator) -> WeightedSample:
    """P*_x-expectation of f(path) where f only looks at the path on [0, t]."""
    paths, w = weighted_paths(measure, x, t, n, rng)
    vals = np.array([f(p) for p in paths], dtype=float)
    return WeightedSample(vals, w)


# --- spine ------------------------------------------------------------------------

@dataclass
class SpineTree:
    """Spine individuals 0..n-1 with lifetimes D_k = A_k + R_k and grafted subtrees.

    Spine individual k+1 is born at age A_k of spine individual k. ``ages[k]``
    holds the ages at which k bears non-spine children and ``grafts[k]`` the
    subtrees they found.
    """

    A: np.ndarray
    R: np.ndarray
    ages: list
    grafts: list
    cap_hit: bool = False

    @property
    def depth(self) -> int:
        return len(self.A)

    @property
    def T(self) -> np.ndarray:
        return self.A + self.R

    def to_tree(self) -> ChronologicalTree:
        """The spine and its grafts as one (truncated) chronological tree."""
        records = []
        birth = 0.0
        label = ()
        for k in range(self.depth):
            T = float(self.T[k])
            records.append((label, birth, birth + T))
            kids = [(birth + float(self.A[k]), None)] if k + 1 < self.depth else []
            kids += [(birth + float(u), g) for u, g in zip(self.ages[k], self.grafts[k])]
            kids.sort(key=lambda c: -c[0])
            spine_child = None
            for j, (lvl, g) in enumerate(kids, start=1):
                lab = label + (j,)
                if g is None:
                    spine_child = lab
                    continue
                for sub_lab, a, w in zip(g.labels(), g.alpha, g.omega):
                    records.append((lab + sub_lab, lvl + float(a), lvl + float(w)))
            if spine_child is None:
                break
            label = spine_child
            birth = birth + float(self.A[k])
        return tree_from_records(records, truncated=True, complete_generations=self.depth - 1)


def spine_draws(measure: LifespanMeasure, n: int, rng: np.random.Generator, size=None):
    """(U, D): uniforms and size-biased lifetimes zΛ(dz)/m for n spine nodes."""
    shape = (n,) if size is None else (size, n)
    D = np.asarray(measure.sample_size_biased(rng, shape), dtype=float)
    U = rng.random(shape)
    return U, D


def spine_sample(measure: LifespanMeasure, n: int, rng: np.random.Generator,
                 max_nodes: int = DEFAULT_MAX_NODES, graft_height: Optional[int] = None) -> SpineTree:
    """Spine of depth n; grafts are i.i.d. trees under P born at rate b on each spine life.

    Grafts hanging off spine node k are cut at generation ``graft_height``
    (default n) of the whole tree, which leaves generations below it exact.
    """
    if n < 1:
        raise ModelError("depth must be at least 1")
    if graft_height is None:
        graft_height = n
    U, D = spine_draws(measure, n, rng)
    A, R = U * D, (1 - U) * D
    ages, grafts = [], []
    cap_hit = False
    for k in range(n):
        cnt = rng.poisson(measure.b * D[k])
        u = np.sort(rng.random(cnt) * D[k])
        room = graft_height - k - 1
        if room < 0 or cnt == 0:
            ages.append(np.empty(0))
            grafts.append([])
            continue
        forest = sample_forest(measure, cnt, None, rng, max_nodes=max_nodes, max_generation=room)
        cap_hit |= any(t.truncated and t.complete_generations < room for t in forest)
        ages.append(u)
        grafts.append(forest)
    return SpineTree(A, R, ages, grafts, cap_hit)


def distinguished_lineage(tree: ChronologicalTree, n: int) -> np.ndarray:
    """Node indices of the first lineage (contour order) reaching generation n."""
    h = tree.subtree_height()
    if h[0] < n:
        raise ValueError(f"tree does not reach generation {n}")
    path = [0]
    i = 0
    for _ in range(n):
        for c in tree.children(i):  # youngest first
            if h[c] >= n:
                i = c
                break
        path.append(i)
    return np.array(path)


def spine_generation_stats(trees, n: int, k: int):
    """Lifetime, birth fraction A/T and non-spine offspring count of spine node k."""
    life, frac, others = [], [], []
    for tr in trees:
        lin = distinguished_lineage(tr, n)
        v, c = lin[k], lin[k + 1]
        T = tr.omega[v] - tr.alpha[v]
        life.append(T)
        frac.append((tr.alpha[c] - tr.alpha[v]) / T)
        others.append(tr.n_children[v] - 1)
    return np.array(life), np.array(frac), np.array(others)


def finite_n_spine_cdf(measure: LifespanMeasure, n: int, k: int) -> Callable:
    """Exact CDF of the spine lifetime at generation k among trees reaching generation n.

    The law is proportional to (1 - exp(-b z q_{n-k-1})) Λ(dz): the spine node is
    the youngest child whose line survives n-k more generations.
    """
    q = survival_sequence(measure, n)[n - k - 1]
    c = measure.b * q
    if isinstance(measure, Exponential):
        th = measure.theta
        norm = c / (th + c)

        def cdf(z):
            z = np.maximum(np.asarray(z, dtype=float), 0.0)
            return (-np.expm1(-th * z) - th / (th + c) * -np.expm1(-(th + c) * z)) / norm
        return cdf
    if isinstance(measure, PointMass):
        return measure.cdf
    raise NotImplementedError("closed form only for exponential and point-mass lifetimes")


def _poisson_mixture_pmf(measure: LifespanMeasure, kmax: int, rng: np.random.Generator, n_mc: int = 10**6):
    from scipy import stats
    T = np.asarray(measure.sample_size_biased(rng, n_mc), dtype=float)
    ks = np.arange(kmax + 1)
    return stats.poisson.pmf(ks[None, :], measure.b * T[:, None]).mean(axis=0) if n_mc * kmax < 5e7 else \
        np.array([stats.poisson.pmf(j, measure.b * T).mean() for j in ks])


def spine_vs_rejection(measure: LifespanMeasure, n: int, k: int, n_accept: int, rng: np.random.Generator,
                       seed=None) -> dict:
    """Rejection-conditioned trees at generation n against the spine laws at generation k."""
    if not 0 <= k < n:
        raise ModelError("need 0 <= k < n")
    rej = rejection_condition(measure, None, n, n_accept, rng)
    life, frac, others = spine_generation_stats(rej.trees, n, k)
    cfg = {"model": measure.to_config(), "n": n, "k": k, "n_accept": n_accept}
    reports = {
        "lifetime": mc.ks_vs_cdf(life, measure.size_biased_cdf, name="spine lifetime vs size-biased law",
                                 seed=seed, config=cfg),
        "birth_fraction": mc.ks_vs_cdf(frac, lambda u: np.clip(u, 0, 1), name="A/T vs uniform",
                                       seed=seed, config=cfg),
    }
    kmax = int(others.max()) if others.size else 0
    pmf = _poisson_mixture_pmf(measure, kmax, rng)
    reports["offspring"] = mc.chi_square_gof(np.bincount(others, minlength=kmax + 1), pmf,
                                             name="non-spine offspring vs mixed Poisson(bT)",
                                             seed=seed, config=cfg)
    # negative control: a generation-k individual of an unconditioned tree
    ctrl = []
    while len(ctrl) < n_accept:
        for tr in sample_forest(measure, 10_000, None, rng, max_generation=k):
            sel = np.flatnonzero(tr.generation == k)
            if sel.size:
                ctrl.append(tr.omega[sel[0]] - tr.alpha[sel[0]])
    ctrl = np.array(ctrl[:n_accept])
    reports["negative_control"] = mc.ks_vs_cdf(ctrl, measure.size_biased_cdf,
                                               name="unconditioned lifetime vs size-biased law",
                                               seed=seed, config=cfg)
    try:
        exact = finite_n_spine_cdf(measure, n, k)
        reports["finite_n_lifetime"] = mc.ks_vs_cdf(life, exact, name="spine lifetime vs exact finite-n law",
                                                    seed=seed, config=cfg)
    except NotImplementedError:
        pass
    return {"reports": reports, "trials": rej.trials, "accepted": rej.accepted,
            "lifetimes": life, "fractions": frac, "offspring": others}


# --- left and right contours of the spine -------------------------------------------

@dataclass
class Polyline:
    """Piecewise linear path through (t, y) vertices; repeated t encodes a jump."""

    t: np.ndarray
    y: np.ndarray

    def value(self, s):
        s = np.asarray(s, dtype=float)
        # right-continuous: take the last vertex at or before s and interpolate forward
        k = np.clip(np.searchsorted(self.t, s, side="right") - 1, 0, len(self.t) - 2)
        t0, t1 = self.t[k], self.t[k + 1]
        y0, y1 = self.y[k], self.y[k + 1]
        span = np.where(t1 > t0, t1 - t0, 1.0)
        return np.where(t1 > t0, y0 + (s - t0) / span * (y1 - y0), y1)


def _path_vertices(path: JccpPath, reverse: bool = False):
    """(t, y) vertices of a killed path; with reverse, of s -> X_{(T0-s)-}."""
    pre = path.pre_jump
    post = pre + path.sizes
    t = np.concatenate([[0.0], np.repeat(path.times, 2), [path.t0]])
    y = np.concatenate([[path.x0], np.column_stack([pre, post]).ravel(), [0.0]])
    if reverse:
        t = path.t0 - t[::-1]
        y = y[::-1]
    return t, y


@dataclass
class ContourPair:
    up: Polyline
    down: Polyline
    eta: np.ndarray  # durations of the up segments
    eta_down: np.ndarray  # durations of the down segments
    U: np.ndarray
    D: np.ndarray


def left_right_contours(measure: LifespanMeasure, U, D, rng: np.random.Generator,
                        horizon: float = 1e7) -> ContourPair:
    """Right contour X^↑ and left contour X^↓ of the spine from draws (U_k, D_k).

    Segment k of X^↑ is a path started at D_k and killed at level U_k D_k, lifted
    by U_0 D_0 + ... + U_{k-1} D_{k-1}. Segment k of X^↓ is a path started at
    U_k D_k, run to 0 and read backwards, lifted by the same amount.
    """
    U = np.asarray(U, dtype=float)
    D = np.asarray(D, dtype=float)
    K = U.size
    if K < 1:
        raise ModelError("need at least one segment")
    lift = np.concatenate([[0.0], np.cumsum(U * D)])
    ups = simulate_cpp_batch(measure, (1 - U) * D, K, rng, horizon)
    downs = simulate_cpp_batch(measure, U * D, K, rng, horizon)
    if any(p.t0 is None for p in ups + downs):
        raise ModelError("a contour segment was not absorbed before the horizon")
    ut, uy, dt_, dy = [], [], [], []
    t_up = t_dn = 0.0
    for k in range(K):
        t, y = _path_vertices(ups[k])
        ut.append(t + t_up)
        uy.append(y + lift[k] + U[k] * D[k])
        t_up += ups[k].t0
        t, y = _path_vertices(downs[k], reverse=True)
        dt_.append(t + t_dn)
        dy.append(y + lift[k])
        t_dn += downs[k].t0
    return ContourPair(Polyline(np.concatenate(ut), np.concatenate(uy)),
                       Polyline(np.concatenate(dt_), np.concatenate(dy)),
                       np.array([p.t0 for p in ups]), np.array([p.t0 for p in downs]), U, D)


def phi_inverse_psi(measure: LifespanMeasure, q: float) -> float:
    """Φ(q): the largest root of ψ(λ) = q."""
    if q < 0:
        raise ModelError("q must be nonnegative")
    if q == 0 and not measure.is_critical:
        # ψ(λ) = 0 at 0 and (subcritical) ψ > 0 on (0, ∞)
        return 0.0
    hi = max(1.0, 2 * q)
    while float(psi(measure, hi)) < q:
        hi *= 2
    return float(optimize.brentq(lambda lam: float(psi(measure, lam)) - q, 0.0, hi, xtol=1e-14))


def first_passage_laplace(measure: LifespanMeasure, start: float, q: float) -> float:
    """E[e^{-q T}] for T the hitting time of 0 from ``start``."""
    return math.exp(-start * phi_inverse_psi(measure, q))


def exploratory_up_contour(measure: LifespanMeasure, t: float, y: float, n: int,
                           rng: np.random.Generator) -> dict:
    """Compare P(X^↑_t <= y) with the P*-probability of {X_t <= y}, x ~ size-biased.

    This is a comparison harness for an unresolved identification; it is
    reported, never gated.
    """
    up_vals = []
    for _ in range(n):
        K = 4
        while True:
            U, D = spine_draws(measure, K, rng)
            pair = left_right_contours(measure, U, D, rng)
            if pair.up.t[-1] >= t:
                break
            K *= 2
        up_vals.append(float(pair.up.value(t)))
    up_vals = np.array(up_vals)
    x = np.asarray(measure.sample_size_biased(rng, n), dtype=float)
    paths = simulate_cpp_batch(measure, x, n, rng, horizon=t)
    w = np.array([martingale_M(p, t, measure.m) for p in paths]) / x
    ind = np.array([(p.t0 is None) and float(p.value(t)) <= y for p in paths], dtype=float)
    star = mc.Estimator.from_samples(ind * w)
    up = mc.Estimator.from_samples((up_vals <= y).astype(float))
    return {"up": up.mean, "up_stderr": up.stderr, "star": star.mean, "star_stderr": star.stderr}


# --- rejection against importance on one pool of trees -------------------------------

def route_comparison(measure: LifespanMeasure, x: float, t: float, ys, a_values, n: int,
                     rng: np.random.Generator) -> list[dict]:
    """E_x[f | sup H >= a] against E*_x[f] for f = 1{t < T0, X_t <= y}.

    All estimates come from one pool of n trees under P_x. Besides plain
    rejection (the mean of f over trees reaching generation a), each tree also
    carries P(sup H >= a | path up to t), which gives a Rao-Blackwellized
    rejection estimate with the same target and much smaller noise.
    """
    from .contour import height_and_rho, jccp_from_tree

    a_values = [int(a) for a in a_values]
    q = survival_sequence(measure, max(a_values))
    forest = sample_forest(measure, n, x, rng)
    mg = np.array([tr.max_generation for tr in forest])
    alive = np.zeros(n, dtype=bool)
    xt = np.zeros(n)
    M = np.zeros(n)
    G = np.zeros((len(a_values), n))
    m = measure.m
    for i, tr in enumerate(forest):
        if tr.total_length <= t:
            continue
        path, sched = jccp_from_tree(tr, schedule=True)
        rho = height_and_rho(path, t)
        alive[i] = True
        xt[i] = rho.total
        M[i] = np.dot(rho.masses, m ** -np.arange(rho.H + 1.0))
        past = tr.generation[sched.enter <= t].max()
        for j, a in enumerate(a_values):
            G[j, i] = 1.0 if past >= a else reach_probability_given_rho(rho.masses, measure, a, q)
    rows = []
    for y in ys:
        f = (alive & (xt <= y)).astype(float)
        imp = mc.Estimator.from_samples(M * f / x)
        for j, a in enumerate(a_values):
            p_a = survival_exact(measure, a, x)
            rb = mc.Estimator.from_samples(f * G[j] / p_a)
            acc = mg >= a
            raw = mc.Estimator.from_samples(f[acc])
            rows.append({"y": float(y), "a": a, "importance": imp.mean, "importance_se": imp.stderr,
                         "rejection_rb": rb.mean, "rejection_rb_se": rb.stderr,
                         "rejection": raw.mean, "rejection_se": raw.stderr, "accepted": int(acc.sum())})
    return rows
