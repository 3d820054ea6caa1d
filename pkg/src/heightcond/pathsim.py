"""Direct simulation of the compound Poisson contour, time reversal and records."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .contour import JccpPath, PathError
from .model import LifespanMeasure, ModelError

DEFAULT_HORIZON = 1e4


def simulate_cpp_batch(measure: LifespanMeasure, x, n: int, rng: np.random.Generator,
                       horizon: float = DEFAULT_HORIZON) -> list[JccpPath]:
    """``n`` paths x - t + compound Poisson(b, Λ/b), stopped at min(T0, horizon)."""
    if horizon <= 0:
        raise ModelError("horizon must be positive")
    x0 = np.broadcast_to(np.asarray(x, dtype=float), (n,)).copy()
    if np.any(x0 <= 0):
        raise ModelError("x must be positive")
    b = measure.b
    idx = np.arange(n)
    t = np.zeros(n)
    level = x0.copy()
    rec_i, rec_t, rec_r = [], [], []
    while idx.size:
        gap = rng.exponential(1.0 / b, idx.size)
        size = np.asarray(measure.sample(rng, idx.size), dtype=float)
        jump = (gap < level) & (t + gap <= horizon)
        idx, t, level, gap, size = idx[jump], t[jump], level[jump], gap[jump], size[jump]
        t = t + gap
        level = level - gap + size
        rec_i.append(idx)
        rec_t.append(t)
        rec_r.append(size)
    ii = np.concatenate(rec_i) if rec_i else np.empty(0, dtype=int)
    tt = np.concatenate(rec_t) if rec_t else np.empty(0)
    rr = np.concatenate(rec_r) if rec_r else np.empty(0)
    order = np.argsort(ii, kind="stable")
    ii, tt, rr = ii[order], tt[order], rr[order]
    bounds = np.searchsorted(ii, np.arange(n + 1))
    return [JccpPath(float(x0[k]), tt[bounds[k]:bounds[k + 1]], rr[bounds[k]:bounds[k + 1]], horizon)
            for k in range(n)]


def simulate_cpp(measure: LifespanMeasure, x: float, rng: np.random.Generator,
                 horizon: float = DEFAULT_HORIZON) -> JccpPath:
    return simulate_cpp_batch(measure, x, 1, rng, horizon)[0]


@dataclass(eq=False)
class ReversedPath:
    """Path started at ``x0`` with drift -1 and positive jumps, observed on [0, length]."""

    times: np.ndarray
    sizes: np.ndarray
    length: float
    x0: float = 0.0

    @property
    def pre_jump(self) -> np.ndarray:
        cum = np.concatenate([[0.0], np.cumsum(self.sizes)[:-1]])
        return self.x0 + cum - self.times

    def value(self, s):
        s = np.asarray(s, dtype=float)
        k = np.searchsorted(self.times, s, side="right")
        cum = np.concatenate([[0.0], np.cumsum(self.sizes)])
        return self.x0 - s + cum[k]


def time_reverse(path, t: float) -> ReversedPath:
    """s -> X_{t-} - X_{(t-s)-} on [0, t], with X_{0-} = X_0."""
    end = path.end if isinstance(path, JccpPath) else path.length
    if not 0 <= t <= end:
        raise PathError("reversal time outside the observed path")
    inside = (path.times > 0) & (path.times < t)
    return ReversedPath(times=(t - path.times[inside])[::-1].copy(),
                        sizes=path.sizes[inside][::-1].copy(), length=float(t))


@dataclass
class RecordStats:
    times: np.ndarray
    overshoots: np.ndarray
    undershoots: np.ndarray  # distance below the running sup just before the jump
    jump_sizes: np.ndarray
    pre_values: np.ndarray

    @property
    def count(self) -> int:
        return int(self.times.size)


def record_stats(rev: ReversedPath) -> RecordStats:
    """Strict ascending-supremum records; they can only happen at jumps."""
    pre = rev.pre_jump
    post = pre + rev.sizes
    sup_before = np.maximum.accumulate(np.concatenate([[rev.x0], post]))[:-1]
    rec = post > sup_before
    return RecordStats(times=rev.times[rec], overshoots=(post - sup_before)[rec],
                       undershoots=(sup_before - pre)[rec], jump_sizes=rev.sizes[rec],
                       pre_values=pre[rec])


# --- records on an infinite horizon ------------------------------------------

def cramer_root(measure: LifespanMeasure) -> float:
    """Positive root γ of -γ + ∫(e^{γr} - 1)Λ(dr) = 0; 0 in the critical case.

    By Lundberg's inequality, a path at distance d below its running supremum
    exceeds it again with probability at most e^{-γd}.
    """
    if measure.is_critical:
        return 0.0

    def f(g):
        with np.errstate(divide="ignore", over="ignore"):
            lap = float(measure.laplace(-g))
        if not math.isfinite(lap) or lap <= 0:
            return math.inf  # past the exponential-moment abscissa
        return -g + measure.b * (lap - 1.0)

    lo, hi = 0.0, 1.0
    while f(hi) <= 0:
        lo, hi = hi, 2 * hi
        if hi > 1e6:
            raise ModelError("lifetime law has no usable exponential moments")
    while math.isinf(f(hi)):
        mid = (lo + hi) / 2
        v = f(mid)
        if v > 0:
            hi = mid
        else:
            lo = mid
    lo = max(lo, 1e-12 * hi)
    return float(optimize.brentq(f, max(lo, 1e-12 * hi), hi, xtol=1e-14))


@dataclass
class InfiniteRecords:
    """Per-replica record statistics of x-free paths over [0, ∞)."""

    count: np.ndarray
    first_overshoot: np.ndarray  # nan when there is no record
    first_time: np.ndarray
    first_undershoot: np.ndarray
    first_jump: np.ndarray
    second_overshoot: np.ndarray
    second_gap: np.ndarray  # T̃2 - T̃1
    unresolved: np.ndarray  # stopped by max_time rather than by the depth rule


def simulate_records(measure: LifespanMeasure, n: int, rng: np.random.Generator,
                     eps: float = 1e-12, max_time: float = 1e7) -> InfiniteRecords:
    """Records of a path started at 0 (drift -1, jumps Λ) on an infinite horizon.

    A replica stops once it is deeper than ln(1/eps)/γ below its supremum, after
    which a new record has probability below eps.
    """
    gamma = cramer_root(measure)
    depth = math.log(1 / eps) / gamma if gamma > 0 else math.inf
    b = measure.b
    nan = np.full(n, np.nan)
    out = InfiniteRecords(np.zeros(n, dtype=np.int64), nan.copy(), nan.copy(), nan.copy(),
                          nan.copy(), nan.copy(), nan.copy(), np.zeros(n, dtype=bool))
    idx = np.arange(n)
    x = np.zeros(n)
    sup = np.zeros(n)
    t = np.zeros(n)
    while idx.size:
        gap = rng.exponential(1.0 / b, idx.size)
        size = np.asarray(measure.sample(rng, idx.size), dtype=float)
        t = t + gap
        pre = x - gap
        post = pre + size
        rec = post > sup
        if np.any(rec):
            r_idx = idx[rec]
            c = out.count[r_idx]
            first = c == 0
            second = c == 1
            over = (post - sup)[rec]
            fi = r_idx[first]
            out.first_overshoot[fi] = over[first]
            out.first_time[fi] = t[rec][first]
            out.first_undershoot[fi] = (sup - pre)[rec][first]
            out.first_jump[fi] = size[rec][first]
            si = r_idx[second]
            out.second_overshoot[si] = over[second]
            out.second_gap[si] = t[rec][second] - out.first_time[si]
            out.count[r_idx] += 1
            sup = np.where(rec, post, sup)
        x = post
        stale = t > max_time
        out.unresolved[idx[stale]] = True
        keep = (x >= sup - depth) & ~stale
        idx, x, sup, t = idx[keep], x[keep], sup[keep], t[keep]
    return out
