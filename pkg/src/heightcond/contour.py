"""Contour (JCCP) paths of splitting trees, heights and the ρ-measure.

A path is stored on its jump skeleton: start value ``x0``, jump times and
jump sizes, drift -1 in between. Between jumps everything is linear, so all
the record computations below are exact on the skeleton.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model import LifespanMeasure, ModelError
from .tree import ChronologicalTree, TreeError, tree_from_records


class PathError(ValueError):
    pass


@dataclass(eq=False)
class JccpPath:
    """Spectrally positive path x0 - t + sum of jumps, stopped at its first zero."""

    x0: float
    times: np.ndarray
    sizes: np.ndarray
    horizon: float = math.inf

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.sizes = np.asarray(self.sizes, dtype=float)
        if not self.x0 > 0:
            raise PathError("path must start above 0")
        if self.times.shape != self.sizes.shape:
            raise PathError("times and sizes must align")
        if np.any(self.sizes <= 0):
            raise PathError("jumps must be positive")
        if self.times.size and (self.times[0] <= 0 or np.any(np.diff(self.times) <= 0)):
            raise PathError("jump times must be positive and strictly increasing")
        self._cum = np.concatenate([[0.0], np.cumsum(self.sizes)])
        pre = self.x0 + self._cum[:-1] - self.times
        hit = np.flatnonzero(pre <= 0)
        if hit.size:
            raise PathError("path has jumps after hitting 0")
        t0 = self.x0 + self._cum[-1]
        self.t0: Optional[float] = t0 if t0 <= self.horizon else None
        if self.times.size and self.times[-1] > self.horizon:
            raise PathError("jumps beyond the horizon")

    @property
    def absorbed(self) -> bool:
        return self.t0 is not None

    @property
    def end(self) -> float:
        return self.t0 if self.t0 is not None else self.horizon

    @property
    def n_jumps(self) -> int:
        return int(self.times.size)

    @property
    def pre_jump(self) -> np.ndarray:
        """X_{t_i-} at every jump."""
        return self.x0 + self._cum[:-1] - self.times

    def value(self, t):
        """X_t, frozen at 0 after T0."""
        t = np.asarray(t, dtype=float)
        k = np.searchsorted(self.times, t, side="right")
        v = self.x0 - t + self._cum[k]
        if self.t0 is not None:
            v = np.where(t >= self.t0, 0.0, v)
        return v

    def left_limit(self, t):
        t = np.asarray(t, dtype=float)
        k = np.searchsorted(self.times, t, side="left")
        v = self.x0 - t + self._cum[k]
        if self.t0 is not None:
            v = np.where(t > self.t0, 0.0, v)
        return np.where(t <= 0, self.x0, v)

    def supremum(self) -> float:
        if self.times.size == 0:
            return self.x0
        return float(max(self.x0, np.max(self.pre_jump + self.sizes)))

    # --- CSV --------------------------------------------------------------
    def to_csv(self) -> str:
        lines = [f"# x0={self.x0!r} horizon={self.horizon!r}", "t,jump_size"]
        lines += [f"{float(t)!r},{float(r)!r}" for t, r in zip(self.times, self.sizes)]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, text: str) -> "JccpPath":
        x0, horizon = None, math.inf
        times, sizes = [], []
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                for tok in line[1:].split():
                    key, _, val = tok.partition("=")
                    if key == "x0":
                        x0 = float(val)
                    elif key == "horizon":
                        horizon = float(val)
                continue
            if line.startswith("t,"):
                continue
            t, r = line.split(",")
            times.append(float(t))
            sizes.append(float(r))
        if x0 is None:
            raise PathError("CSV header must carry x0")
        return cls(x0, np.array(times), np.array(sizes), horizon)


@dataclass
class ContourSchedule:
    """Entry and exit times of the contour in each node's subtree."""

    enter: np.ndarray
    exit: np.ndarray

    def visited(self, tree: ChronologicalTree, t: float) -> int:
        """Index of the individual the contour is visiting at time t."""
        inside = np.flatnonzero((self.enter <= t) & (t < self.exit))
        if inside.size == 0:
            raise PathError("t outside the contour")
        return int(inside[np.argmax(tree.generation[inside])])


def _subtree_lengths(tree: ChronologicalTree) -> np.ndarray:
    L = tree.lifetimes.copy()
    for g in range(tree.max_generation, 0, -1):
        sel = np.flatnonzero(tree.generation == g)
        np.add.at(L, tree.parent[sel], L[sel])
    return L


def jccp_from_tree(tree: ChronologicalTree, schedule: bool = False):
    """Contour of a finite tree; children are visited youngest first.

    The jump at child c happens after the contour has descended from ω(parent)
    to α(c) and explored all younger siblings, which gives the entry time
    directly without an explicit depth-first walk.
    """
    if tree.truncated:
        raise TreeError("cannot build the contour of a truncated tree")
    L = _subtree_lengths(tree)
    n = tree.n_nodes
    enter = np.zeros(n)
    for g in range(1, tree.max_generation + 1):
        sel = np.flatnonzero(tree.generation == g)
        par = tree.parent[sel]
        # exclusive cumsum of younger siblings' subtree lengths
        cs = np.cumsum(L[sel])
        first = tree.first_child[par]
        offset = cs - L[sel]
        group_start = np.searchsorted(sel, first)
        offset -= (cs[group_start] - L[sel][group_start])
        enter[sel] = enter[par] + (tree.omega[par] - tree.alpha[sel]) + offset
    order = np.argsort(enter[1:], kind="stable") + 1
    path = JccpPath(float(tree.omega[0]), enter[order], tree.lifetimes[order])
    if schedule:
        return path, ContourSchedule(enter, enter + L)
    return path


def tree_from_path(path: JccpPath) -> ChronologicalTree:
    """Rebuild the tree from its contour with a last-in-first-out stack."""
    if path.t0 is None:
        raise PathError("path does not reach 0")
    records = [((), 0.0, path.x0)]
    stack = [((), 0.0)]  # (label, birth level)
    n_kids = {(): 0}
    for level, r in zip(path.pre_jump, path.sizes):
        while stack[-1][1] >= level:
            stack.pop()
            if not stack:
                raise PathError("contour left the ancestor before jumping")
        lab = stack[-1][0]
        n_kids[lab] += 1
        child = lab + (n_kids[lab],)
        n_kids[child] = 0
        records.append((child, float(level), float(level + r)))
        stack.append((child, float(level)))
    return tree_from_records(records)


@dataclass
class RhoMeasure:
    """Masses ρ_0..ρ_H at heights 0..H at time t."""

    masses: np.ndarray
    t: float

    @property
    def H(self) -> int:
        return len(self.masses) - 1

    @property
    def total(self) -> float:
        return float(np.sum(self.masses))


def _record_mask(pre: np.ndarray, x_t: float) -> tuple[np.ndarray, np.ndarray]:
    """Future infimum just after each jump and which jumps are records."""
    if pre.size == 0:
        return np.empty(0), np.zeros(0, dtype=bool)
    later = np.minimum.accumulate(pre[::-1])[::-1]
    fut = np.minimum(np.append(later[1:], np.inf), x_t)
    return fut, pre < fut


def height_and_rho(path: JccpPath, t: float) -> RhoMeasure:
    """Record structure of s -> inf_{[s,t]} X by a backward sweep over jumps."""
    if t < 0:
        raise PathError("t must be nonnegative")
    if path.t0 is not None and t >= path.t0:
        raise PathError("t is past T0; the measure is killed")
    if t > path.horizon:
        raise PathError("t is beyond the simulated horizon")
    k = int(np.searchsorted(path.times, t, side="right"))
    pre = path.pre_jump[:k]
    x_t = float(path.value(t))
    fut, rec = _record_mask(pre, x_t)
    rho0 = min(path.x0, x_t, float(pre.min()) if k else math.inf)
    masses = np.concatenate([[rho0], (fut - pre)[rec]])
    return RhoMeasure(masses, float(t))


def height(path: JccpPath, t: float) -> int:
    return height_and_rho(path, t).H


def martingale_M(path: JccpPath, t: float, m: float) -> float:
    """Sum_i ρ_i m^{-i} at t ∧ T0; 0 once the path is absorbed."""
    if not (0 < m <= 1):
        raise ModelError("m must lie in (0, 1]")
    if path.t0 is not None and t >= path.t0:
        return 0.0
    rho = height_and_rho(path, t)
    return float(np.dot(rho.masses, m ** -np.arange(rho.H + 1.0)))


def generator_residual(nu: RhoMeasure, measure: LifespanMeasure, m: Optional[float] = None) -> float:
    """Generator of ν -> Σ ν_i m^{-i} applied at ν.

    Drift eats the top mass at unit speed, births add an atom at height H+1.
    Zero when m is the mean of the offspring law.
    """
    if m is None:
        m = measure.m
    if nu.total == 0:
        return 0.0
    H = nu.H
    return float(measure.m * m ** (-H - 1) - m ** (-H))
