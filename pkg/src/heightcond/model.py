"""Lifespan measures, Laplace exponents and the embedded Galton-Watson recursions.

A finite lifespan measure ``Lambda`` with total mass ``b`` defines a compensated
compound Poisson process with drift -1, jumps at rate ``b`` and jump law
``Lambda / b``. Every analytic quantity used elsewhere in the package (the
Laplace exponent, the offspring law of the generation counts, the survival
probabilities of the generation chain) is derived here from the measure.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np
from scipy import special, stats

CRITICAL_TOL = 1e-12
MAX_GENERATIONS = 100_000
_SERIES_CUTOFF = 1e-3


class ModelError(ValueError):
    """Invalid model parameters or an operation outside its domain."""


class InfiniteMassError(ModelError):
    pass


INFINITE_MASS_MESSAGE = (
    "lifespan measure with infinite total mass: every height is reached almost "
    "surely before 0, so conditioning on {sup H >= a} is trivial and there is "
    "nothing to simulate"
)


@dataclass(frozen=True)
class LifespanMeasure:
    """Finite lifespan measure ``Lambda = b * law``.

    Subclasses describe the normalized lifetime law ``Lambda / b`` and provide
    its moments, Laplace transform and exact samplers (plain and size-biased).
    """

    b: float

    kind = "abstract"

    def __post_init__(self):
        if not math.isfinite(self.b):
            raise InfiniteMassError(INFINITE_MASS_MESSAGE)
        if self.b <= 0:
            raise ModelError(f"total mass b must be positive, got {self.b}")
        self._check_params()
        m = self.m
        if not m > 0:
            raise ModelError(f"mean m must be positive, got {m}")
        if m > 1 + CRITICAL_TOL:
            raise ModelError(f"supercritical measure (m={m:.6g} > 1) is not supported")

    def _check_params(self):
        pass

    # --- normalized lifetime law; overridden per kind ---------------------
    def lifetime_moment(self, p: int) -> float:
        raise NotImplementedError

    def zlogz(self) -> float:
        """E[Z log Z ; Z >= 1] under ``Lambda / b``."""
        raise NotImplementedError

    def laplace(self, lam):
        """E[exp(-lam Z)]."""
        raise NotImplementedError

    def one_minus_laplace(self, lam):
        """1 - E[exp(-lam Z)], accurate for small ``lam``."""
        raise NotImplementedError

    def laplace_z(self, lam):
        """E[Z exp(-lam Z)]."""
        raise NotImplementedError

    def poisson_mixture(self, k: int) -> float:
        """E[exp(-b Z) (b Z)^k / k!]."""
        raise NotImplementedError

    def cdf(self, z):
        raise NotImplementedError

    def size_biased_cdf(self, z):
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, size=None):
        raise NotImplementedError

    def sample_size_biased(self, rng: np.random.Generator, size=None):
        raise NotImplementedError

    def to_config(self) -> dict:
        raise NotImplementedError

    # --- derived quantities ------------------------------------------------
    @property
    def m(self) -> float:
        """Mean offspring number, int z Lambda(dz)."""
        return self.b * self.lifetime_moment(1)

    @property
    def second_moment(self) -> float:
        """int z^2 Lambda(dz)."""
        return self.b * self.lifetime_moment(2)

    @property
    def is_critical(self) -> bool:
        return abs(self.m - 1.0) < CRITICAL_TOL

    def _taylor_one_minus_laplace(self, lam):
        m1, m2, m3, m4 = (self.lifetime_moment(p) for p in (1, 2, 3, 4))
        return lam * m1 - lam**2 * m2 / 2 + lam**3 * m3 / 6 - lam**4 * m4 / 24


@dataclass(frozen=True)
class Exponential(LifespanMeasure):
    theta: float = 1.0

    kind = "exponential"

    def _check_params(self):
        if not self.theta > 0:
            raise ModelError("theta must be positive")

    def lifetime_moment(self, p):
        return math.factorial(p) / self.theta**p

    def zlogz(self):
        # int_1^inf z log z theta e^{-theta z} dz
        th = self.theta
        return (math.exp(-th) + special.exp1(th)) / th

    def laplace(self, lam):
        return self.theta / (self.theta + np.asarray(lam, dtype=float))

    def one_minus_laplace(self, lam):
        lam = np.asarray(lam, dtype=float)
        return lam / (self.theta + lam)

    def laplace_z(self, lam):
        return self.theta / (self.theta + np.asarray(lam, dtype=float)) ** 2

    def poisson_mixture(self, k):
        th, b = self.theta, self.b
        return th / (th + b) * (b / (th + b)) ** k

    def cdf(self, z):
        return stats.expon(scale=1 / self.theta).cdf(z)

    def size_biased_cdf(self, z):
        return stats.gamma(2, scale=1 / self.theta).cdf(z)

    def sample(self, rng, size=None):
        return rng.exponential(1 / self.theta, size)

    def sample_size_biased(self, rng, size=None):
        return rng.gamma(2.0, 1 / self.theta, size)

    def to_config(self):
        return {"kind": self.kind, "theta": self.theta, "b": self.b}


@dataclass(frozen=True)
class PointMass(LifespanMeasure):
    z0: float = 1.0

    kind = "point_mass"

    def _check_params(self):
        if not self.z0 > 0:
            raise ModelError("z0 must be positive")

    def lifetime_moment(self, p):
        return self.z0**p

    def zlogz(self):
        return self.z0 * math.log(self.z0) if self.z0 >= 1 else 0.0

    def laplace(self, lam):
        return np.exp(-np.asarray(lam, dtype=float) * self.z0)

    def one_minus_laplace(self, lam):
        return -np.expm1(-np.asarray(lam, dtype=float) * self.z0)

    def laplace_z(self, lam):
        return self.z0 * np.exp(-np.asarray(lam, dtype=float) * self.z0)

    def poisson_mixture(self, k):
        return float(stats.poisson(self.b * self.z0).pmf(k))

    def cdf(self, z):
        return np.where(np.asarray(z) >= self.z0, 1.0, 0.0)

    def size_biased_cdf(self, z):
        return self.cdf(z)

    def sample(self, rng, size=None):
        return np.full(size, self.z0) if size is not None else self.z0

    def sample_size_biased(self, rng, size=None):
        return self.sample(rng, size)

    def to_config(self):
        return {"kind": self.kind, "z0": self.z0, "b": self.b}


def _bin_one_minus_laplace(lam, lo, hi):
    # 1 - E[e^{-lam Z}] for Z uniform on [lo, hi], lam > 0
    return 1.0 - (np.exp(-lam * lo) - np.exp(-lam * hi)) / (lam * (hi - lo))


def _bin_laplace_z(lam, lo, hi):
    def prim(z):
        return -np.exp(-lam * z) * (lam * z + 1) / lam**2

    return (prim(hi) - prim(lo)) / (hi - lo)


@dataclass(frozen=True)
class TableCDF(LifespanMeasure):
    """Lifetime law with a piecewise-linear CDF through ``(grid[i], cdf[i])``.

    ``grid`` starts at 0 and ``cdf`` runs from 0 to 1; each bin is uniform.
    """

    grid: tuple = (0.0, 1.0)
    cdf_values: tuple = (0.0, 1.0)

    kind = "table"

    def _check_params(self):
        g = np.asarray(self.grid, dtype=float)
        f = np.asarray(self.cdf_values, dtype=float)
        if g.ndim != 1 or g.shape != f.shape or g.size < 2:
            raise ModelError("grid and cdf must be 1-d of equal length >= 2")
        if g[0] < 0 or np.any(np.diff(g) <= 0):
            raise ModelError("grid must be nonnegative and strictly increasing")
        if abs(f[0]) > 1e-14 or abs(f[-1] - 1) > 1e-12 or np.any(np.diff(f) < 0):
            raise ModelError("cdf must be nondecreasing from 0 to 1")

    @property
    def _bins(self):
        g = np.asarray(self.grid, dtype=float)
        p = np.diff(np.asarray(self.cdf_values, dtype=float))
        keep = p > 0
        return g[:-1][keep], g[1:][keep], p[keep]

    def lifetime_moment(self, p):
        lo, hi, w = self._bins
        return float(np.sum(w * (hi ** (p + 1) - lo ** (p + 1)) / ((p + 1) * (hi - lo))))

    def zlogz(self):
        lo, hi, w = self._bins
        lo = np.maximum(lo, 1.0)

        def prim(z):
            return z**2 * np.log(z) / 2 - z**2 / 4

        width = np.asarray(self._bins[1]) - np.asarray(self._bins[0])
        part = np.where(hi > 1.0, (prim(np.maximum(hi, 1.0)) - prim(lo)) / width, 0.0)
        return float(np.sum(w * part))

    def one_minus_laplace(self, lam):
        lam = np.asarray(lam, dtype=float)
        lo, hi, w = self._bins
        scalar = lam.ndim == 0
        lam1 = np.atleast_1d(lam)
        out = np.empty_like(lam1)
        small = np.abs(lam1) * hi[-1] < _SERIES_CUTOFF
        out[small] = self._taylor_one_minus_laplace(lam1[small])
        big = ~small
        if np.any(big):
            lb = lam1[big][:, None]
            out[big] = np.sum(w * _bin_one_minus_laplace(lb, lo, hi), axis=1)
        return float(out[0]) if scalar else out

    def laplace(self, lam):
        return 1.0 - self.one_minus_laplace(lam)

    def laplace_z(self, lam):
        lam = np.asarray(lam, dtype=float)
        lo, hi, w = self._bins
        scalar = lam.ndim == 0
        lam1 = np.atleast_1d(lam)
        out = np.empty_like(lam1)
        small = np.abs(lam1) * hi[-1] < _SERIES_CUTOFF
        ls = lam1[small]
        m1, m2, m3 = (self.lifetime_moment(p) for p in (1, 2, 3))
        out[small] = m1 - ls * m2 + ls**2 * m3 / 2
        big = ~small
        if np.any(big):
            lb = lam1[big][:, None]
            out[big] = np.sum(w * _bin_laplace_z(lb, lo, hi), axis=1)
        return float(out[0]) if scalar else out

    def poisson_mixture(self, k):
        lo, hi, w = self._bins
        b = self.b
        mass = special.gammainc(k + 1, b * hi) - special.gammainc(k + 1, b * lo)
        return float(np.sum(w * mass / (b * (hi - lo))))

    def cdf(self, z):
        return np.interp(z, self.grid, self.cdf_values, left=0.0, right=1.0)

    def _size_biased_weights(self):
        lo, hi, w = self._bins
        sw = w * (lo + hi) / 2
        return lo, hi, sw / sw.sum()

    def size_biased_cdf(self, z):
        lo, hi, sw = self._size_biased_weights()
        z = np.asarray(z, dtype=float)
        zc = np.clip(z[..., None], lo, hi)
        frac = (zc**2 - lo**2) / (hi**2 - lo**2)
        return np.sum(sw * frac, axis=-1)

    def sample(self, rng, size=None):
        u = rng.random(size)
        lo, hi, w = self._bins
        edges = np.concatenate([[0.0], np.cumsum(w)])
        edges[-1] = 1.0
        idx = np.clip(np.searchsorted(edges, u, side="right") - 1, 0, len(w) - 1)
        frac = (u - edges[idx]) / w[idx]
        return lo[idx] + frac * (hi[idx] - lo[idx])

    def sample_size_biased(self, rng, size=None):
        lo, hi, sw = self._size_biased_weights()
        idx = rng.choice(len(sw), size=size, p=sw)
        u = rng.random(size)
        return np.sqrt(lo[idx] ** 2 + u * (hi[idx] ** 2 - lo[idx] ** 2))

    def to_config(self):
        return {"kind": self.kind, "grid": list(self.grid), "cdf": list(self.cdf_values), "b": self.b}


@dataclass(frozen=True)
class Uniform(TableCDF):
    z_max: float = 1.0

    kind = "uniform"

    def __init__(self, b: float, z_max: float = 1.0):
        object.__setattr__(self, "z_max", float(z_max))
        object.__setattr__(self, "grid", (0.0, float(z_max)))
        object.__setattr__(self, "cdf_values", (0.0, 1.0))
        object.__setattr__(self, "b", float(b))
        self.__post_init__()

    def _check_params(self):
        if not self.z_max > 0:
            raise ModelError("z_max must be positive")

    def to_config(self):
        return {"kind": self.kind, "z_max": self.z_max, "b": self.b}


@dataclass(frozen=True)
class BrownianModel:
    """psi(lam) = alpha * lam + beta * lam^2: Brownian motion with drift -alpha, variance 2 beta."""

    alpha: float
    beta: float

    def __post_init__(self):
        if not (self.alpha >= 0 and math.isfinite(self.alpha)):
            raise ModelError("alpha must be nonnegative")
        if not (self.beta > 0 and math.isfinite(self.beta)):
            raise ModelError("beta must be positive")

    def to_config(self):
        return {"alpha": self.alpha, "beta": self.beta}


Model = Union[LifespanMeasure, BrownianModel]


# --- Laplace exponent -------------------------------------------------------

def psi(model: Model, lam):
    """Laplace exponent: E_0[exp(-lam X_t)] = exp(t psi(lam))."""
    lam_arr = np.asarray(lam, dtype=float)
    if np.any(lam_arr < 0):
        raise ModelError("psi is only defined for lam >= 0")
    if isinstance(model, BrownianModel):
        out = model.alpha * lam_arr + model.beta * lam_arr**2
    else:
        out = lam_arr - model.b * model.one_minus_laplace(lam_arr)
    return float(out) if np.ndim(out) == 0 else out


def psi_prime(model: Model, lam):
    lam_arr = np.asarray(lam, dtype=float)
    if np.any(lam_arr < 0):
        raise ModelError("psi is only defined for lam >= 0")
    if isinstance(model, BrownianModel):
        out = model.alpha + 2 * model.beta * lam_arr
    else:
        out = 1.0 - model.b * model.laplace_z(lam_arr)
    return float(out) if np.ndim(out) == 0 else out


# --- offspring law ----------------------------------------------------------

@dataclass(frozen=True)
class OffspringLaw:
    """Mixed-Poisson offspring law of the generation counts."""

    measure: LifespanMeasure

    def pmf(self, k: int) -> float:
        if k < 0:
            return 0.0
        return self.measure.poisson_mixture(int(k))

    def pmf_array(self, kmax: int) -> np.ndarray:
        return np.array([self.pmf(k) for k in range(kmax + 1)])

    def pgf(self, s):
        s = np.asarray(s, dtype=float)
        return self.measure.laplace(self.measure.b * (1.0 - s))

    @property
    def mean(self) -> float:
        return self.measure.m

    @property
    def variance(self) -> float:
        lam = self.measure
        return lam.m + lam.b * lam.second_moment - lam.m**2

    def truncation(self, tol: float = 1e-10, kmax: int = 100_000) -> tuple[int, float]:
        """Smallest K with sum_{k<=K} p_k >= 1 - tol, and the tail mass left."""
        total = 0.0
        for k in range(kmax + 1):
            total += self.pmf(k)
            if total >= 1 - tol:
                return k, max(0.0, 1.0 - total)
        raise ModelError("offspring law did not reach the requested mass")


def offspring_pk(measure: LifespanMeasure, k: int) -> float:
    if k < 0:
        raise ModelError("k must be nonnegative")
    return OffspringLaw(measure).pmf(k)


# --- survival recursions ----------------------------------------------------

def survival_sequence(measure: LifespanMeasure, n: int) -> np.ndarray:
    """q_j = P(Z_j != 0) for j = 0..n, one generation-0 individual with lifetime Lambda/b.

    q_0 = 1 and q_j = 1 - f(1 - q_{j-1}) with f the offspring pgf, evaluated
    as 1 - L(b q) to keep relative accuracy when q is tiny.
    """
    if n < 0:
        raise ModelError("n must be nonnegative")
    if n > MAX_GENERATIONS:
        raise ModelError(f"generation cap {MAX_GENERATIONS} exceeded")
    q = np.empty(n + 1)
    q[0] = 1.0
    b = measure.b
    for j in range(1, n + 1):
        q[j] = measure.one_minus_laplace(b * q[j - 1])
    return q


def survival_exact(measure: LifespanMeasure, a: int, x: float) -> float:
    """P_x(Z_a != 0): the tree started from an ancestor of lifetime x is alive at generation a."""
    if a < 1:
        raise ModelError("a must be >= 1 (generation 0 is the ancestor, always alive)")
    if not x > 0:
        raise ModelError("x must be positive")
    q = survival_sequence(measure, a - 1)[-1]
    return float(-math.expm1(-measure.b * x * q))


@dataclass
class YaglomResult:
    value: float
    n: int
    ratios: np.ndarray


def yaglom_constant(measure: LifespanMeasure, tol: float = 1e-6, max_iter: int = MAX_GENERATIONS) -> YaglomResult:
    """Plateau of q_n / m^n for a subcritical measure.

    Stops at the first n where the relative change of the ratio is below tol.
    """
    m = measure.m
    if measure.is_critical or m >= 1:
        raise ModelError("critical measure: use kolmogorov_limit")
    if not math.isfinite(measure.zlogz()):
        raise ModelError("integral of z log z over [1, inf) must be finite")
    b = measure.b
    q = 1.0
    ratio = 1.0
    ratios = [ratio]
    for n in range(1, max_iter + 1):
        q_new = float(measure.one_minus_laplace(b * q))
        if q_new <= 0 or not math.isfinite(q_new):
            break
        new_ratio = ratio * (q_new / q) / m
        ratios.append(new_ratio)
        if abs(new_ratio - ratio) < tol * abs(new_ratio):
            return YaglomResult(new_ratio, n, np.array(ratios))
        q, ratio = q_new, new_ratio
    raise ModelError(
        f"q_n/m^n did not stabilize to rtol={tol} within {len(ratios) - 1} generations "
        f"(last ratio {ratio:.6g})"
    )


def kolmogorov_limit(measure: LifespanMeasure, n: int) -> tuple[float, float]:
    """(n q_n, 2 / sigma^2) for a critical measure."""
    if not measure.is_critical:
        raise ModelError("kolmogorov_limit needs a critical measure (m = 1)")
    if n < 1:
        raise ModelError("n must be positive")
    sigma2 = OffspringLaw(measure).variance
    q = survival_sequence(measure, n)[-1]
    return n * q, 2.0 / sigma2


# --- configuration ------------------------------------------------------------

_KINDS = {
    "exponential": lambda c: Exponential(b=_mass(c), theta=float(c["theta"])),
    "point_mass": lambda c: PointMass(b=_mass(c), z0=float(c["z0"])),
    "uniform": lambda c: Uniform(b=_mass(c), z_max=float(c["z_max"])),
    "table": lambda c: TableCDF(b=_mass(c), grid=tuple(map(float, c["grid"])),
                                cdf_values=tuple(map(float, c["cdf"]))),
}

_ALLOWED = {
    "exponential": {"kind", "theta", "b"},
    "point_mass": {"kind", "z0", "b"},
    "uniform": {"kind", "z_max", "b"},
    "table": {"kind", "grid", "cdf", "b"},
}


def _mass(c):
    b = c["b"]
    if isinstance(b, str) and b.lower() in {"inf", "infinity"}:
        raise InfiniteMassError(INFINITE_MASS_MESSAGE)
    return float(b)


def model_from_config(config: dict) -> Model:
    """Build a model from ``{"lifespan": {...}}`` or ``{"brownian": {...}}``."""
    if not isinstance(config, dict) or len(config) != 1:
        raise ModelError("model config must have exactly one of 'lifespan' or 'brownian'")
    (key, body), = config.items()
    if key == "brownian":
        extra = set(body) - {"alpha", "beta"}
        if extra:
            raise ModelError(f"unknown brownian fields: {sorted(extra)}")
        return BrownianModel(alpha=float(body["alpha"]), beta=float(body["beta"]))
    if key == "lifespan":
        kind = body.get("kind")
        if kind not in _KINDS:
            raise ModelError(f"unknown lifespan kind {kind!r}; expected one of {sorted(_KINDS)}")
        extra = set(body) - _ALLOWED[kind]
        if extra:
            raise ModelError(f"unknown fields for {kind}: {sorted(extra)}")
        try:
            return _KINDS[kind](body)
        except KeyError as exc:
            raise ModelError(f"missing field {exc.args[0]!r} for {kind}") from None
    raise ModelError(f"unknown model key {key!r}")


def model_to_config(model: Model) -> dict:
    if isinstance(model, BrownianModel):
        return {"brownian": model.to_config()}
    return {"lifespan": model.to_config()}


def load_model(path) -> Model:
    return model_from_config(json.loads(Path(path).read_text()))
