"""Monte Carlo harness: mergeable estimators, test reports, reproducible streams."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import stats

SE_GATE = 3.0
SIGNIFICANCE = 0.01


def seed_stream(root_seed: int, replica_index: int) -> np.random.Generator:
    """Independent generator for replica ``replica_index``.

    Philox is counter based: the key is derived from (root_seed, replica_index)
    so any replica can be addressed without generating the ones before it.
    """
    ss = np.random.SeedSequence([int(root_seed), int(replica_index)])
    return np.random.Generator(np.random.Philox(ss))


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class Estimator:
    """Running mean and centered second moment with associative merging.

    With weights, ``weight_sum`` plays the role of the count in the mean and
    ``m2`` is the weighted sum of squared deviations.
    """

    count: int = 0
    mean: float = 0.0
    m2: float = 0.0
    weight_sum: float = 0.0
    weight_sq_sum: float = 0.0

    @classmethod
    def from_samples(cls, values, weights=None) -> "Estimator":
        x = np.asarray(values, dtype=float).ravel()
        if x.size == 0:
            return cls()
        w = np.ones_like(x) if weights is None else np.asarray(weights, dtype=float).ravel()
        ws = float(w.sum())
        if ws == 0:
            return cls(count=x.size)
        mean = float(np.dot(w, x) / ws)
        m2 = float(np.dot(w, (x - mean) ** 2))
        return cls(count=int(x.size), mean=mean, m2=m2, weight_sum=ws, weight_sq_sum=float(np.dot(w, w)))

    def merge(self, other: "Estimator") -> "Estimator":
        if self.weight_sum == 0:
            return Estimator(self.count + other.count, other.mean, other.m2, other.weight_sum, other.weight_sq_sum)
        if other.weight_sum == 0:
            return Estimator(self.count + other.count, self.mean, self.m2, self.weight_sum, self.weight_sq_sum)
        w = self.weight_sum + other.weight_sum
        delta = other.mean - self.mean
        mean = self.mean + delta * other.weight_sum / w
        m2 = self.m2 + other.m2 + delta * delta * self.weight_sum * other.weight_sum / w
        return Estimator(self.count + other.count, mean, m2, w, self.weight_sq_sum + other.weight_sq_sum)

    def add(self, values, weights=None) -> "Estimator":
        return self.merge(Estimator.from_samples(values, weights))

    @property
    def effective_count(self) -> float:
        if self.weight_sq_sum == 0:
            return 0.0
        return self.weight_sum**2 / self.weight_sq_sum

    @property
    def variance(self) -> float:
        n = self.effective_count
        if n <= 1:
            return float("nan")
        return self.m2 / self.weight_sum * n / (n - 1)

    @property
    def stderr(self) -> float:
        n = self.effective_count
        return math.sqrt(self.variance / n) if n > 1 else float("nan")

    def ci(self, level: float = 0.95) -> tuple[float, float]:
        z = stats.norm.ppf(0.5 + level / 2)
        return self.mean - z * self.stderr, self.mean + z * self.stderr


def merge_all(parts: Sequence[Estimator]) -> Estimator:
    out = Estimator()
    for p in parts:
        out = out.merge(p)
    return out


@dataclass
class TestReport:
    name: str
    statistic: float
    passed: bool
    pvalue: Optional[float] = None
    threshold: Optional[float] = None
    sample_sizes: dict = field(default_factory=dict)
    seed: Optional[int] = None
    config: dict = field(default_factory=dict)
    details: dict = field(default_factory=dict)

    __test__ = False  # not a pytest class

    def to_dict(self) -> dict:
        return _jsonable(asdict(self))

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        p = f" p={self.pvalue:.4g}" if self.pvalue is not None else ""
        return f"[{tag}] {self.name}: statistic={self.statistic:.6g}{p}"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def mean_gate(estimate: float, stderr: float, target: float, gate: float = SE_GATE) -> tuple[float, bool]:
    z = abs(estimate - target) / stderr if stderr > 0 else (0.0 if estimate == target else math.inf)
    return z, z < gate


def martingale_constancy(samples, target: float, times=None, name: str = "martingale constancy",
                         seed=None, config=None) -> TestReport:
    """Max over times of |mean_t - target| / stderr_t; passes iff below 3.

    ``samples`` is a (n_times, n_samples) array or a sequence of 1-d arrays.
    """
    rows = [np.asarray(r, dtype=float) for r in samples]
    if len(rows) < 2:
        raise ValueError("need at least two time points")
    means, ses, zs = [], [], []
    for r in rows:
        est = Estimator.from_samples(r)
        se = est.stderr
        z, _ = mean_gate(est.mean, se, target)
        means.append(est.mean)
        ses.append(se)
        zs.append(z)
    zmax = float(max(zs))
    return TestReport(
        name=name, statistic=zmax, passed=zmax < SE_GATE, threshold=SE_GATE,
        sample_sizes={"n": int(min(len(r) for r in rows)), "times": len(rows)},
        seed=seed, config=config or {},
        details={"times": list(times) if times is not None else None,
                 "means": means, "stderr": ses, "z": zs, "target": target},
    )


def ks_vs_cdf(sample, cdf: Callable, name: str = "ks vs cdf", alpha: float = SIGNIFICANCE,
              seed=None, config=None) -> TestReport:
    res = stats.kstest(np.asarray(sample, dtype=float), cdf)
    return TestReport(name=name, statistic=float(res.statistic), pvalue=float(res.pvalue),
                      passed=bool(res.pvalue > alpha), threshold=alpha,
                      sample_sizes={"n": int(np.size(sample))}, seed=seed, config=config or {})


def ks_two_sample(a, b, name: str = "ks two sample", alpha: float = SIGNIFICANCE,
                  seed=None, config=None) -> TestReport:
    res = stats.ks_2samp(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    return TestReport(name=name, statistic=float(res.statistic), pvalue=float(res.pvalue),
                      passed=bool(res.pvalue > alpha), threshold=alpha,
                      sample_sizes={"n_a": int(np.size(a)), "n_b": int(np.size(b))},
                      seed=seed, config=config or {})


def weighted_ecdf(values, weights):
    x = np.asarray(values, dtype=float)
    w = np.asarray(weights, dtype=float)
    order = np.argsort(x, kind="stable")
    x, w = x[order], w[order]
    cw = np.cumsum(w)
    return x, cw / cw[-1]


def weighted_ks(values, weights, cdf: Callable, name: str = "weighted ks",
                alpha: float = SIGNIFICANCE, seed=None, config=None) -> TestReport:
    """KS distance between the self-normalized weighted ECDF and ``cdf``.

    The p-value uses the Kish effective sample size (sum w)^2 / sum w^2.
    """
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    keep = w > 0
    x, F = weighted_ecdf(np.asarray(values, dtype=float)[keep], w[keep])
    G = cdf(x)
    F_left = np.concatenate([[0.0], F[:-1]])
    d = float(max(np.max(np.abs(F - G)), np.max(np.abs(G - F_left))))
    n_eff = float(w.sum() ** 2 / np.dot(w, w))
    p = float(stats.kstwo.sf(d, max(1, int(round(n_eff)))))
    return TestReport(name=name, statistic=d, pvalue=p, passed=p > alpha, threshold=alpha,
                      sample_sizes={"n": int(keep.sum()), "n_eff": n_eff}, seed=seed, config=config or {})


def chi_square_gof(observed, expected_probs, min_expected: float = 5.0,
                   name: str = "chi-square", alpha: float = SIGNIFICANCE, seed=None, config=None,
                   ddof: int = 0) -> TestReport:
    """Goodness of fit for counts; adjacent cells pooled until each expects >= min_expected.

    The last cell absorbs whatever probability mass ``expected_probs`` leaves out.
    """
    obs = np.asarray(observed, dtype=float)
    p = np.asarray(expected_probs, dtype=float)
    if obs.shape != p.shape:
        raise ValueError("observed and expected must align")
    n = obs.sum()
    p = p.copy()
    p[-1] += max(0.0, 1.0 - p.sum())
    exp = n * p
    pooled_o, pooled_e = [], []
    acc_o = acc_e = 0.0
    for o, e in zip(obs, exp):
        acc_o += o
        acc_e += e
        if acc_e >= min_expected:
            pooled_o.append(acc_o)
            pooled_e.append(acc_e)
            acc_o = acc_e = 0.0
    if acc_e > 0 or acc_o > 0:
        if pooled_e:
            pooled_o[-1] += acc_o
            pooled_e[-1] += acc_e
        else:
            pooled_o.append(acc_o)
            pooled_e.append(acc_e)
    po, pe = np.array(pooled_o), np.array(pooled_e)
    stat = float(np.sum((po - pe) ** 2 / pe))
    dof = max(1, len(po) - 1 - ddof)
    pval = float(stats.chi2.sf(stat, dof))
    return TestReport(name=name, statistic=stat, pvalue=pval, passed=pval > alpha, threshold=alpha,
                      sample_sizes={"n": int(n), "cells": int(len(po))}, seed=seed, config=config or {},
                      details={"dof": dof})


def blocks(n: int, block_size: int):
    """Fixed replica blocks; block k always covers the same replica indices."""
    for k, start in enumerate(range(0, n, block_size)):
        yield k, start, min(n, start + block_size)
