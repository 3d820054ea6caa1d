"""The acceptance matrix: one function per criterion, each returning a TestReport.

``scale`` multiplies every sample size, so ``scale < 1`` gives a quick smoke
run with the same code path (gates are only meaningful at scale 1).
"""

from __future__ import annotations

import math
import time

import numpy as np

from . import mc
from .brownian import kennedy_check, minimum_decomposition_check, survival_check
from .conditioned import importance_estimate, route_comparison, spine_vs_rejection
from .contour import height, jccp_from_tree, martingale_M, tree_from_path
from .model import (BrownianModel, Exponential, PointMass, Uniform, kolmogorov_limit, psi, psi_prime,
                    survival_exact, yaglom_constant)
from .pathsim import simulate_cpp_batch, simulate_records
from .tree import sample_forest

DEFAULT_SEED = 20240601

SUBCRITICAL = Exponential(b=0.8, theta=1.0)
CRITICAL = PointMass(b=1.0, z0=1.0)


def _n(n, scale):
    return max(10, int(round(n * scale)))


def _cfg(**kw):
    return {k: (v.to_config() if hasattr(v, "to_config") else v) for k, v in kw.items()}


def c01_bijection(seed=DEFAULT_SEED, scale=1.0) -> mc.TestReport:
    n = _n(10_000, scale)
    forest = sample_forest(SUBCRITICAL, n, 1.0, mc.seed_stream(seed, 1))
    worst, mismatched = 0.0, 0
    for tr in forest:
        back = tree_from_path(jccp_from_tree(tr))
        if back.n_nodes != tr.n_nodes or not np.array_equal(back.parent, tr.parent):
            mismatched += 1
            continue
        worst = max(worst, float(np.max(np.abs(back.alpha - tr.alpha))),
                    float(np.max(np.abs(back.omega - tr.omega))))
    return mc.TestReport("C1 tree-contour bijection", worst, mismatched == 0 and worst <= 1e-12,
                         threshold=1e-12, sample_sizes={"trees": n}, seed=seed,
                         config=_cfg(model=SUBCRITICAL, x=1.0),
                         details={"structural_mismatches": mismatched})


def c02_height_generation(seed=DEFAULT_SEED, scale=1.0) -> mc.TestReport:
    n = _n(1000, scale)
    rng = mc.seed_stream(seed, 2)
    forest = sample_forest(SUBCRITICAL, n, 1.0, rng)
    bad = 0
    heights = []
    for tr in forest:
        path, sched = jccp_from_tree(tr, schedule=True)
        t = rng.uniform(0, path.t0)
        h = height(path, t)
        heights.append(h)
        bad += h != tr.generation[sched.visited(tr, t)]
    return mc.TestReport("C2 height equals generation", float(bad), bad == 0, threshold=0,
                         sample_sizes={"probes": n}, seed=seed, config=_cfg(model=SUBCRITICAL, x=1.0),
                         details={"max_height_probed": int(max(heights))})


def c03_martingale(seed=DEFAULT_SEED, scale=1.0) -> mc.TestReport:
    n = _n(100_000, scale)
    times = [0.25, 0.5, 1.0, 2.0, 4.0]
    parts = {}
    ok = True
    zmax = 0.0
    for j, measure in enumerate((SUBCRITICAL, CRITICAL)):
        paths = simulate_cpp_batch(measure, 1.0, n, mc.seed_stream(seed, 30 + j), horizon=max(times))
        rows = [[martingale_M(p, t, measure.m) for p in paths] for t in times]
        rep = mc.martingale_constancy(rows, 1.0, times)
        parts[measure.kind] = rep.to_dict()
        ok &= rep.passed
        zmax = max(zmax, rep.statistic)
    return mc.TestReport("C3 height martingale mean", zmax, ok, threshold=mc.SE_GATE,
                         sample_sizes={"paths": n}, seed=seed,
                         config=_cfg(models=[SUBCRITICAL.to_config(), CRITICAL.to_config()], x=1.0, times=times),
                         details=parts)


def c04_survival(seed=DEFAULT_SEED, scale=1.0) -> mc.TestReport:
    n = _n(100_000, scale)
    forest = sample_forest(SUBCRITICAL, n, 1.0, mc.seed_stream(seed, 4), max_generation=8)
    mg = np.array([tr.max_generation for tr in forest])
    rows, zmax = [], 0.0
    for a in range(1, 9):
        p = survival_exact(SUBCRITICAL, a, 1.0)
        est = float(np.mean(mg >= a))
        se = math.sqrt(p * (1 - p) / n)
        z = abs(est - p) / se
        zmax = max(zmax, z)
        rows.append({"a": a, "acceptance": est, "exact": p, "z": z})
    return mc.TestReport("C4 rejection acceptance vs exact survival", zmax, zmax < mc.SE_GATE,
                         threshold=mc.SE_GATE, sample_sizes={"trees": n}, seed=seed,
                         config=_cfg(model=SUBCRITICAL, x=1.0), details={"rows": rows})


def c05_conditioning_limit(seed=DEFAULT_SEED, scale=1.0) -> mc.TestReport:
    n = _n(20_000, scale)
    ys, A = (0.5, 1.0, 2.0), (2, 4, 6, 8)
    rows = route_comparison(SUBCRITICAL, 1.0, 1.0, ys, A, n, mc.seed_stream(seed, 5))
    ok = True
    summary = []
    worst_ratio = 0.0
    for y in ys:
        ry = [r for r in rows if r["y"] == y]
        gaps = [abs(r["rejection_rb"] - r["importance"]) for r in ry]
        raw_gaps = [abs(r["rejection"] - r["importance"]) for r in ry]
        last = ry[-1]
        half = 1.96 * (last["rejection_rb_se"] + last["importance_se"])
        mono = bool(np.all(np.diff(gaps) < 0))
        overlap = gaps[-1] <= half
        ok &= mono and overlap
        worst_ratio = max(worst_ratio, gaps[-1] / half)
        summary.append({"y": y, "gaps": gaps, "monotone": mono, "overlap_a8": overlap,
                        "raw_rejection_gaps": raw_gaps})
    return mc.TestReport("C5 rejection(a) approaches importance", worst_ratio, ok, threshold=1.0,
                         sample_sizes={"trees": n}, seed=seed,
                         config=_cfg(model=SUBCRITICAL, x=1.0, t=1.0, ys=ys, a=A),
                         details={"summary": summary, "rows": rows})


def c06_yaglom(seed=DEFAULT_SEED, scale=1.0) -> mc.TestReport:
    fixtures = [SUBCRITICAL, PointMass(b=0.5, z0=1.0), Uniform(b=1.5, z_max=1.0)]
    out, ok, worst = [], True, 0
    for f in fixtures:
        res = yaglom_constant(f, tol=1e-6)
        ok &= res.n <= 200
        worst = max(worst, res.n)
        out.append({"model": f.to_config(), "plateau": res.value, "n": res.n})
    return mc.TestReport("C6 Yaglom ratio stabilizes", float(worst), ok, threshold=200,
                         seed=seed, details={"fixtures": out})


def c07_kolmogorov(seed=DEFAULT_SEED, scale=1.0) -> mc.TestReport:
    nq, target = kolmogorov_limit(CRITICAL, 500)
    rel = abs(nq - target) / target
    return mc.TestReport("C7 Kolmogorov n q_n", rel, rel < 0.02, threshold=0.02, seed=seed,
                         config=_cfg(model=CRITICAL, n=500), details={"n_qn": nq, "target": target})


def c08_records(seed=DEFAULT_SEED, scale=1.0) -> mc.TestReport:
    n = _n(100_000, scale)
    m = SUBCRITICAL
    rec = simulate_records(m, n, mc.seed_stream(seed, 8))
    has = np.isfinite(rec.first_overshoot)
    o = np.where(has, rec.first_overshoot, 0.0)
    rows, zmax = [], 0.0
    for lam in (0.5, 1.0, 2.0):
        ps, dps = float(psi(m, lam)), float(psi_prime(m, lam))
        for name, vals, target in (
            ("E[exp(-l r); T<inf]", np.where(has, np.exp(-lam * o), 0.0), 1 - ps / lam),
            ("E[r exp(-l r); T<inf]", np.where(has, o * np.exp(-lam * o), 0.0), dps / lam - ps / lam**2),
        ):
            est = mc.Estimator.from_samples(vals)
            z, _ = mc.mean_gate(est.mean, est.stderr, target)
            zmax = max(zmax, z)
            rows.append({"lambda": lam, "quantity": name, "estimate": est.mean, "stderr": est.stderr,
                         "target": target, "z": z})
    kmax = int(rec.count.max())
    geo = (1 - m.m) * m.m ** np.arange(kmax + 1)
    chi = mc.chi_square_gof(np.bincount(rec.count, minlength=kmax + 1), geo,
                            name="record count vs geometric")
    ok = zmax < mc.SE_GATE and chi.passed
    return mc.TestReport("C8 first-record laws", zmax, ok, pvalue=chi.pvalue, threshold=mc.SE_GATE,
                         sample_sizes={"replicas": n}, seed=seed, config=_cfg(model=m),
                         details={"rows": rows, "geometric": chi.to_dict(),
                                  "unresolved": int(rec.unresolved.sum())})


def c09_spine(seed=DEFAULT_SEED, scale=1.0) -> mc.TestReport:
    n = _n(20_000, scale)
    res = spine_vs_rejection(SUBCRITICAL, 6, 1, n, mc.seed_stream(seed, 9), seed=seed)
    r = res["reports"]
    ctrl_rejected = r["negative_control"].pvalue < mc.SIGNIFICANCE
    ok = r["lifetime"].passed and r["birth_fraction"].passed and ctrl_rejected
    return mc.TestReport("C9 spine lifetime at n=6, k=1", r["lifetime"].statistic, ok,
                         pvalue=r["lifetime"].pvalue, threshold=mc.SIGNIFICANCE,
                         sample_sizes={"accepted": res["accepted"], "trials": res["trials"]}, seed=seed,
                         config=_cfg(model=SUBCRITICAL, n=6, k=1),
                         details={k: v.to_dict() for k, v in r.items()})


def c10_brownian_survival(seed=DEFAULT_SEED, scale=1.0) -> mc.TestReport:
    n = _n(100_000, scale)
    dts = (1e-2, 1e-3, 1e-4)
    A = (0.5, 1.0, 2.0)
    ok, rows, worst = True, [], 0.0
    for alpha in (0.0, 1.0):
        model = BrownianModel(alpha=alpha, beta=1.0)
        res = survival_check(model, 1.0, A, dts, n, seed * 10 + int(alpha))
        for a in A:
            seq = [r for r in res["rows"] if r["a"] == a]
            coarse, mid, fine = seq
            err_f = abs(fine["estimate"] - fine["target"])
            err_c = abs(coarse["estimate"] - coarse["target"])
            trend = abs(mid["estimate"] - fine["estimate"])
            bound = 2 * (fine["stderr"] + trend)
            converging = err_f <= err_c + 2 * math.hypot(coarse["stderr"], fine["stderr"])
            good = err_f < bound and converging
            ok &= good
            worst = max(worst, err_f / bound)
            rows.append({"alpha": alpha, "a": a, "estimates": [r["estimate"] for r in seq],
                         "stderr": [r["stderr"] for r in seq], "target": fine["target"],
                         "error": err_f, "bound": bound, "converging": converging})
    return mc.TestReport("C10 Brownian survival vs 1-exp(-x v(a))", worst, ok, threshold=1.0,
                         sample_sizes={"paths_per_dt": n}, seed=seed,
                         config=_cfg(beta=1.0, x=1.0, alphas=[0.0, 1.0], a=A, dts=dts), details={"rows": rows})


def c11_kennedy(seed=DEFAULT_SEED, scale=1.0) -> mc.TestReport:
    n = _n(100_000, scale)
    model = BrownianModel(alpha=1.0, beta=1.0)
    times = [0.25, 0.5, 1.0]
    S = kennedy_check(model, 1.0, times, 1e-4, n, seed * 10 + 11)
    rep = mc.martingale_constancy(S, 1.0, times, name="C11 Kennedy martingale mean", seed=seed,
                                  config=_cfg(model=model, x=1.0, dt=1e-4))
    return rep


def c12_minimum(seed=DEFAULT_SEED, scale=1.0) -> mc.TestReport:
    n = _n(1_000_000, scale)
    model = BrownianModel(alpha=1.0, beta=1.0)
    res = minimum_decomposition_check(model, 1.0, 10.0, 1e-2, n, seed * 10 + 12)
    w, c = res["weighted"], res["control"]
    weight_ok = abs(res["mean_weight"] - 1.0) <= mc.SE_GATE * res["mean_weight_stderr"]
    ok = w.passed and c.pvalue < mc.SIGNIFICANCE and weight_ok
    return mc.TestReport("C12 minimum under P* is uniform", w.statistic, ok, pvalue=w.pvalue,
                         threshold=mc.SIGNIFICANCE, sample_sizes={"paths": n, "n_eff": res["n_eff"]},
                         seed=seed, config=_cfg(model=model, x=1.0, t=10.0, dt=1e-2),
                         details={"control": c.to_dict(),
                                  **{k: v for k, v in res.items() if k not in ("weighted", "control")}})


def c13_divergence(seed=DEFAULT_SEED, scale=1.0) -> mc.TestReport:
    n = _n(100_000, scale)
    times = (1.0, 2.0, 4.0, 8.0)
    ests = []
    for j, t in enumerate(times):
        ws = importance_estimate(SUBCRITICAL, 1.0, t, lambda p, t=t: p.t0 is None and float(p.value(t)) < 2.0,
                                 n, mc.seed_stream(seed, 130 + j))
        ests.append((ws.estimate, ws.stderr))
    margins = [(ests[i][0] - ests[i + 1][0]) / (2 * math.hypot(ests[i][1], ests[i + 1][1]))
               for i in range(len(times) - 1)]
    worst = min(margins)
    return mc.TestReport("C13 P*(X_t < 2) decreases in t", worst, worst > 1.0, threshold=1.0,
                         sample_sizes={"paths_per_t": n}, seed=seed,
                         config=_cfg(model=SUBCRITICAL, x=1.0, times=times, K=2.0),
                         details={"estimates": ests, "margins_in_2se": margins})


CRITERIA = [
    c01_bijection, c02_height_generation, c03_martingale, c04_survival, c05_conditioning_limit,
    c06_yaglom, c07_kolmogorov, c08_records, c09_spine, c10_brownian_survival, c11_kennedy,
    c12_minimum, c13_divergence,
]


def run_all(seed=DEFAULT_SEED, scale=1.0, only=None, log=print) -> list[mc.TestReport]:
    reports = []
    for i, fn in enumerate(CRITERIA, start=1):
        if only and i not in only:
            continue
        t0 = time.time()
        rep = fn(seed=seed, scale=scale)
        rep.details["seconds"] = round(time.time() - t0, 2)
        reports.append(rep)
        if log:
            log(rep.line())
    return reports
