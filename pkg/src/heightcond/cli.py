"""Command-line entry point: ``heightcond <command> ...``.

Exit codes: 0 success, 1 a statistical check failed, 2 bad configuration.
Every output file starts with a header carrying the package version, the
seed and a hash of the full configuration.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, mc
from .model import BrownianModel, LifespanMeasure, ModelError, load_model, model_from_config

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2
BLOCK = 1000


class ConfigError(ValueError):
    pass


# --- configuration ------------------------------------------------------------------

def parse_model(text: str):
    """A model from a JSON file, an inline JSON object or ``kind:key=val,...``.

    Shorthand examples: ``exponential:b=0.8,theta=1``, ``point_mass:b=1,z0=1``,
    ``uniform:b=1.5,z_max=1``, ``brownian:alpha=1,beta=1``.
    """
    text = text.strip()
    if text.startswith("{"):
        return model_from_config(json.loads(text))
    p = Path(text)
    if p.suffix == ".json" or p.exists():
        return load_model(p)
    kind, _, rest = text.partition(":")
    body = {}
    for tok in filter(None, rest.split(",")):
        key, eq, val = tok.partition("=")
        if not eq:
            raise ConfigError(f"bad model field {tok!r}")
        try:
            body[key.strip()] = float(val) if val.strip().lower() not in {"inf", "infinity"} else val.strip()
        except ValueError:
            raise ConfigError(f"non-numeric value in {tok!r}") from None
    if kind == "brownian":
        return model_from_config({"brownian": body})
    return model_from_config({"lifespan": {"kind": kind, **body}})


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}") from None


def _require_lifespan(model):
    if not isinstance(model, LifespanMeasure):
        raise ConfigError("this command needs a lifespan model, not a Brownian one")
    return model


def experiment_config(args) -> dict:
    return {k: v for k, v in vars(args).items() if k not in ("func", "out", "workers")}


def header_lines(args) -> list[str]:
    cfg = experiment_config(args)
    return [f"# heightcond {__version__} seed={getattr(args, 'seed', None)} config_hash={mc.config_hash(cfg)}",
            "# config=" + json.dumps(cfg, sort_keys=True, default=str)]


def write_csv(args, columns, rows) -> None:
    buf = io.StringIO()
    for line in header_lines(args):
        buf.write(line + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    _emit(args, buf.getvalue())


def write_json(args, payload) -> None:
    cfg = experiment_config(args)
    doc = {"meta": {"version": __version__, "seed": getattr(args, "seed", None),
                    "config_hash": mc.config_hash(cfg), "config": cfg},
           **payload}
    _emit(args, json.dumps(mc._jsonable(doc), indent=2, sort_keys=True, default=str) + "\n")


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if v is None:
        return ""
    return v


def _emit(args, text: str) -> None:
    out = getattr(args, "out", None)
    if out in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


# --- replica blocks -------------------------------------------------------------------

def _my_blocks(n: int, shards: int, shard_index: int):
    if shards < 1 or not 0 <= shard_index < shards:
        raise ConfigError("need shards >= 1 and 0 <= shard-index < shards")
    return [blk for blk in mc.blocks(n, BLOCK) if blk[0] % shards == shard_index]


def _map_blocks(fn, args, n: int, *extra):
    """Run fn(seed, block, lo, hi, *extra) over this shard's blocks, in block order."""
    todo = _my_blocks(n, args.shards, args.shard_index)
    jobs = [(args.seed, b, lo, hi, *extra) for b, lo, hi in todo]
    if args.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(args.workers) as pool:
            parts = list(pool.map(fn, *zip(*jobs)))
    else:
        parts = [fn(*j) for j in jobs]
    return [row for part in parts for row in part]


# --- commands -------------------------------------------------------------------------

def cmd_simulate_tree(args) -> int:
    from .tree import sample_tree
    model = _require_lifespan(parse_model(args.model))
    tree = sample_tree(model, args.x, mc.seed_stream(args.seed, 0), args.max_nodes, args.max_generation)
    body = tree.to_json() if args.format == "json" else tree.to_lines()
    if args.format == "json":
        doc = json.loads(body)
        write_json(args, {"tree": doc})
    else:
        _emit(args, "\n".join(header_lines(args)) + "\n" + body)
    return EXIT_OK


def _read_tree(path):
    from .tree import tree_from_json, tree_from_lines
    text = Path(path).read_text()
    if not text.lstrip().startswith("{"):
        return tree_from_lines(text)
    doc = json.loads(text)
    # accept the simulate-tree output, which wraps the tree next to its metadata
    return tree_from_json(json.dumps(doc["tree"]) if "tree" in doc else text)


def cmd_contour(args) -> int:
    from .contour import jccp_from_tree
    path = jccp_from_tree(_read_tree(args.tree))
    _emit(args, "\n".join(header_lines(args)) + "\n" + path.to_csv())
    return EXIT_OK


def cmd_height(args) -> int:
    from .contour import JccpPath, height_and_rho, martingale_M
    path = JccpPath.from_csv(Path(args.path).read_text())
    rho = height_and_rho(path, args.t)
    payload = {"t": args.t, "H": rho.H, "rho": rho.masses.tolist(), "X_t": float(path.value(args.t))}
    if args.m is not None:
        payload["M"] = martingale_M(path, args.t, args.m)
    write_json(args, payload)
    return EXIT_OK


def _martingale_block(seed, block, lo, hi, model_cfg, x, times):
    from .contour import martingale_M
    from .pathsim import simulate_cpp_batch
    model = model_from_config(model_cfg)
    paths = simulate_cpp_batch(model, x, hi - lo, mc.seed_stream(seed, block), horizon=max(times))
    return [[martingale_M(p, t, model.m) for t in times] for p in paths]


def cmd_martingale_check(args) -> int:
    model = _require_lifespan(parse_model(args.model))
    times = _floats(args.t_grid)
    rows = np.array(_map_blocks(_martingale_block, args, args.n, {"lifespan": model.to_config()},
                                args.x, times))
    rep = mc.martingale_constancy(rows.T, args.x, times)
    out = []
    for t, col in zip(times, rows.T):
        est = mc.Estimator.from_samples(col)
        out.append([t, est.mean, est.stderr])
    write_csv(args, ["t", "mean_M", "stderr"], out)
    print(rep.line(), file=sys.stderr)
    return EXIT_OK if rep.passed else EXIT_FAIL


def _records_block(seed, block, lo, hi, model_cfg, x, t):
    from .contour import height_and_rho
    from .pathsim import record_stats, simulate_cpp_batch, time_reverse
    model = model_from_config(model_cfg)
    paths = simulate_cpp_batch(model, x, hi - lo, mc.seed_stream(seed, block), horizon=t)
    rows = []
    for i, p in enumerate(paths):
        if p.t0 is not None and p.t0 <= t:
            rows.append([lo + i, 1, None, None, None, 0.0, None])
            continue
        rs = record_stats(time_reverse(p, t))
        rho = height_and_rho(p, t)
        first = (rs.overshoots[0], rs.times[0]) if rs.count else (None, None)
        rows.append([lo + i, 0, rs.count, first[0], first[1], rho.total, rho.H])
    return rows


def cmd_records(args) -> int:
    model = _require_lifespan(parse_model(args.model))
    rows = _map_blocks(_records_block, args, args.n, {"lifespan": model.to_config()}, args.x, args.t)
    write_csv(args, ["replica", "absorbed", "R_t", "rho1", "T1", "X_t", "H_t"], rows)
    return EXIT_OK


def cmd_condition(args) -> int:
    from .conditioned import importance_estimate, rejection_condition, spine_sample
    model = _require_lifespan(parse_model(args.model))
    rng = mc.seed_stream(args.seed, 0)
    if args.route == "rejection":
        res = rejection_condition(model, args.x, args.a, args.n, rng)
        rows = [[i, tr.n_nodes, tr.max_generation, tr.total_length] for i, tr in enumerate(res.trees)]
        write_csv(args, ["index", "n_nodes", "max_generation", "total_length"], rows)
        print(f"acceptance rate {res.rate:.6g} (exact {res.predicted:.6g})", file=sys.stderr)
    elif args.route == "importance":
        t = args.t
        ws = importance_estimate(model, args.x, t, lambda p: float(p.value(t)), args.n, rng)
        rows = [[i, v, w] for i, (v, w) in enumerate(zip(ws.values, ws.weights))]
        write_csv(args, ["index", "X_t", "weight"], rows)
        mean_w = mc.Estimator.from_samples(ws.weights)
        print(f"mean weight {mean_w.mean:.6g} +- {mean_w.stderr:.3g}", file=sys.stderr)
    else:
        rows = []
        for i in range(args.n):
            sp = spine_sample(model, args.a, rng, graft_height=args.a)
            for k in range(sp.depth):
                rows.append([i, k, sp.A[k], sp.R[k], sp.T[k], len(sp.grafts[k])])
        write_csv(args, ["index", "k", "A", "R", "T", "n_grafts"], rows)
    return EXIT_OK


def cmd_spine_compare(args) -> int:
    from .conditioned import spine_vs_rejection
    model = _require_lifespan(parse_model(args.model))
    res = spine_vs_rejection(model, args.n_gen, args.k, args.n, mc.seed_stream(args.seed, 0), seed=args.seed)
    reps = res["reports"]
    write_json(args, {"accepted": res["accepted"], "trials": res["trials"],
                      "reports": {k: v.to_dict() for k, v in reps.items()}})
    ok = reps["lifetime"].passed and reps["birth_fraction"].passed
    return EXIT_OK if ok else EXIT_FAIL


def cmd_brownian(args) -> int:
    from . import brownian as bm
    model = BrownianModel(alpha=args.alpha, beta=args.beta)
    if args.what == "survival":
        a_vals = _floats(args.a)
        dts = _floats(args.dt)
        res = bm.survival_check(model, args.x, a_vals, dts, args.n, args.seed)
        rows = [[r["dt"], r["a"], r["estimate"], r["stderr"], r["target"]] for r in res["rows"]]
        write_csv(args, ["dt", "a", "estimate", "stderr", "target"], rows)
        return EXIT_OK
    if args.what == "kennedy":
        times = _floats(args.t_grid)
        dt = _floats(args.dt)[0]
        S = bm.kennedy_check(model, args.x, times, dt, args.n, args.seed)
        rep = mc.martingale_constancy(S, args.x, times)
        rows = []
        for t, col in zip(times, S):
            est = mc.Estimator.from_samples(col)
            rows.append([t, est.mean, est.stderr])
        write_csv(args, ["t", "mean_M", "stderr"], rows)
        print(rep.line(), file=sys.stderr)
        return EXIT_OK if rep.passed else EXIT_FAIL
    dt = _floats(args.dt)[0]
    res = bm.minimum_decomposition_check(model, args.x, args.t, dt, args.n, args.seed,
                                         proposal=args.proposal, target=args.target)
    w = res["weighted"]
    rows = [["weighted_ks", w.statistic, w.pvalue], ["control_ks", res["control"].statistic, res["control"].pvalue],
            ["p_half", res["p_half"], res["p_half_stderr"]], ["corr_I_post", res["corr_I_post"], res["corr_se"]],
            ["mean_weight", res["mean_weight"], res["mean_weight_stderr"]],
            ["n_eff", res["n_eff"], None], ["limit_gap", res["limit_gap"], None]]
    write_csv(args, ["quantity", "value", "aux"], rows)
    return EXIT_OK if w.passed else EXIT_FAIL


def cmd_suite(args) -> int:
    from .acceptance import run_all
    only = set(int(v) for v in args.only.split(",")) if args.only else None
    reps = run_all(seed=args.seed, scale=args.scale, only=only, log=lambda s: print(s, file=sys.stderr))
    write_json(args, {"passed": sum(r.passed for r in reps), "total": len(reps),
                      "reports": [r.to_dict() for r in reps]})
    return EXIT_OK if all(r.passed for r in reps) else EXIT_FAIL


# --- parser ---------------------------------------------------------------------------

def _common(p, seed=True, n=None):
    if seed:
        p.add_argument("--seed", type=int, default=0)
    if n is not None:
        p.add_argument("--n", type=int, default=n, help="number of replicas")
    p.add_argument("--out", default="-", help="output file (default stdout)")


def _parallel(p):
    p.add_argument("--shards", type=int, default=1)
    p.add_argument("--shard-index", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="heightcond", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate-tree", help="sample one splitting tree")
    p.add_argument("--model", required=True)
    p.add_argument("--x", type=float, required=True)
    p.add_argument("--format", choices=["lines", "json"], default="lines")
    p.add_argument("--max-nodes", type=int, default=10**6)
    p.add_argument("--max-generation", type=int, default=10**3)
    _common(p)
    p.set_defaults(func=cmd_simulate_tree)

    p = sub.add_parser("contour", help="contour path of a tree file")
    p.add_argument("--tree", required=True)
    _common(p, seed=False)
    p.set_defaults(func=cmd_contour)

    p = sub.add_parser("height", help="height and rho-measure of a path at time t")
    p.add_argument("--path", required=True)
    p.add_argument("--t", type=float, required=True)
    p.add_argument("--m", type=float, default=None, help="also evaluate the martingale with this m")
    _common(p, seed=False)
    p.set_defaults(func=cmd_height)

    p = sub.add_parser("martingale-check", help="mean of M over a time grid")
    p.add_argument("--model", required=True)
    p.add_argument("--x", type=float, required=True)
    p.add_argument("--t-grid", default="0.25,0.5,1,2,4")
    _common(p, n=10_000)
    _parallel(p)
    p.set_defaults(func=cmd_martingale_check)

    p = sub.add_parser("records", help="per-replica record statistics of the reversed path")
    p.add_argument("--model", required=True)
    p.add_argument("--x", type=float, required=True)
    p.add_argument("--t", type=float, required=True)
    _common(p, n=10_000)
    _parallel(p)
    p.set_defaults(func=cmd_records)

    p = sub.add_parser("condition", help="sample the conditioned law by one route")
    p.add_argument("--route", choices=["rejection", "importance", "spine"], required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--x", type=float, default=1.0)
    p.add_argument("--a", type=int, default=4, help="target generation (spine depth for --route spine)")
    p.add_argument("--t", type=float, default=1.0)
    _common(p, n=1000)
    p.set_defaults(func=cmd_condition)

    p = sub.add_parser("spine-compare", help="rejection-conditioned trees against the spine laws")
    p.add_argument("--model", required=True)
    p.add_argument("--n-gen", type=int, default=6)
    p.add_argument("--k", type=int, default=1)
    _common(p, n=20_000)
    p.set_defaults(func=cmd_spine_compare)

    p = sub.add_parser("brownian", help="Brownian-case checks")
    p.add_argument("what", choices=["survival", "kennedy", "minimum"])
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--x", type=float, default=1.0)
    p.add_argument("--a", default="0.5,1,2", help="heights for survival")
    p.add_argument("--t", type=float, default=10.0, help="time for minimum")
    p.add_argument("--t-grid", default="0.25,0.5,1", help="times for kennedy")
    p.add_argument("--proposal", choices=["tilted", "plain"], default="tilted",
                   help="sampling law for minimum: drift +α with exact reweighting, or P_x itself")
    p.add_argument("--target", choices=["uniform", "exact"], default="uniform",
                   help="law of I_t for minimum: t -> ∞ limit or the finite-t law")
    p.add_argument("--dt", default="1e-3", help="step (comma list for survival refinement)")
    _common(p, n=10_000)
    p.set_defaults(func=cmd_brownian)

    p = sub.add_parser("suite", help="run the acceptance matrix")
    p.add_argument("which", choices=["acceptance"])
    p.add_argument("--scale", type=float, default=1.0, help="multiply every sample size")
    p.add_argument("--only", default="", help="comma list of criterion numbers")
    p.add_argument("--seed", type=int, default=20240601)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_suite)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
