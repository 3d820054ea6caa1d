"""Chronological (splitting) trees and their generation processes.

Trees are stored as a node arena in breadth-first order. Children of a node
are contiguous and sorted youngest first (decreasing birth level), which is
the order the contour visits them; the Ulam-Harris label of the i-th
youngest child of ``u`` is ``u + (i,)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model import LifespanMeasure, ModelError

DEFAULT_MAX_NODES = 10**6
DEFAULT_MAX_GENERATION = 10**3
ROOT_LABEL = "root"


class TreeError(ValueError):
    pass


class IndeterminateError(TreeError):
    """The question depends on generations removed by truncation."""


@dataclass(eq=False)
class ChronologicalTree:
    alpha: np.ndarray
    omega: np.ndarray
    parent: np.ndarray
    generation: np.ndarray
    first_child: np.ndarray
    n_children: np.ndarray
    truncated: bool = False
    complete_generations: Optional[int] = None

    def __post_init__(self):
        if self.complete_generations is None:
            self.complete_generations = int(self.generation.max())

    @property
    def n_nodes(self) -> int:
        return len(self.alpha)

    @property
    def x(self) -> float:
        return float(self.omega[0] - self.alpha[0])

    @property
    def lifetimes(self) -> np.ndarray:
        return self.omega - self.alpha

    @property
    def total_length(self) -> float:
        return float(np.sum(self.lifetimes))

    @property
    def max_generation(self) -> int:
        return int(self.generation.max())

    def children(self, i: int) -> range:
        k = int(self.n_children[i])
        if k == 0:
            return range(0)
        f = int(self.first_child[i])
        return range(f, f + k)

    def label(self, i: int) -> tuple:
        out = []
        while i > 0:
            p = int(self.parent[i])
            out.append(i - int(self.first_child[p]) + 1)
            i = p
        return tuple(reversed(out))

    def labels(self) -> list:
        labs = [()] * self.n_nodes
        for i in range(1, self.n_nodes):
            p = int(self.parent[i])
            labs[i] = labs[p] + (i - int(self.first_child[p]) + 1,)
        return labs

    def index_of(self, label) -> int:
        i = 0
        for j in label:
            if j < 1 or j > self.n_children[i]:
                raise KeyError(label)
            i = int(self.first_child[i]) + j - 1
        return i

    def subtree_height(self) -> np.ndarray:
        """Largest generation present in the subtree of each node."""
        h = self.generation.copy()
        for g in range(self.max_generation, 0, -1):
            sel = self.generation == g
            np.maximum.at(h, self.parent[sel], h[sel])
        return h

    def validate(self) -> None:
        """Raise TreeError unless the chronological-tree axioms hold."""
        a, w = self.alpha, self.omega
        if a[0] != 0.0:
            raise TreeError("root must be born at level 0")
        if np.any(w <= a):
            raise TreeError("every individual needs a positive lifetime")
        for i in range(self.n_nodes):
            ch = self.children(i)
            if len(ch) == 0:
                continue
            ca = a[ch.start:ch.stop]
            if np.any(ca <= a[i]) or np.any(ca >= w[i]):
                raise TreeError(f"node {self.label(i)} has a child born outside its life")
            if np.any(np.diff(ca) >= 0):
                raise TreeError(f"children of {self.label(i)} are not in strictly decreasing birth order")
            if np.any(self.parent[ch.start:ch.stop] != i):
                raise TreeError("parent/children arrays disagree")

    def same_as(self, other: "ChronologicalTree", atol: float = 1e-12) -> bool:
        return (
            self.n_nodes == other.n_nodes
            and np.array_equal(self.parent, other.parent)
            and np.array_equal(self.n_children, other.n_children)
            and np.allclose(self.alpha, other.alpha, rtol=0, atol=atol)
            and np.allclose(self.omega, other.omega, rtol=0, atol=atol)
        )

    # --- serialization -----------------------------------------------------
    def to_lines(self) -> str:
        out = []
        for lab, a, w in zip(self.labels(), self.alpha, self.omega):
            name = ".".join(map(str, lab)) if lab else ROOT_LABEL
            out.append(f"{name} {float(a)!r} {float(w)!r}")
        return "\n".join(out) + "\n"

    def to_json(self) -> str:
        nodes = [{"label": list(lab), "alpha": float(a), "omega": float(w)}
                 for lab, a, w in zip(self.labels(), self.alpha, self.omega)]
        return json.dumps({"truncated": self.truncated,
                           "complete_generations": self.complete_generations,
                           "nodes": nodes})


def tree_from_records(records, truncated: bool = False, complete_generations=None) -> ChronologicalTree:
    """Build a tree from ``(label_tuple, alpha, omega)`` records in any order."""
    recs = sorted(((tuple(lab), float(a), float(w)) for lab, a, w in records),
                  key=lambda r: (len(r[0]), r[0]))
    if not recs or recs[0][0] != ():
        raise TreeError("missing root")
    index = {lab: i for i, (lab, _, _) in enumerate(recs)}
    n = len(recs)
    parent = np.full(n, -1, dtype=np.int64)
    gen = np.zeros(n, dtype=np.int64)
    first = np.zeros(n, dtype=np.int64)
    nch = np.zeros(n, dtype=np.int64)
    for i, (lab, _, _) in enumerate(recs[1:], start=1):
        p = index.get(lab[:-1])
        if p is None:
            raise TreeError(f"node {lab} has no parent in the tree")
        parent[i] = p
        gen[i] = len(lab)
        if nch[p] == 0:
            first[p] = i
        nch[p] += 1
        if lab[-1] != nch[p]:
            raise TreeError(f"sibling labels of {lab[:-1]} are not 1..k")
    alpha = np.array([r[1] for r in recs])
    omega = np.array([r[2] for r in recs])
    return ChronologicalTree(alpha, omega, parent, gen, first, nch, truncated, complete_generations)


def tree_from_lines(text: str) -> ChronologicalTree:
    records = []
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        name, a, w = line.split()
        lab = () if name == ROOT_LABEL else tuple(int(s) for s in name.split("."))
        records.append((lab, float(a), float(w)))
    return tree_from_records(records)


def tree_from_json(text: str) -> ChronologicalTree:
    doc = json.loads(text)
    return tree_from_records(((n["label"], n["alpha"], n["omega"]) for n in doc["nodes"]),
                             doc.get("truncated", False), doc.get("complete_generations"))


# --- sampling -------------------------------------------------------------------

def sample_forest(measure: LifespanMeasure, n: int, x, rng: np.random.Generator,
                  max_nodes: int = DEFAULT_MAX_NODES,
                  max_generation: int = DEFAULT_MAX_GENERATION) -> list[ChronologicalTree]:
    """``n`` independent splitting trees, simulated generation by generation.

    ``x`` is the ancestor lifetime (scalar or per-tree array); ``None`` draws it
    from ``Lambda / b``, i.e. a tree under P rather than P_x. Each individual
    gets a Poisson(b * lifetime) number of children at i.i.d. uniform ages,
    which is the rate-b Poisson birth process on its life.
    """
    if n < 0:
        raise ModelError("n must be nonnegative")
    if max_nodes < 1 or max_generation < 0:
        raise ModelError("caps must be positive")
    if n == 0:
        return []
    b = measure.b
    if x is None:
        zeta0 = np.asarray(measure.sample(rng, n), dtype=float)
    else:
        zeta0 = np.broadcast_to(np.asarray(x, dtype=float), (n,)).copy()
        if np.any(zeta0 <= 0):
            raise ModelError("ancestor lifetime x must be positive")

    tid = np.arange(n)
    alpha = np.zeros(n)
    zeta = zeta0
    local = np.zeros(n, dtype=np.int64)
    parent = np.full(n, -1, dtype=np.int64)
    node_count = np.ones(n, dtype=np.int64)
    complete = np.full(n, -1, dtype=np.int64)
    truncated = np.zeros(n, dtype=bool)

    gens = []
    g = 0
    while tid.size:
        first = np.zeros(tid.size, dtype=np.int64)
        k = np.zeros(tid.size, dtype=np.int64)
        stop = (node_count[tid] > max_nodes) if g < max_generation else np.ones(tid.size, dtype=bool)
        if np.any(stop):
            hit = np.unique(tid[stop])
            truncated[hit] = True
            complete[hit] = g
        expand = ~stop & ~truncated[tid]
        k[expand] = rng.poisson(b * zeta[expand])
        total = int(k.sum())
        gens.append((tid, alpha, alpha + zeta, parent, local, first, k, g))
        if total == 0:
            break
        rep = np.repeat(np.arange(tid.size), k)
        u = rng.random(total)
        order = np.lexsort((-u, rep))
        rep, u = rep[order], u[order]
        c_tid = tid[rep]
        c_alpha = alpha[rep] + u * zeta[rep]
        c_zeta = np.asarray(measure.sample(rng, total), dtype=float)
        c_parent = local[rep]
        rank = np.arange(total) - np.searchsorted(c_tid, c_tid, side="left")
        c_local = node_count[c_tid] + rank
        node_count += np.bincount(c_tid, minlength=n)
        start = np.cumsum(k) - k
        has = k > 0
        first[has] = c_local[start[has]]
        tid, alpha, zeta, parent, local = c_tid, c_alpha, c_zeta, c_parent, c_local
        g += 1

    cols = [np.concatenate([gg[j] for gg in gens]) for j in range(7)]
    gen_col = np.concatenate([np.full(gg[0].size, gg[7], dtype=np.int64) for gg in gens])
    c_tid, c_alpha, c_omega, c_parent, c_local, c_first, c_k = cols
    order = np.lexsort((c_local, c_tid))
    c_tid, c_alpha, c_omega, c_parent, c_first, c_k, gen_col = (
        arr[order] for arr in (c_tid, c_alpha, c_omega, c_parent, c_first, c_k, gen_col))
    bounds = np.searchsorted(c_tid, np.arange(n + 1))
    trees = []
    for i in range(n):
        s, e = bounds[i], bounds[i + 1]
        trees.append(ChronologicalTree(
            c_alpha[s:e], c_omega[s:e], c_parent[s:e], gen_col[s:e], c_first[s:e], c_k[s:e],
            truncated=bool(truncated[i]),
            complete_generations=int(complete[i]) if truncated[i] else None,
        ))
    return trees


def sample_tree(measure: LifespanMeasure, x, rng: np.random.Generator,
                max_nodes: int = DEFAULT_MAX_NODES,
                max_generation: int = DEFAULT_MAX_GENERATION) -> ChronologicalTree:
    return sample_forest(measure, 1, x, rng, max_nodes, max_generation)[0]


# --- generation processes ---------------------------------------------------------

@dataclass
class GenerationStats:
    Z: np.ndarray
    J: np.ndarray
    truncated: bool = False


def generation_stats(tree: ChronologicalTree) -> GenerationStats:
    """Z_n = number of individuals of generation n, J_n = sum of their lifetimes.

    For complete trees a trailing zero generation is appended; for truncated
    trees the arrays stop at the last complete generation.
    """
    gmax = tree.complete_generations
    gen = tree.generation
    keep = gen <= gmax
    Z = np.bincount(gen[keep], minlength=gmax + 1)
    J = np.bincount(gen[keep], weights=tree.lifetimes[keep], minlength=gmax + 1)
    if not tree.truncated:
        Z = np.append(Z, 0)
        J = np.append(J, 0.0)
    return GenerationStats(Z=Z, J=J, truncated=tree.truncated)


def alive_at_generation(tree: ChronologicalTree, n: int) -> bool:
    if n < 0:
        raise TreeError("generation must be nonnegative")
    if n <= tree.complete_generations:
        return bool(np.any(tree.generation == n))
    if tree.truncated:
        raise IndeterminateError(f"tree truncated at generation {tree.complete_generations} < {n}")
    return False
