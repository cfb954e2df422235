"""Exact stationary distribution and throughputs of the ideal CSMA network.

The stationary probability of a feasible state (an independent set ``s``) is
``prod(rho_i for i in s) / Z``; link throughput is the marginal probability
that the link is active, ``Z_i / Z``.

Two exact routes are provided. Enumeration materializes every independent set
and is capped at :data:`~csmabp.graph.ENUMERATION_CAP` links. The junction-tree
route runs sum-product on a clique tree of a min-fill elimination order; it is
exact for any graph whose induced width stays below ``max_width``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .graph import (
    ENUMERATION_CAP,
    ContentionGraph,
    GraphError,
    GraphTooLargeError,
    independent_set_matrix,
)

RHO_0 = 83 / 15.5


@dataclass
class StationaryDistribution:
    prob: dict[frozenset, float]
    Z: float
    Z_i: dict[int, float]

    def throughputs(self) -> dict[int, float]:
        return {i: zi / self.Z for i, zi in self.Z_i.items()}


def _rho_vector(g: ContentionGraph, rho: Mapping[int, float] | float) -> np.ndarray:
    if isinstance(rho, (int, float)):
        return np.full(len(g), float(rho))
    try:
        vec = np.array([float(rho[v]) for v in g.vertices])
    except KeyError as exc:
        raise GraphError(f"missing access intensity for link {exc.args[0]}") from None
    if np.any(vec < 0):
        raise ValueError("access intensities must be non-negative")
    return vec


def uniform(g: ContentionGraph, value: float) -> dict[int, float]:
    return {v: float(value) for v in g.vertices}


def _state_weights(g: ContentionGraph, rho_vec: np.ndarray, cap: int):
    mat = independent_set_matrix(g, cap)
    with np.errstate(divide="ignore"):
        log_rho = np.log(rho_vec)
    # masked sum so that a zero-intensity link contributes -inf only where active
    logw = np.where(mat, log_rho, 0.0).sum(axis=1) if len(g) else np.zeros(len(mat))
    return mat, logw


def partition_function(
    g: ContentionGraph, rho: Mapping[int, float] | float, cap: int = ENUMERATION_CAP
) -> StationaryDistribution:
    """Exact stationary distribution by enumeration of independent sets."""
    rho_vec = _rho_vector(g, rho)
    mat, logw = _state_weights(g, rho_vec, cap)
    w = np.exp(logw)
    Z = float(w.sum())
    Z_i = {v: float(w[mat[:, k]].sum()) for k, v in enumerate(g.vertices)}
    verts = np.array(g.vertices, dtype=int)
    prob = {frozenset(verts[row].tolist()): float(p) for row, p in zip(mat, w / Z)}
    return StationaryDistribution(prob=prob, Z=Z, Z_i=Z_i)


def exact_throughputs(
    g: ContentionGraph,
    rho: Mapping[int, float] | float,
    method: str = "auto",
    cap: int = ENUMERATION_CAP,
) -> dict[int, float]:
    """Exact per-link throughput.

    ``method`` is ``"enumerate"``, ``"junction"`` or ``"auto"`` (enumeration up
    to 12 links, junction tree beyond).
    """
    if method == "auto":
        method = "enumerate" if len(g) <= 12 else "junction"
    rho_vec = _rho_vector(g, rho)
    if method == "enumerate":
        mat, logw = _state_weights(g, rho_vec, cap)
        w = np.exp(logw - logw.max())
        th = (w @ mat) / w.sum()
        return dict(zip(g.vertices, th.tolist()))
    if method == "junction":
        return junction_tree_marginals(g, rho_vec)[0]
    raise ValueError(f"unknown method {method!r}")


def log_partition(g: ContentionGraph, rho: Mapping[int, float] | float) -> float:
    return junction_tree_marginals(g, _rho_vector(g, rho))[1]


def stationary_entropy(g: ContentionGraph, rho: Mapping[int, float] | float) -> float:
    """Entropy of the stationary distribution, ``-sum u_s log u_s``.

    Uses ``H = log Z - sum_i th_i log rho_i`` so it scales past enumeration.
    """
    rho_vec = _rho_vector(g, rho)
    th, logz = junction_tree_marginals(g, rho_vec)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.array([th[v] for v in g.vertices]) * np.log(rho_vec)
    return logz - float(np.nansum(terms))


# ---------------------------------------------------------------------------
# junction tree


def _min_fill_order(g: ContentionGraph) -> list[int]:
    nbrs = {v: set(g.adj[v]) for v in g.vertices}
    order = []
    while nbrs:
        def fill(v):
            ns = list(nbrs[v])
            return sum(1 for a in range(len(ns)) for b in range(a + 1, len(ns))
                       if ns[b] not in nbrs[ns[a]])
        v = min(nbrs, key=lambda u: (fill(u), len(nbrs[u]), u))
        ns = nbrs.pop(v)
        for a in ns:
            nbrs[a].discard(v)
            nbrs[a] |= ns - {a}
        order.append(v)
    return order


def _align(table: np.ndarray, scope: tuple, target: tuple) -> np.ndarray:
    """View ``table`` over ``scope`` as broadcastable against ``target``."""
    perm = sorted(range(len(scope)), key=lambda k: target.index(scope[k]))
    t = np.transpose(table, perm)
    shape = [2 if v in scope else 1 for v in target]
    return t.reshape(shape)


def junction_tree_marginals(
    g: ContentionGraph, rho_vec: np.ndarray, max_width: int = 22
) -> tuple[dict[int, float], float]:
    """All single-link marginals and ``log Z`` via clique-tree calibration."""
    if len(g) == 0:
        return {}, 0.0
    rho = dict(zip(g.vertices, rho_vec.tolist()))
    order = _min_fill_order(g)
    pos = {v: k for k, v in enumerate(order)}

    # elimination cliques; clique of v is v plus its later neighbors in the fill graph
    nbrs = {v: set(g.adj[v]) for v in g.vertices}
    scope: dict[int, tuple] = {}
    for v in order:
        later = nbrs.pop(v)
        for a in later:
            nbrs[a].discard(v)
            nbrs[a] |= later - {a}
        scope[v] = tuple(sorted(later | {v}, key=lambda u: pos[u]))
        if len(scope[v]) > max_width:
            raise GraphTooLargeError(f"induced width {len(scope[v])} exceeds {max_width}")

    parent = {v: (scope[v][1] if len(scope[v]) > 1 else None) for v in order}
    children: dict[int, list] = {v: [] for v in order}
    for v, p in parent.items():
        if p is not None:
            children[p].append(v)

    # clique potentials: unary factor of v and every edge (v, later neighbor)
    pot: dict[int, np.ndarray] = {}
    for v in order:
        sc = scope[v]
        table = np.ones((2,) * len(sc))
        unary = np.array([1.0, rho[v]])
        table = table * _align(unary, (v,), sc)
        for u in g.adj[v]:
            if pos[u] > pos[v]:
                table = table * _align(np.array([[1.0, 1.0], [1.0, 0.0]]), (v, u), sc)
        pot[v] = table

    # upward pass in elimination order: children are eliminated before parents
    up: dict[int, np.ndarray] = {}
    log_scale = 0.0
    for v in order:
        sc = scope[v]
        belief = pot[v]
        for c in children[v]:
            belief = belief * _align(up[c], scope[c][1:], sc)
        msg = belief.sum(axis=0)
        if parent[v] is None:
            total = float(msg)
            log_scale += math.log(total)
            continue
        peak = float(msg.max())
        log_scale += math.log(peak)
        up[v] = msg / peak

    # downward pass
    down: dict[int, np.ndarray] = {}
    marg: dict[int, float] = {}
    for v in reversed(order):
        sc = scope[v]
        belief = pot[v]
        for c in children[v]:
            belief = belief * _align(up[c], scope[c][1:], sc)
        if parent[v] is not None:
            belief = belief * _align(down[v], sc[1:], sc)
        belief = belief / belief.sum()
        on = belief.reshape(2, -1).sum(axis=1)
        marg[v] = float(on[1])
        for c in children[v]:
            sep = scope[c][1:]
            drop = tuple(k for k, u in enumerate(sc) if u not in sep)
            kept = tuple(u for u in sc if u in sep)
            msg = belief.sum(axis=drop) if drop else belief
            msg = _align(msg, kept, sep).reshape((2,) * len(sep))
            msg = msg / np.maximum(up[c], 1e-300)
            down[c] = msg / msg.max()
    th = {v: marg[v] for v in g.vertices}
    return th, log_scale


# ---------------------------------------------------------------------------
# tree partition functions


def _tree_partition(g: ContentionGraph, rho: Mapping[int, float], root: int, banned: int):
    """Partition functions of the subtree hanging off ``root`` away from ``banned``.

    Returns ``(Z(L(root)), Z(L*(root)))`` where ``L*`` removes ``root`` itself.
    """
    stack = [(root, banned, False)]
    result: dict[int, tuple[float, float]] = {}
    while stack:
        v, par, done = stack.pop()
        kids = [u for u in g.adj[v] if u != par]
        if not done:
            stack.append((v, par, True))
            stack.extend((u, v, False) for u in kids)
            continue
        with_off = math.prod(result[u][0] for u in kids)
        with_on = math.prod(result[u][1] for u in kids)
        result[v] = (with_off + rho[v] * with_on, with_off)
    return result[root]


def subtree_partitions(
    g: ContentionGraph, rho: Mapping[int, float] | float, edge: tuple[int, int]
) -> tuple[float, float]:
    """``(Z(L(j)), Z(L*(j)))`` for tree edge ``(i, j)``.

    ``L(j)`` is the component containing ``j`` once the edge is cut and
    ``L*(j)`` is that component without ``j``.
    """
    if not g.is_tree():
        raise GraphError("graph is not a tree")
    i, j = edge
    if not g.has_edge(i, j):
        raise GraphError(f"({i}, {j}) is not an edge")
    rho_map = dict(zip(g.vertices, _rho_vector(g, rho).tolist()))
    return _tree_partition(g, rho_map, j, i)
