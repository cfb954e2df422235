"""Parent-to-child generalized belief propagation on clique region graphs.

A region over ``k`` links is a clique, so it has ``k + 1`` joint states:
index 0 is all idle and index ``t + 1`` means member ``t`` alone is active.
Messages ``m[(P, R)]`` are vectors over the states of the child ``R``.

Two routes compute the same quantities. :func:`region_belief` and
:func:`gbp_message_update` work edge by edge on dict tables and are what the
distributed agents call. :class:`GbpPlan` precomputes flat gather/scatter
indices over a whole region graph so that a full sweep is a handful of numpy
calls; the centralized solvers use it.
"""

from __future__ import annotations

import functools
import warnings
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .bp import CLAMP, InfeasibleTargetError, NumericalDegeneracyWarning
from .graph import ContentionGraph, enumerate_maximal_cliques
from .regions import (
    RegionGraph,
    build_region_graph,
    denominator_messages,
    external_messages_into,
    numerator_messages,
)

__all__ = [
    "GbpConfig",
    "GbpResult",
    "IgbpResult",
    "GbpPlan",
    "plan_for",
    "InfeasibleTargetError",
    "check_clique_feasibility",
    "gbp_message_update",
    "initial_region_messages",
    "project_state",
    "region_belief",
    "region_marginal",
    "run_gbp",
    "run_igbp",
]


@dataclass
class GbpConfig:
    tol: float = 1e-2
    max_iter: int = 1000
    alpha: float = 0.5
    record_history: bool = False

    def __post_init__(self):
        if self.tol < 0 or self.max_iter < 1:
            raise ValueError("need tol >= 0 and max_iter >= 1")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must lie in (0, 1]")


@dataclass
class GbpResult:
    th: dict[int, float]
    iterations: int
    converged: bool
    messages: dict[tuple, np.ndarray]
    beliefs: dict[tuple, np.ndarray]
    region_graph: RegionGraph
    history: list[dict[int, float]] = field(default_factory=list)


@dataclass
class IgbpResult:
    rho: dict[int, float]
    iterations: int
    converged: bool
    messages: dict[tuple, np.ndarray]
    region_graph: RegionGraph
    history: list[dict[int, float]] = field(default_factory=list)


def project_state(src: tuple, state: int, dst: tuple) -> int:
    """State index of sub-region ``dst`` induced by ``state`` of region ``src``."""
    if state == 0:
        return 0
    active = src[state - 1]
    return dst.index(active) + 1 if active in dst else 0


def region_marginal(key: tuple, belief: np.ndarray) -> dict[int, float]:
    """Per-member activity probability from a region belief."""
    return {v: float(belief[t + 1]) for t, v in enumerate(key)}


def _rho_lookup(rho, v) -> float:
    return float(rho) if isinstance(rho, (int, float)) else float(rho[v])


# ---------------------------------------------------------------------------
# edge-by-edge route


def initial_region_messages(rg: RegionGraph, rho=None, edges=None) -> dict[tuple, np.ndarray]:
    """``sum over s_{P minus R}`` of the intrinsic factors, normalized.

    With ``rho=None`` only the exclusion factors count, i.e. every intensity
    in ``P`` minus ``R`` is taken as 1. ``edges`` restricts the output.
    """
    out = {}
    for p, r in (rg.edges if edges is None else edges):
        extra = [v for v in p if v not in r]
        idle = 1.0 + sum(1.0 if rho is None else _rho_lookup(rho, v) for v in extra)
        vec = np.ones(len(r) + 1)
        vec[0] = idle
        out[(p, r)] = vec / vec.sum()
    return out


def _get(msgs, edge):
    try:
        return msgs[edge]
    except KeyError:
        raise KeyError(f"missing region message {edge[0]}->{edge[1]}") from None


def _guard(values: np.ndarray) -> np.ndarray:
    if np.any(values < CLAMP):
        warnings.warn("region message hit the division clamp", NumericalDegeneracyWarning, stacklevel=3)
        return np.maximum(values, CLAMP)
    return values


def _external_product(msgs, edges, key) -> np.ndarray:
    out = np.ones(len(key) + 1)
    for p2, r2 in edges:
        m = _get(msgs, (p2, r2))
        out *= np.array([m[project_state(key, s, r2)] for s in range(len(key) + 1)])
    return out


def region_belief(rg: RegionGraph, rho, msgs, key) -> np.ndarray:
    """Normalized belief of region ``key``: intrinsic weights times all
    messages entering its descendant closure from outside."""
    key = tuple(key)
    phi = np.array([1.0] + [_rho_lookup(rho, v) for v in key])
    raw = phi * _external_product(msgs, sorted(external_messages_into(rg, key)), key)
    return raw / raw.sum()


def gbp_message_update(rg: RegionGraph, rho, msgs, edge, previous=None, alpha: float = 1.0) -> np.ndarray:
    """New normalized message on ``edge = (P, R)``, damped against ``previous``."""
    p, r = tuple(edge[0]), tuple(edge[1])
    if (p, r) not in set(rg.edges):
        raise KeyError(f"{p}->{r} is not an edge of the region graph")
    num_edges = sorted(numerator_messages(rg, p, r))
    den_edges = sorted(denominator_messages(rg, p, r))
    weight = np.array([1.0] + [(_rho_lookup(rho, v) if v not in r else 1.0) for v in p])
    weight *= _external_product(msgs, num_edges, p)
    num = np.zeros(len(r) + 1)
    for s in range(len(p) + 1):
        num[project_state(p, s, r)] += weight[s]
    den = _external_product(msgs, den_edges, r)
    new = num / _guard(den)
    new = new / new.sum()
    if previous is not None and alpha < 1.0:
        new = (1.0 - alpha) * np.asarray(previous) + alpha * new
    return new


# ---------------------------------------------------------------------------
# vectorized route


def _group_logsumexp(values: np.ndarray, groups: np.ndarray, n: int) -> np.ndarray:
    peak = np.full(n, -np.inf)
    np.maximum.at(peak, groups, values)
    safe = np.where(np.isfinite(peak), peak, 0.0)
    total = np.bincount(groups, weights=np.exp(values - safe[groups]), minlength=n)
    with np.errstate(divide="ignore"):
        return safe + np.log(total)


class GbpPlan:
    """Flat index layout of every message, region belief and update term."""

    def __init__(self, rg: RegionGraph, ids):
        self.rg = rg
        self.ids = list(ids)
        pos = {v: k for k, v in enumerate(self.ids)}
        none = len(self.ids)  # index of the log(1) = 0 sentinel
        self.edges = list(rg.edges)
        self.edge_index = {e: k for k, e in enumerate(self.edges)}
        sizes = np.array([len(r) + 1 for _, r in self.edges], dtype=int)
        self.offset = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(int)
        self.n_msg = int(sizes.sum())
        self.msg_edge = np.repeat(np.arange(len(self.edges)), sizes)

        def gather(key, ext_edges, rows_start):
            rows, cols = [], []
            for e in ext_edges:
                base = self.offset[self.edge_index[e]]
                for s in range(len(key) + 1):
                    rows.append(rows_start + s)
                    cols.append(base + project_state(key, s, e[1]))
            return rows, cols

        # messages: one row per parent state
        row_link, row_out, num_rows, num_cols, den_rows, den_cols = [], [], [], [], [], []
        n_rows = 0
        for k, (p, r) in enumerate(self.edges):
            for s in range(len(p) + 1):
                active = p[s - 1] if s else None
                row_link.append(pos[active] if active is not None and active not in r else none)
                row_out.append(self.offset[k] + project_state(p, s, r))
            a, b = gather(p, sorted(numerator_messages(rg, p, r)), n_rows)
            num_rows += a
            num_cols += b
            a, b = gather(r, sorted(denominator_messages(rg, p, r)), self.offset[k])
            den_rows += a
            den_cols += b
            n_rows += len(p) + 1
        self.n_rows = n_rows
        self.row_link = np.array(row_link, dtype=int)
        self.row_out = np.array(row_out, dtype=int)
        self.num_rows = np.array(num_rows, dtype=int)
        self.num_cols = np.array(num_cols, dtype=int)
        self.den_rows = np.array(den_rows, dtype=int)
        self.den_cols = np.array(den_cols, dtype=int)

        # region beliefs
        self.regions = rg.regions
        self.region_index = {r: k for k, r in enumerate(self.regions)}
        rsizes = np.array([len(r) + 1 for r in self.regions], dtype=int)
        self.b_offset = np.concatenate([[0], np.cumsum(rsizes)[:-1]]).astype(int)
        self.n_b = int(rsizes.sum())
        self.b_region = np.repeat(np.arange(len(self.regions)), rsizes)
        b_link, b_rows, b_cols = [], [], []
        for k, key in enumerate(self.regions):
            b_link += [none] + [pos[v] for v in key]
            a, b = gather(key, sorted(external_messages_into(rg, key)), self.b_offset[k])
            b_rows += a
            b_cols += b
        self.b_link = np.array(b_link, dtype=int)
        self.b_rows = np.array(b_rows, dtype=int)
        self.b_cols = np.array(b_cols, dtype=int)

        # smallest region of each link and the slot of "link active" in it
        owner = [self.region_index[rg.smallest_region(v)] for v in self.ids]
        self.owner = np.array(owner, dtype=int)
        self.owner_idle = self.b_offset[self.owner]
        self.owner_slot = np.array(
            [self.b_offset[o] + self.regions[o].index(v) + 1 for o, v in zip(owner, self.ids)], dtype=int
        )

    # -- conversions
    def log_rho(self, rho: np.ndarray) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.append(np.log(rho), 0.0)

    def table(self, flat: np.ndarray) -> dict[tuple, np.ndarray]:
        return {e: flat[o:o + len(e[1]) + 1].copy() for e, o in zip(self.edges, self.offset)}

    def flat(self, table: Mapping) -> np.ndarray:
        out = np.empty(self.n_msg)
        for e, o in zip(self.edges, self.offset):
            out[o:o + len(e[1]) + 1] = _get(table, e)
        return out

    def vector(self, values) -> np.ndarray:
        if isinstance(values, (int, float)):
            return np.full(len(self.ids), float(values))
        return np.array([float(values[v]) for v in self.ids])

    def as_dict(self, vec) -> dict[int, float]:
        return dict(zip(self.ids, np.asarray(vec, dtype=float).tolist()))

    # -- kernels
    def initial(self, rho: np.ndarray | None) -> np.ndarray:
        """Flat initial messages; ``rho=None`` counts exclusion factors only."""
        if not self.n_msg:
            return np.zeros(0)
        lr = self.log_rho(np.ones(len(self.ids)) if rho is None else rho)
        log = _group_logsumexp(lr[self.row_link], self.row_out, self.n_msg)
        return self._normalize(np.exp(log - log.max()))

    def _normalize(self, flat: np.ndarray) -> np.ndarray:
        tot = np.bincount(self.msg_edge, weights=flat, minlength=len(self.edges))
        return flat / tot[self.msg_edge]

    def external_log(self, log_m: np.ndarray) -> np.ndarray:
        """Log product of external messages per (region, state) slot."""
        return np.bincount(self.b_rows, weights=log_m[self.b_cols], minlength=self.n_b)

    def beliefs(self, rho: np.ndarray, msgs: np.ndarray) -> np.ndarray:
        log_m = np.log(np.maximum(msgs, CLAMP))
        raw = self.log_rho(rho)[self.b_link] + self.external_log(log_m)
        lse = _group_logsumexp(raw, self.b_region, len(self.regions))
        return np.exp(raw - lse[self.b_region])

    def throughputs(self, beliefs: np.ndarray) -> np.ndarray:
        return beliefs[self.owner_slot]

    def sweep(self, rho: np.ndarray, msgs: np.ndarray, alpha: float) -> np.ndarray:
        if not self.n_msg:
            return msgs
        if np.any(msgs < CLAMP):
            warnings.warn("region message hit the division clamp", NumericalDegeneracyWarning, stacklevel=2)
        log_m = np.log(np.maximum(msgs, CLAMP))
        rows = self.log_rho(rho)[self.row_link]
        rows += np.bincount(self.num_rows, weights=log_m[self.num_cols], minlength=self.n_rows)
        num = _group_logsumexp(rows, self.row_out, self.n_msg)
        den = np.bincount(self.den_rows, weights=log_m[self.den_cols], minlength=self.n_msg)
        log_new = num - den
        peak = np.full(len(self.edges), -np.inf)
        np.maximum.at(peak, self.msg_edge, log_new)
        new = self._normalize(np.exp(log_new - peak[self.msg_edge]))
        if alpha < 1.0:
            new = (1.0 - alpha) * msgs + alpha * new
        return new


@functools.lru_cache(maxsize=64)
def plan_for(g: ContentionGraph) -> GbpPlan:
    return GbpPlan(build_region_graph(g), g.vertices)


def _relative_change(new, old, floor=1e-12) -> float:
    if not len(new):
        return 0.0
    return float(np.max(np.abs(new - old) / np.maximum(np.abs(old), floor)))


def run_gbp(g: ContentionGraph, rho, cfg: GbpConfig | None = None) -> GbpResult:
    """GBP throughputs; converged when no region-belief entry moves by more than
    ``tol`` relative between sweeps."""
    cfg = cfg or GbpConfig()
    plan = plan_for(g)
    r = plan.vector(rho)
    msgs = plan.initial(r)
    b = plan.beliefs(r, msgs)
    history = [plan.as_dict(plan.throughputs(b))] if cfg.record_history else []
    converged = False
    it = 0
    for it in range(1, cfg.max_iter + 1):
        msgs = plan.sweep(r, msgs, cfg.alpha)
        b_new = plan.beliefs(r, msgs)
        if cfg.record_history:
            history.append(plan.as_dict(plan.throughputs(b_new)))
        change = _relative_change(b_new, b)
        b = b_new
        if change < cfg.tol:
            converged = True
            break
    beliefs = {key: b[o:o + len(key) + 1].copy() for key, o in zip(plan.regions, plan.b_offset)}
    return GbpResult(plan.as_dict(plan.throughputs(b)), it, converged, plan.table(msgs), beliefs,
                     plan.rg, history)


def check_clique_feasibility(g: ContentionGraph, target: Mapping[int, float]):
    """Raise :class:`InfeasibleTargetError` if some maximal clique needs more
    than all of the airtime, or a target is outside (0, 1)."""
    for v in g.vertices:
        if not 0.0 < float(target[v]) < 1.0:
            raise InfeasibleTargetError(f"target of link {v} must lie strictly inside (0, 1)")
    for c in enumerate_maximal_cliques(g):
        total = sum(float(target[v]) for v in c)
        if total >= 1.0:
            raise InfeasibleTargetError(f"clique {c} target sum {total:.6g} >= 1")


def igbp_intensities(plan: GbpPlan, t: np.ndarray, msgs: np.ndarray) -> np.ndarray:
    """Solve each link's weight from its pinned smallest-region belief."""
    ext = plan.external_log(np.log(np.maximum(msgs, CLAMP)))
    idle = 1.0 - _region_target_sum(plan, t)[plan.owner]
    return (t / idle) * np.exp(ext[plan.owner_idle] - ext[plan.owner_slot])


def _region_target_sum(plan: GbpPlan, t: np.ndarray) -> np.ndarray:
    link_slots = plan.b_link != len(plan.ids)
    return np.bincount(plan.b_region[link_slots], weights=t[plan.b_link[link_slots]],
                       minlength=len(plan.regions))


def run_igbp(g: ContentionGraph, target, cfg: GbpConfig | None = None) -> IgbpResult:
    """Inverse GBP: intensities whose GBP region beliefs match ``target``.

    Each sweep first solves every intensity from the previous messages, then
    updates all messages under those intensities. Converged on the relative
    change of the intensities.
    """
    cfg = cfg or GbpConfig()
    check_clique_feasibility(g, target)
    plan = plan_for(g)
    t = plan.vector(target)
    msgs = plan.initial(None)
    rho = igbp_intensities(plan, t, msgs)
    history = [plan.as_dict(rho)] if cfg.record_history else []
    converged = False
    it = 0
    for it in range(1, cfg.max_iter + 1):
        msgs = plan.sweep(rho, msgs, cfg.alpha)
        rho_new = igbp_intensities(plan, t, msgs)
        if cfg.record_history:
            history.append(plan.as_dict(rho_new))
        change = _relative_change(rho_new, rho)
        rho = rho_new
        if change < cfg.tol:
            converged = True
            break
    return IgbpResult(plan.as_dict(rho), it, converged, plan.table(msgs), plan.rg, history)
