"""Pairwise belief propagation on the contention graph.

Every link is a binary variable with weights phi(0) = 1, phi(1) = rho and
neighbors may not both be active. Messages are pairs ``(m(0), m(1))`` indexed
by directed edge ``(j, i)`` meaning "from j to i", and beliefs are
``b_i(s) ∝ phi_i(s) * prod_j m_ji(s)``. All sweeps are synchronous: every
message of sweep n is computed from the table of sweep n-1.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .graph import ContentionGraph

CLAMP = 1e-300


class NumericalDegeneracyWarning(RuntimeWarning):
    pass


class InfeasibleTargetError(ValueError):
    """Target throughputs cannot be realized by any access intensities."""


@dataclass
class BpConfig:
    tol: float = 1e-2
    max_iter: int = 1000
    damping: float = 0.0
    normalize: bool = True
    record_history: bool = False

    def __post_init__(self):
        if self.tol < 0 or self.max_iter < 1:
            raise ValueError("need tol >= 0 and max_iter >= 1")
        if not 0.0 <= self.damping < 1.0:
            raise ValueError("damping must lie in [0, 1)")


@dataclass
class BpResult:
    th: dict[int, float]
    iterations: int
    converged: bool
    messages: dict[tuple[int, int], np.ndarray]
    history: list[dict[int, float]] = field(default_factory=list)


@dataclass
class IbpResult:
    rho: dict[int, float]
    iterations: int
    converged: bool
    messages: dict[tuple[int, int], np.ndarray]
    history: list[dict[int, float]] = field(default_factory=list)
    ratio_history: list[np.ndarray] = field(default_factory=list)


class EdgeIndex:
    """Directed-edge layout shared by the vectorized sweeps."""

    def __init__(self, g: ContentionGraph):
        self.g = g
        self.ids = list(g.vertices)
        self.pos = {v: k for k, v in enumerate(self.ids)}
        directed = [(u, v) for u, v in g.edges] + [(v, u) for u, v in g.edges]
        self.directed = directed
        self.key = {e: k for k, e in enumerate(directed)}
        self.src = np.array([self.pos[u] for u, _ in directed], dtype=int)
        self.dst = np.array([self.pos[v] for _, v in directed], dtype=int)
        m = len(g.edges)
        self.rev = np.concatenate([np.arange(m, 2 * m), np.arange(m)]).astype(int)

    def __len__(self):
        return len(self.directed)

    def vector(self, values: Mapping[int, float] | float) -> np.ndarray:
        if isinstance(values, (int, float)):
            return np.full(len(self.ids), float(values))
        return np.array([float(values[v]) for v in self.ids])

    def as_dict(self, vec) -> dict[int, float]:
        return dict(zip(self.ids, np.asarray(vec, dtype=float).tolist()))

    def table(self, msgs: np.ndarray) -> dict[tuple[int, int], np.ndarray]:
        return {e: msgs[k].copy() for k, e in enumerate(self.directed)}

    def array(self, table: Mapping[tuple[int, int], np.ndarray]) -> np.ndarray:
        try:
            return np.array([np.asarray(table[e], dtype=float) for e in self.directed]).reshape(-1, 2)
        except KeyError as exc:
            raise KeyError(f"missing message for directed edge {exc.args[0]}") from None

    def incoming_products(self, msgs: np.ndarray) -> np.ndarray:
        """``prod_j m_ji(s)`` for every link i, shape (n, 2)."""
        out = np.ones((len(self.ids), 2))
        if len(self.directed):
            np.multiply.at(out, self.dst, msgs)
        return out


def _guard(values: np.ndarray) -> np.ndarray:
    if np.any(values < CLAMP):
        warnings.warn("message entry hit the division clamp", NumericalDegeneracyWarning, stacklevel=3)
        return np.maximum(values, CLAMP)
    return values


def _normalize_rows(a: np.ndarray) -> np.ndarray:
    return a / a.sum(axis=1, keepdims=True)


def initial_messages(index: EdgeIndex, rho: np.ndarray) -> np.ndarray:
    """``m_ji(s_i) = sum_{s_j} phi_j(s_j) psi(s_i, s_j) = (1 + rho_j, 1)``."""
    r = rho[index.src]
    return np.column_stack([1.0 + r, np.ones_like(r)])


def message_sweep(index: EdgeIndex, rho: np.ndarray, msgs: np.ndarray, normalize: bool = True) -> np.ndarray:
    """One synchronous sweep of the sum-product rule.

    ``m_ji(0) = A + rho_j B`` and ``m_ji(1) = A`` with ``A, B`` the products of
    ``m_kj(0), m_kj(1)`` over ``k`` in ``N_j \\ i``.
    """
    if not len(index):
        return msgs
    prod = index.incoming_products(msgs)
    excl = prod[index.src] / _guard(msgs[index.rev])
    a, b = excl[:, 0], excl[:, 1]
    new = np.column_stack([a + rho[index.src] * b, a])
    return _normalize_rows(new) if normalize else new


def beliefs(index: EdgeIndex, rho: np.ndarray, msgs: np.ndarray) -> np.ndarray:
    """Normalized beliefs, shape (n, 2)."""
    prod = index.incoming_products(msgs)
    raw = np.column_stack([prod[:, 0], rho * prod[:, 1]])
    return _normalize_rows(raw)


def bp_message_update(g: ContentionGraph, rho, msgs, normalize: bool = True):
    """Single synchronous sweep on a message table keyed by directed edge."""
    index = EdgeIndex(g)
    out = message_sweep(index, index.vector(rho), index.array(msgs), normalize)
    return index.table(out)


def bp_beliefs(g: ContentionGraph, rho, msgs) -> dict[int, np.ndarray]:
    index = EdgeIndex(g)
    b = beliefs(index, index.vector(rho), index.array(msgs) if len(index) else np.zeros((0, 2)))
    return {v: b[k].copy() for k, v in enumerate(index.ids)}


def _relative_change(new: np.ndarray, old: np.ndarray, floor: float = 1e-12) -> float:
    if not len(new):
        return 0.0
    return float(np.max(np.abs(new - old) / np.maximum(np.abs(old), floor)))


def run_bp(g: ContentionGraph, rho, cfg: BpConfig | None = None) -> BpResult:
    """Iterate BP until the beliefs' max relative change drops below ``cfg.tol``."""
    cfg = cfg or BpConfig()
    index = EdgeIndex(g)
    r = index.vector(rho)
    msgs = initial_messages(index, r)
    if cfg.normalize:
        msgs = _normalize_rows(msgs)
    th = beliefs(index, r, msgs)[:, 1]
    history = [index.as_dict(th)] if cfg.record_history else []
    converged = False
    it = 0
    for it in range(1, cfg.max_iter + 1):
        new = message_sweep(index, r, msgs, cfg.normalize)
        if cfg.damping:
            new = (1 - cfg.damping) * new + cfg.damping * msgs
        msgs = new
        th_new = beliefs(index, r, msgs)[:, 1]
        if cfg.record_history:
            history.append(index.as_dict(th_new))
        change = _relative_change(th_new, th)
        th = th_new
        if change < cfg.tol:
            converged = True
            break
    return BpResult(index.as_dict(th), it, converged, index.table(msgs), history)


def run_sbp(g: ContentionGraph, rho, cfg: BpConfig | None = None) -> BpResult:
    """BP on message ratios ``n_ji = m_ji(1)/m_ji(0)`` and belief ratios ``c_i``.

    ``c_i = rho_i prod_j n_ji`` and ``n_ji = n_ij / (n_ij + c_j)``.
    """
    cfg = cfg or BpConfig()
    index = EdgeIndex(g)
    r = index.vector(rho)
    ratio = 1.0 / (1.0 + r[index.src])  # initial (1 + rho_j, 1)

    def belief_ratio(ratio):
        prod = np.ones(len(index.ids))
        if len(index):
            np.multiply.at(prod, index.dst, ratio)
        return r * prod

    c = belief_ratio(ratio)
    th = c / (1 + c)
    converged = False
    it = 0
    for it in range(1, cfg.max_iter + 1):
        back = ratio[index.rev]
        ratio = back / (back + c[index.src])
        c = belief_ratio(ratio)
        th_new = c / (1 + c)
        change = _relative_change(th_new, th)
        th = th_new
        if change < cfg.tol:
            converged = True
            break
    msgs = np.column_stack([1.0 / (1.0 + ratio), ratio / (1.0 + ratio)])
    return BpResult(index.as_dict(th), it, converged, index.table(msgs))


def _check_targets(index: EdgeIndex, target) -> np.ndarray:
    t = index.vector(target)
    if np.any(t <= 0) or np.any(t >= 1):
        raise InfeasibleTargetError("IBP targets must lie strictly inside (0, 1)")
    return t


def ibp_initial_messages(index: EdgeIndex, t: np.ndarray) -> np.ndarray:
    """``m_ji(s_i) = sum_{s_j} psi(s_i, s_j) b_j(s_j) = (1, 1 - t_j)``."""
    tj = t[index.src]
    return _normalize_rows(np.column_stack([np.ones_like(tj), 1.0 - tj]))


def ibp_sweep(index: EdgeIndex, t: np.ndarray, msgs: np.ndarray, normalize: bool = True) -> np.ndarray:
    """Message rule with pinned beliefs: ``m_ji(s_i) = sum psi b_j(s_j) / m_ij(s_j)``."""
    if not len(index):
        return msgs
    back = _guard(msgs[index.rev])
    tj = t[index.src]
    cav0 = (1.0 - tj) / back[:, 0]
    cav1 = tj / back[:, 1]
    new = np.column_stack([cav0 + cav1, cav0])
    return _normalize_rows(new) if normalize else new


def ibp_intensities(index: EdgeIndex, t: np.ndarray, msgs: np.ndarray) -> np.ndarray:
    """``rho_j = b_j(1) prod m_ij(0) / (b_j(0) prod m_ij(1))``."""
    prod = index.incoming_products(msgs)
    return (t / (1 - t)) * prod[:, 0] / _guard(prod[:, 1])


def run_ibp(g: ContentionGraph, target, cfg: BpConfig | None = None) -> IbpResult:
    """Inverse BP: access intensities whose BP throughputs equal ``target``.

    Converged when the max relative change of rho falls below ``cfg.tol``.
    ``ratio_history`` keeps the message ratios of every sweep for contraction
    diagnostics.
    """
    cfg = cfg or BpConfig()
    index = EdgeIndex(g)
    t = _check_targets(index, target)
    msgs = ibp_initial_messages(index, t)
    rho = ibp_intensities(index, t, msgs)
    history = [index.as_dict(rho)] if cfg.record_history else []
    ratios = [msgs[:, 1] / msgs[:, 0]] if cfg.record_history else []
    converged = False
    it = 0
    for it in range(1, cfg.max_iter + 1):
        new = ibp_sweep(index, t, msgs, cfg.normalize)
        msgs = (1 - cfg.damping) * new + cfg.damping * msgs if cfg.damping else new
        rho_new = ibp_intensities(index, t, msgs)
        if cfg.record_history:
            history.append(index.as_dict(rho_new))
            ratios.append(msgs[:, 1] / msgs[:, 0])
        change = _relative_change(rho_new, rho)
        rho = rho_new
        if change < cfg.tol:
            converged = True
            break
    return IbpResult(index.as_dict(rho), it, converged, index.table(msgs), history, ratios)


def ring_fixed_point(rho: float) -> tuple[float, float]:
    """Converged BP belief ``(b(0), b(1))`` on any ring with uniform ``rho``."""
    if rho < 0:
        raise ValueError("rho must be non-negative")
    root = math.sqrt(1.0 + 4.0 * rho)
    b0 = (1.0 + root) / (2.0 * root)
    return b0, 1.0 - b0


def ibp_contraction_factor(c_i: float, c_j: float, n_ji: float) -> float:
    """Round-trip contraction bound ``c_i c_j / (n + c_j n + c_i c_j)`` for edge (j, i)."""
    return c_i * c_j / (n_ji + c_j * n_ji + c_i * c_j)
