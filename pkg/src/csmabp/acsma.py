"""Network-utility maximization by adaptive access intensities.

At the optimum every link satisfies ``log rho_j = beta U'(th_j)`` where
``th_j`` is the link's stationary throughput. The computational optimizers
(BP-ACSMA and GBP-ACSMA) read ``th_j`` off message-passing beliefs and
re-solve that scalar equation every sweep. The exact oracle uses exact
marginals instead, and the measurement baseline drives a simulator and nudges
``r = log rho`` by the gap between offered and served rate.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
from scipy.optimize import brentq, minimize

from .bp import EdgeIndex, _normalize_rows, beliefs, message_sweep
from .gbp import CLAMP, plan_for
from .graph import ContentionGraph
from .icn import exact_throughputs, junction_tree_marginals, stationary_entropy
from .simulator import IcnSimulator, SimConfig

LOG_RHO_BRACKET = (-30.0, 30.0)


class BracketError(ArithmeticError):
    """The scalar fixed-point equation has no root inside the search bracket."""


class OracleConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class UtilitySpec:
    """Per-link utility ``U`` weighted by ``beta``.

    ``kind="log"`` is proportional fairness. ``kind="custom"`` takes ``fn`` and
    its derivative ``deriv``; ``U`` must be strictly concave and increasing.
    """

    kind: str = "log"
    beta: float = 1.0
    fn: Callable[[float], float] | None = None
    deriv: Callable[[float], float] | None = None

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if self.kind == "custom":
            if self.fn is None or self.deriv is None:
                raise ValueError("custom utility needs fn and deriv")
        elif self.kind != "log":
            raise ValueError(f"unknown utility kind {self.kind!r}")

    def value(self, th: float) -> float:
        if self.kind == "log":
            return math.log(th) if th > 0 else -math.inf
        return float(self.fn(th))

    def derivative(self, th: float) -> float:
        if self.kind == "log":
            return 1.0 / th
        return float(self.deriv(th))

    def inverse_derivative(self, y: float, lo: float = 1e-9, hi: float = 1.0) -> float:
        """The ``f`` in ``[lo, hi]`` with ``U'(f) = y``, clipped at the ends."""
        if self.kind == "log":
            return min(max(1.0 / y, lo), hi) if y > 0 else hi
        if self.derivative(hi) >= y:
            return hi
        if self.derivative(lo) <= y:
            return lo
        return brentq(lambda f: self.derivative(f) - y, lo, hi, xtol=1e-14)


@dataclass
class OptimizerState:
    """Snapshot of ``rho``, its log ``r`` and the offered rates ``f``."""

    rho: dict[int, float]
    r: dict[int, float]
    f: dict[int, float]


@dataclass
class AcsmaConfig:
    """Computational optimizer settings; ``tol`` is relative change of ``r``."""

    tol: float = 1e-2
    max_iter: int = 1000
    damping: float = 0.0  # BP: weight on the old message
    alpha: float = 0.5  # GBP: weight on the new message
    record_history: bool = False

    def __post_init__(self):
        if self.tol < 0 or self.max_iter < 1:
            raise ValueError("need tol >= 0 and max_iter >= 1")
        if not 0.0 <= self.damping < 1.0:
            raise ValueError("damping must lie in [0, 1)")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must lie in (0, 1]")


@dataclass
class AcsmaResult:
    rho: dict[int, float]
    th: dict[int, float]
    iterations: int
    converged: bool
    messages: dict = field(default_factory=dict)
    r_history: list[np.ndarray] = field(default_factory=list)


@dataclass
class OracleConfig:
    tol: float = 1e-9
    max_iter: int = 2000
    damping: float = 0.5  # weight on the new iterate


@dataclass
class AcsmaBaselineConfig:
    update_interval: float = 150.0
    step_size: float = 0.1
    max_iter: int = 500
    tol: float = 0.03
    window: int = 20
    f_min: float = 1e-3
    r_init: float | None = None

    def __post_init__(self):
        if self.update_interval <= 0 or self.step_size <= 0:
            raise ValueError("update_interval and step_size must be positive")


@dataclass
class MeasurementTrace:
    """Per-iteration arrays, row ``n`` is the state after iteration ``n``."""

    ids: list[int]
    r: np.ndarray
    f: np.ndarray
    served: np.ndarray
    converged: bool = False
    converged_at: int | None = None

    def state(self, n: int) -> OptimizerState:
        r = dict(zip(self.ids, self.r[n].tolist()))
        return OptimizerState({v: math.exp(x) for v, x in r.items()}, r,
                              dict(zip(self.ids, self.f[n].tolist())))

    def __len__(self) -> int:
        return len(self.r)


# ---------------------------------------------------------------------------
# scalar solve


def solve_rho_fixed_point(m0: float, m1: float, u: UtilitySpec) -> float:
    """Unique ``rho > 0`` with ``log rho = beta U'(rho m1 / (rho m1 + m0))``.

    The left side increases and the right side decreases in ``log rho``, so a
    bracketed root in ``log rho`` exists whenever the bracket straddles it.
    """
    if not (m0 > 0 and m1 > 0):
        raise BracketError("message products must be positive")
    ratio = m1 / m0

    def gap(x: float) -> float:
        th = 1.0 / (1.0 + math.exp(-x) / ratio)
        return x - u.beta * u.derivative(th)

    lo, hi = LOG_RHO_BRACKET
    try:
        glo, ghi = gap(lo), gap(hi)
    except (OverflowError, ZeroDivisionError):
        raise BracketError("fixed-point equation overflowed at the bracket ends") from None
    if not (glo < 0 < ghi):
        raise BracketError(f"no root of log rho = beta U'(th) in {LOG_RHO_BRACKET}")
    x = brentq(gap, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps)
    return math.exp(x)


def _solve_all(m0: np.ndarray, m1: np.ndarray, u: UtilitySpec) -> np.ndarray:
    if u.kind == "log":
        return _solve_log_vectorized(m0 / m1, u.beta)
    return np.array([solve_rho_fixed_point(a, b, u) for a, b in zip(m0, m1)])


def _solve_log_vectorized(q: np.ndarray, beta: float) -> np.ndarray:
    """Newton on ``x = beta (1 + q e^-x)`` from the upper bracket, vectorized.

    ``h(x) = x - beta - beta q e^-x`` is increasing and concave, so Newton
    iterates started to the right of the root decrease monotonically onto it.
    """
    if np.any(~np.isfinite(q)) or np.any(q <= 0):
        raise BracketError("message products must be positive")
    # the root exceeds beta, so beta (1 + q e^-beta) lies to its right
    with np.errstate(over="ignore"):
        x = beta * (1.0 + q * math.exp(-beta))
    if np.any(~np.isfinite(x)):
        raise BracketError(f"no root of log rho = beta U'(th) in {LOG_RHO_BRACKET}")
    for _ in range(200):
        e = q * np.exp(-x)
        step = (x - beta - beta * e) / (1.0 + beta * e)
        x = x - step
        if np.all(np.abs(step) <= 1e-15 * np.maximum(1.0, np.abs(x))):
            break
    if np.any(x < LOG_RHO_BRACKET[0]) or np.any(x > LOG_RHO_BRACKET[1]):
        raise BracketError(f"no root of log rho = beta U'(th) in {LOG_RHO_BRACKET}")
    return np.exp(x)


def _relative_change(new: np.ndarray, old: np.ndarray, floor: float = 1e-6) -> float:
    if not len(new):
        return 0.0
    return float(np.max(np.abs(new - old) / np.maximum(np.abs(old), floor)))


# ---------------------------------------------------------------------------
# computational optimizers


def bp_acsma_step(index: EdgeIndex, msgs: np.ndarray, u: UtilitySpec) -> np.ndarray:
    """Intensities solved from the current incoming message products."""
    log_prod = np.zeros((len(index.ids), 2))
    if len(index):
        np.add.at(log_prod, index.dst, np.log(np.maximum(msgs, CLAMP)))
    m0 = np.exp(log_prod[:, 0] - log_prod.max(axis=1))
    m1 = np.exp(log_prod[:, 1] - log_prod.max(axis=1))
    return _solve_all(m0, m1, u)


def run_bp_acsma(g: ContentionGraph, u: UtilitySpec, cfg: AcsmaConfig | None = None) -> AcsmaResult:
    """Alternate the per-link scalar solve with one synchronous BP sweep.

    Messages start at ``(2, 1)``, i.e. BP's initialization at ``rho = 1``.
    Iteration ``n`` solves ``rho^n`` from messages ``n-1`` and then sweeps with
    ``rho^n``. Converged when ``r`` moves by less than ``tol`` relative.
    """
    cfg = cfg or AcsmaConfig()
    index = EdgeIndex(g)
    msgs = _normalize_rows(np.tile([2.0, 1.0], (len(index), 1)))
    rho = bp_acsma_step(index, msgs, u)
    r = np.log(rho)
    history = [r.copy()] if cfg.record_history else []
    converged = False
    it = 0
    for it in range(1, cfg.max_iter + 1):
        new = message_sweep(index, rho, msgs)
        msgs = (1 - cfg.damping) * new + cfg.damping * msgs if cfg.damping else new
        rho = bp_acsma_step(index, msgs, u)
        r_new = np.log(rho)
        if cfg.record_history:
            history.append(r_new.copy())
        change = _relative_change(r_new, r)
        r = r_new
        if change < cfg.tol:
            converged = True
            break
    th = beliefs(index, rho, msgs)[:, 1] if len(index) else rho / (1 + rho)
    return AcsmaResult(index.as_dict(rho), index.as_dict(th), it, converged, index.table(msgs), history)


def gbp_acsma_step(plan, msgs: np.ndarray, rho_prev: np.ndarray, u: UtilitySpec) -> np.ndarray:
    """Per-link solve against the smallest region containing it.

    With ``A_s`` the product of external messages at state ``s`` of that
    region, ``M1 = A_j`` and ``M0 = A_idle + sum_{k != j} rho_k A_k`` using the
    other members' previous intensities.
    """
    ext = plan.external_log(np.log(np.maximum(msgs, CLAMP)))
    lr = plan.log_rho(rho_prev)[plan.b_link]
    w = np.exp(lr + ext - _region_shift(plan, ext))
    total = np.bincount(plan.b_region, weights=w, minlength=len(plan.regions))
    own = w[plan.owner_slot]
    m1 = own / np.maximum(rho_prev, CLAMP)
    m0 = total[plan.owner] - own
    return _solve_all(np.maximum(m0, CLAMP), np.maximum(m1, CLAMP), u)


def _region_shift(plan, ext: np.ndarray) -> np.ndarray:
    peak = np.full(len(plan.regions), -np.inf)
    np.maximum.at(peak, plan.b_region, ext)
    return peak[plan.b_region]


def run_gbp_acsma(g: ContentionGraph, u: UtilitySpec, cfg: AcsmaConfig | None = None) -> AcsmaResult:
    """GBP counterpart of :func:`run_bp_acsma`.

    Messages and ``r = log rho`` are both damped with ``cfg.alpha``, the weight
    on the new value; the fixed point is unchanged. Each link's solve holds
    its region-mates at their previous intensities, which overshoots on
    skewed regions (a star's hub against its leaves) without damping.
    """
    cfg = cfg or AcsmaConfig()
    plan = plan_for(g)
    msgs = plan.initial(None)
    rho = gbp_acsma_step(plan, msgs, np.ones(len(plan.ids)), u)
    r = np.log(rho)
    history = [r.copy()] if cfg.record_history else []
    converged = False
    it = 0
    for it in range(1, cfg.max_iter + 1):
        msgs = plan.sweep(rho, msgs, cfg.alpha)
        r_new = (1 - cfg.alpha) * r + cfg.alpha * np.log(gbp_acsma_step(plan, msgs, rho, u))
        rho = np.exp(r_new)
        if cfg.record_history:
            history.append(r_new.copy())
        change = _relative_change(r_new, r)
        r = r_new
        if change < cfg.tol:
            converged = True
            break
    th = plan.throughputs(plan.beliefs(rho, msgs))
    return AcsmaResult(plan.as_dict(rho), plan.as_dict(th), it, converged, plan.table(msgs), history)


# ---------------------------------------------------------------------------
# exact oracle and objective


def _exact_th(g: ContentionGraph, r: np.ndarray) -> np.ndarray:
    th = exact_throughputs(g, dict(zip(g.vertices, np.exp(r).tolist())))
    return np.array([th[v] for v in g.vertices])


def _target_r(th: np.ndarray, u: UtilitySpec) -> np.ndarray:
    return np.clip([u.beta * u.derivative(max(t, 1e-300)) for t in th], *LOG_RHO_BRACKET)


def _damped_oracle(g, u, cfg: OracleConfig, damping: float):
    r = np.zeros(len(g))
    for it in range(1, cfg.max_iter + 1):
        target = _target_r(_exact_th(g, r), u)
        r_new = (1 - damping) * r + damping * target
        if np.max(np.abs(r_new - r) / np.maximum(np.abs(r), 1e-12)) < cfg.tol:
            return r_new, True
        r = r_new
    return r, False


def _dual_oracle(g: ContentionGraph, u: UtilitySpec, r0: np.ndarray) -> np.ndarray:
    """Minimize the convex dual ``log Z(r) + sum_j (beta U(f_j) - r_j f_j)``."""

    def f_of(r):
        return np.array([u.inverse_derivative(x / u.beta) for x in r])

    def fun(r):
        th, logz = junction_tree_marginals(g, np.exp(r))
        f = f_of(r)
        val = logz + sum(u.beta * u.value(fj) - x * fj for fj, x in zip(f, r))
        return val, np.array([th[v] for v in g.vertices]) - f

    res = minimize(fun, r0, jac=True, method="L-BFGS-B", bounds=[LOG_RHO_BRACKET] * len(r0),
                   options={"ftol": 1e-15, "gtol": 1e-12, "maxiter": 10_000})
    return res.x


def exact_acsma_oracle(g: ContentionGraph, u: UtilitySpec, cfg: OracleConfig | None = None):
    """Fixed point ``r_j = beta U'(th_j(e^r))`` with exact throughputs.

    Damped iteration in ``r``; on failure the damping is halved once and, if
    that also stalls, the convex dual is minimized directly. Returns
    ``(rho, th)``.
    """
    cfg = cfg or OracleConfig()
    if not len(g):
        return {}, {}
    r, ok = _damped_oracle(g, u, cfg, cfg.damping)
    if not ok:
        r, ok = _damped_oracle(g, u, cfg, cfg.damping / 2)
    if not ok:
        r = _dual_oracle(g, u, r)
        resid = np.max(np.abs(_target_r(_exact_th(g, r), u) - r) / np.abs(r))
        if resid > 1e-6:
            raise OracleConvergenceError(f"oracle residual {resid:.3g} after dual solve")
    th = _exact_th(g, r)
    return dict(zip(g.vertices, np.exp(r).tolist())), dict(zip(g.vertices, th.tolist()))


def objective(g: ContentionGraph, rho: Mapping[int, float], u: UtilitySpec) -> float:
    """``beta sum_j U(th_j) + H`` at the stationary distribution of ``rho``."""
    th = exact_throughputs(g, rho)
    return u.beta * sum(u.value(th[v]) for v in g.vertices) + stationary_entropy(g, rho)


def evaluate_utility(th: Mapping[int, float], u: UtilitySpec | None = None) -> float:
    """``sum_j U(th_j)``; a zero throughput gives ``-inf`` with a warning."""
    u = u or UtilitySpec()
    if any(t <= 0 for t in th.values()):
        warnings.warn("zero throughput makes the utility -inf", RuntimeWarning, stacklevel=2)
        return -math.inf
    return float(sum(u.value(t) for t in th.values()))


# ---------------------------------------------------------------------------
# measurement-driven baseline


def iterations_to_converge(trace: np.ndarray, reference: np.ndarray, tol: float, window: int = 1) -> int | None:
    """First ``n`` such that rows ``n .. n+window-1`` all lie within ``tol``
    relative of ``reference`` in every coordinate; ``None`` if there is none."""
    trace = np.asarray(trace, dtype=float)
    ref = np.asarray(reference, dtype=float)
    ok = np.all(np.abs(trace - ref) <= tol * np.abs(ref), axis=1)
    run = 0
    for n, good in enumerate(ok):
        run = run + 1 if good else 0
        if run >= window:
            return n - window + 1
    return None


def run_measurement_acsma(
    g: ContentionGraph,
    u: UtilitySpec,
    cfg: AcsmaBaselineConfig | None = None,
    sim: SimConfig | None = None,
    reference: Mapping[int, float] | None = None,
) -> MeasurementTrace:
    """Measurement-driven adaptive CSMA.

    Each iteration runs the network for ``update_interval`` under the current
    intensities, moves ``r_j`` by ``step_size * (f_j - served_j)`` (the drift
    of a virtual queue whose length ``r_j`` tracks) and resets ``f_j`` from
    ``beta U'(f_j) = r_j``. Convergence is judged against ``reference``
    (intensities, e.g. the oracle's) or, if absent, against the mean of the
    last ``window`` iterations.
    """
    cfg = cfg or AcsmaBaselineConfig()
    sim = sim or SimConfig()
    ids = list(g.vertices)
    r0 = cfg.r_init if cfg.r_init is not None else u.beta * u.derivative(0.5)
    r = np.full(len(ids), float(r0))

    def offered(r):
        return np.array([u.inverse_derivative(x / u.beta, cfg.f_min, 1.0) for x in r])

    f = offered(r)
    net = IcnSimulator(g, dict(zip(ids, np.exp(r).tolist())), seed=sim.seed,
                       backoff_dist=sim.backoff_dist, tx_dist=sim.tx_dist)
    rs, fs, ss = [r.copy()], [f.copy()], [np.zeros(len(ids))]
    for _ in range(cfg.max_iter):
        served = net.run(cfg.update_interval)
        r = np.clip(r + cfg.step_size * (f - served), *LOG_RHO_BRACKET)
        f = offered(r)
        net.set_rho(dict(zip(ids, np.exp(r).tolist())))
        rs.append(r.copy())
        fs.append(f.copy())
        ss.append(served)
    trace = MeasurementTrace(ids, np.array(rs), np.array(fs), np.array(ss))
    if reference is not None:
        ref = np.log([reference[v] for v in ids])
    else:
        ref = trace.r[-cfg.window:].mean(axis=0)
    at = iterations_to_converge(trace.r, ref, cfg.tol, cfg.window)
    trace.converged, trace.converged_at = at is not None, at
    return trace
