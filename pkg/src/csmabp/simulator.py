"""Continuous-time event-driven simulator of the ideal CSMA network.

Each link counts down a backoff timer only while none of its neighbors is
transmitting; the timer freezes otherwise and resumes from the frozen value.
When the timer expires the link transmits for a random duration, then redraws
its timer. Time is measured in mean transmission times (E[t_tr] = 1) and a
link with access intensity rho uses mean backoff 1/rho.
"""

from __future__ import annotations

import heapq
import math
import random
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .graph import ContentionGraph

DISTRIBUTIONS = ("exponential", "deterministic", "uniform")


@dataclass
class SimConfig:
    horizon: float = 10_000.0
    seed: int = 0
    backoff_dist: str = "exponential"
    tx_dist: str = "exponential"
    warmup_fraction: float = 0.1
    batches: int = 20

    def __post_init__(self):
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")
        for kind in (self.backoff_dist, self.tx_dist):
            if kind not in DISTRIBUTIONS:
                raise ValueError(f"unsupported distribution {kind!r}")


@dataclass
class SimResult:
    th: dict[int, float]
    stderr: dict[int, float]
    horizon: float


def _sampler(kind: str, rng: random.Random):
    if kind == "exponential":
        return lambda mean: rng.expovariate(1.0 / mean)
    if kind == "deterministic":
        return lambda mean: mean
    if kind == "uniform":
        return lambda mean: rng.uniform(0.0, 2.0 * mean)
    raise ValueError(f"unsupported distribution {kind!r}")


class IcnSimulator:
    """Stateful simulator; :meth:`run` advances time and reports airtime shares.

    Intensities may be changed between runs with :meth:`set_rho`, which is how
    the measurement-driven adaptive CSMA baseline drives it.
    """

    _END, _START = 0, 1

    def __init__(
        self,
        g: ContentionGraph,
        rho: Mapping[int, float],
        *,
        seed: int = 0,
        backoff_dist: str = "exponential",
        tx_dist: str = "exponential",
    ):
        self.g = g
        self.ids = list(g.vertices)
        index = {v: k for k, v in enumerate(self.ids)}
        self.nbrs = [[index[u] for u in sorted(g.adj[v])] for v in self.ids]
        n = len(self.ids)
        self.rng = random.Random(seed)
        self._backoff = _sampler(backoff_dist, self.rng)
        self._tx = _sampler(tx_dist, self.rng)
        self.now = 0.0
        self.active = [False] * n
        self.blocked = [0] * n
        self.deadline = [math.inf] * n
        self.residual = [0.0] * n
        self.version = [0] * n
        self.seg_start = [0.0] * n
        self.busy = [0.0] * n
        self.heap: list = []
        self.rho = [0.0] * n
        self.set_rho(rho)

    def _draw_backoff(self, k: int) -> float:
        r = self.rho[k]
        return self._backoff(1.0 / r) if r > 0 else math.inf

    def _schedule(self, k: int, at: float):
        self.version[k] += 1
        self.deadline[k] = at
        if at < math.inf:
            heapq.heappush(self.heap, (at, self._START, k, self.version[k]))

    def set_rho(self, rho: Mapping[int, float]):
        """Install new intensities; pending countdowns are redrawn."""
        self.rho = [float(rho[v]) for v in self.ids]
        for k in range(len(self.ids)):
            if self.active[k]:
                continue
            c = self._draw_backoff(k)
            if self.blocked[k]:
                self.version[k] += 1
                self.residual[k] = c
            else:
                self._schedule(k, self.now + c)

    def run(self, duration: float) -> np.ndarray:
        """Advance by ``duration``; returns each link's active fraction over it."""
        start = self.now
        stop = start + duration
        busy0 = self._flush(start)
        heap = self.heap
        while heap and heap[0][0] <= stop:
            t, kind, k, ver = heapq.heappop(heap)
            if kind == self._END:
                self._end(k, t)
            elif ver == self.version[k]:
                self._start(k, t)
        self.now = stop
        busy1 = self._flush(stop)
        return (busy1 - busy0) / duration

    def _flush(self, t: float) -> np.ndarray:
        for k, on in enumerate(self.active):
            if on:
                self.busy[k] += t - self.seg_start[k]
                self.seg_start[k] = t
        return np.array(self.busy)

    def _start(self, k: int, t: float):
        self.now = t
        self.active[k] = True
        self.seg_start[k] = t
        self.version[k] += 1
        self.deadline[k] = math.inf
        heapq.heappush(self.heap, (t + self._tx(1.0), self._END, k, 0))
        for u in self.nbrs[k]:
            self.blocked[u] += 1
            if self.blocked[u] == 1 and not self.active[u]:
                self.residual[u] = max(self.deadline[u] - t, 0.0)
                self.version[u] += 1
                self.deadline[u] = math.inf

    def _end(self, k: int, t: float):
        self.now = t
        self.active[k] = False
        self.busy[k] += t - self.seg_start[k]
        self._schedule(k, t + self._draw_backoff(k))
        for u in self.nbrs[k]:
            self.blocked[u] -= 1
            if self.blocked[u] == 0 and not self.active[u]:
                self._schedule(u, t + self.residual[u])


def simulate_icn(g: ContentionGraph, rho: Mapping[int, float], cfg: SimConfig) -> SimResult:
    """Measured throughputs with batch-means standard errors.

    The first ``warmup_fraction`` of the horizon is discarded.
    """
    sim = IcnSimulator(g, rho, seed=cfg.seed, backoff_dist=cfg.backoff_dist, tx_dist=cfg.tx_dist)
    warm = cfg.horizon * cfg.warmup_fraction
    if warm > 0:
        sim.run(warm)
    span = (cfg.horizon - warm) / cfg.batches
    batches = np.array([sim.run(span) for _ in range(cfg.batches)])
    mean = batches.mean(axis=0)
    se = batches.std(axis=0, ddof=1) / math.sqrt(cfg.batches)
    return SimResult(
        th=dict(zip(g.vertices, mean.tolist())),
        stderr=dict(zip(g.vertices, se.tolist())),
        horizon=cfg.horizon,
    )


def temporal_throughput(
    g: ContentionGraph,
    rho: Mapping[int, float],
    *,
    window: float,
    windows: int,
    seed: int = 0,
    warmup: float = 0.0,
) -> np.ndarray:
    """Per-window active fractions, shape ``(windows, links)``."""
    sim = IcnSimulator(g, rho, seed=seed)
    if warmup > 0:
        sim.run(warmup)
    return np.array([sim.run(window) for _ in range(windows)])
