"""Round-based execution of the message-passing algorithms as per-link agents.

Every round has one or two broadcast phases. In a phase all agents first emit
a payload computed from their end-of-previous-phase state, the delivery layer
hands each agent only the payloads of its current one-hop neighbors, and then
all agents update. Every payload carries the agent's id, intensity and its
view of its own closed neighborhood; agents assemble their two-hop local
graphs from those views (three rounds suffice) and rebuild their local region
graphs every ``t1`` rounds. Message iteration starts once an agent's local
graph is complete, so agent message levels lag the round counter by three.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .acsma import UtilitySpec, _solve_all
from .bp import InfeasibleTargetError
from .gbp import gbp_message_update, initial_region_messages, region_belief
from .graph import ContentionGraph, build_graph, two_hop_local_graph
from .regions import (
    RegionGraph,
    build_region_graph,
    build_region_graph_from_local,
    denominator_messages,
    external_messages_into,
    numerator_messages,
)

BOOTSTRAP_ROUNDS = 3
AGENT_KINDS = ("bp", "ibp", "bp-acsma", "gbp", "igbp", "gbp-acsma")


class LocalityError(RuntimeError):
    """An agent tried to read a broadcast it could not have heard."""


class ChurnError(ValueError):
    pass


@dataclass(frozen=True)
class Broadcast:
    sender: int
    payload: Mapping


class Inbox(Mapping):
    """Read-only view of the broadcasts audible to one agent."""

    def __init__(self, owner: int, audible: Iterable[int], sent: Mapping[int, Broadcast]):
        self.owner = owner
        self._audible = frozenset(audible)
        self._sent = sent

    def __getitem__(self, sender: int) -> Mapping:
        if sender not in self._audible:
            raise LocalityError(f"agent {self.owner} cannot hear agent {sender}")
        return self._sent[sender].payload

    def __iter__(self):
        return iter(sorted(s for s in self._audible if s in self._sent))

    def __len__(self) -> int:
        return sum(1 for s in self._audible if s in self._sent)


@dataclass(frozen=True)
class ChurnEvent:
    """Topology change applied just before the broadcasts of ``round``.

    ``op`` is ``add_link`` (args: link, neighbors, param), ``remove_link``
    (args: link), ``add_edge`` or ``remove_edge`` (args: u, v).
    """

    round: int
    op: str
    args: tuple


@dataclass
class RoundSchedule:
    rounds: int
    t1: int = 10
    churn: list[ChurnEvent] = field(default_factory=list)

    def __post_init__(self):
        if self.rounds < 0 or self.t1 < 1:
            raise ValueError("need rounds >= 0 and t1 >= 1")


@dataclass
class AgentSnapshot:
    th: float | None
    rho: float | None
    level: int  # message-iteration index the reported values come from
    flags: tuple[str, ...] = ()


@dataclass
class RoundSnapshot:
    round: int
    agents: dict[int, AgentSnapshot]

    def th(self) -> dict[int, float]:
        return {j: a.th for j, a in self.agents.items()}

    def rho(self) -> dict[int, float]:
        return {j: a.rho for j, a in self.agents.items()}


# ---------------------------------------------------------------------------
# agents


class Agent:
    """Neighborhood discovery shared by all kinds (the periodic local update)."""

    phases: tuple[str, ...] = ("main",)

    def __init__(self, j: int, param=None):
        self.id = j
        self.param = param
        self.rho = 1.0
        self.neighbors: frozenset = frozenset()
        self.one_hop = build_graph([j], [])
        self.local_graph = self.one_hop
        self.heard_rounds = 0
        self.ready = False
        self.level = -1
        self.th: float | None = None
        self.flags: set[str] = set()
        self.known: dict[int, Mapping] = {}

    # -- thread 1
    def tuple_payload(self) -> dict:
        return {"id": self.id, "rho": self.rho, "one_hop": self.one_hop, "param": self.param}

    def discover(self, inbox: Inbox):
        self.neighbors = frozenset(inbox)
        self.known = {i: inbox[i] for i in inbox}
        hood = self.neighbors | {self.id}
        edges = {(self.id, i) for i in self.neighbors}
        views = [self.known[i]["one_hop"] for i in self.neighbors]
        for view in views:
            edges |= {(a, b) for a, b in view.edges if a in hood and b in hood}
        self.one_hop = build_graph(sorted(hood), edges)
        verts = set(hood)
        union_edges = set(self.one_hop.edges)
        for view in views:
            verts |= set(view.vertices)
            union_edges |= set(view.edges)
        self.local_graph = build_graph(sorted(verts), union_edges)
        self.heard_rounds += 1

    def neighbor_rho(self) -> dict[int, float]:
        out = {i: float(p["rho"]) for i, p in self.known.items()}
        out[self.id] = self.rho
        return out

    # -- thread 2, specialized below
    def refresh(self):
        """Rebuild derived structures from the current local graph."""

    def start(self):
        """Initialize messages once the local graph is complete."""
        self.ready = True
        self.level = 0

    def payload(self, phase: str) -> dict:
        return self.tuple_payload()

    def receive(self, inbox: Inbox, phase: str):
        raise NotImplementedError

    def snapshot(self) -> AgentSnapshot:
        return AgentSnapshot(self.th, self.rho, max(self.level - 1, -1), tuple(sorted(self.flags)))


def _norm(v: np.ndarray) -> np.ndarray:
    return v / v.sum()


class _PairwiseAgent(Agent):
    """Keeps one outgoing message per neighbor; default covers unseen peers."""

    def __init__(self, j, param=None, damping: float = 0.0):
        super().__init__(j, param)
        self.damping = damping
        self.out: dict[int, np.ndarray] = {}

    def default_message(self) -> np.ndarray:
        raise NotImplementedError

    def payload(self, phase):
        p = self.tuple_payload()
        if self.ready:
            p["msgs"] = {i: m.copy() for i, m in self.out.items()}
            p["default"] = self.default_message()
        return p

    def start(self):
        super().start()
        self.out = {i: self.default_message() for i in self.neighbors}

    def incoming(self, inbox: Inbox) -> dict[int, np.ndarray]:
        msgs = {}
        for i in inbox:
            p = inbox[i]
            if "msgs" not in p:
                continue
            msgs[i] = np.asarray(p["msgs"].get(self.id, p["default"]), dtype=float)
        return msgs

    def receive(self, inbox, phase):
        self.discover(inbox)
        if not self.ready:
            return
        msgs = self.incoming(inbox)
        self.local_update(msgs)
        self.level += 1

    def _damp(self, i, new):
        old = self.out.get(i)
        if self.damping and old is not None:
            return (1 - self.damping) * new + self.damping * old
        return new

    def _products(self, msgs):
        total = np.ones(2)
        for m in msgs.values():
            total = total * m
        return total


class BpAgent(_PairwiseAgent):
    def __init__(self, j, rho: float, damping: float = 0.0):
        super().__init__(j, rho, damping)
        self.rho = float(rho)

    def default_message(self):
        return _norm(np.array([1.0 + self.rho, 1.0]))

    def local_update(self, msgs):
        total = self._products(msgs)
        self.th = float(self.rho * total[1] / (total[0] + self.rho * total[1]))
        new = {}
        for i in self.neighbors:
            a, b = total / msgs[i] if i in msgs else total
            new[i] = self._damp(i, _norm(np.array([a + self.rho * b, a])))
        self.out = new


class IbpAgent(_PairwiseAgent):
    def __init__(self, j, target: float, damping: float = 0.0):
        super().__init__(j, target, damping)
        if not 0.0 < target < 1.0:
            raise InfeasibleTargetError("IBP targets must lie strictly inside (0, 1)")
        self.target = float(target)
        self.th = self.target

    def default_message(self):
        return _norm(np.array([1.0, 1.0 - self.target]))

    def local_update(self, msgs):
        t = self.target
        total = self._products(msgs)
        self.rho = float(t / (1 - t) * total[0] / total[1])
        new = {}
        for i in self.neighbors:
            back = msgs.get(i, np.array([0.5, 0.5]))
            cav0, cav1 = (1 - t) / back[0], t / back[1]
            new[i] = self._damp(i, _norm(np.array([cav0 + cav1, cav0])))
        self.out = new


class BpAcsmaAgent(_PairwiseAgent):
    def __init__(self, j, utility: UtilitySpec, damping: float = 0.0):
        super().__init__(j, utility, damping)
        self.utility = utility

    def tuple_payload(self):
        p = super().tuple_payload()
        p["param"] = None
        return p

    def default_message(self):
        return _norm(np.array([2.0, 1.0]))

    def local_update(self, msgs):
        log_total = np.zeros(2)
        for m in msgs.values():
            log_total += np.log(m)
        m0, m1 = np.exp(log_total - log_total.max())
        self.rho = float(_solve_all(np.array([m0]), np.array([m1]), self.utility)[0])
        self.th = float(self.rho * m1 / (m0 + self.rho * m1))
        new = {}
        for i in self.neighbors:
            a, b = np.exp(log_total - np.log(msgs[i]) - log_total.max()) if i in msgs else (m0, m1)
            new[i] = self._damp(i, _norm(np.array([a + self.rho * b, a])))
        self.out = new


def elect_message_agents(local_rg: RegionGraph, j: int) -> frozenset:
    """Edges ``(P, R)`` of ``local_rg`` whose lowest shared member is ``j``."""
    return frozenset((p, r) for p, r in local_rg.edges if j in r and min(set(p) & set(r)) == j)


class _RegionAgent(Agent):
    """Holds a local region graph, elects its messages and stores heard ones."""

    def __init__(self, j, param=None, alpha: float = 0.5):
        super().__init__(j, param)
        self.alpha = alpha
        self.local_rg: RegionGraph | None = None
        self.ms: frozenset = frozenset()
        self.own: dict[tuple, np.ndarray] = {}
        self.heard: dict[tuple, np.ndarray] = {}
        self.region: tuple | None = None

    def refresh(self):
        rg = build_region_graph_from_local(self.local_graph, self.id)
        changed = self.local_rg is None or rg.levels != self.local_rg.levels or rg.edges != self.local_rg.edges
        self.local_rg = rg
        self.ms = elect_message_agents(rg, self.id)
        self.region = rg.smallest_region(self.id)
        if changed and self.ready:
            self.flags.add("reset")
            self.reset_messages()

    def initial_rho(self):
        return self.neighbor_rho()

    def reset_messages(self):
        self.own = initial_region_messages(self.local_rg, self.initial_rho(), sorted(self.ms))
        edges = set(self.local_rg.edges)
        self.heard = {e: m for e, m in self.heard.items() if e in edges}

    def start(self):
        super().start()
        self.reset_messages()

    def message_table(self) -> dict:
        return {**self.heard, **self.own}

    def absorb(self, inbox: Inbox):
        self.heard = {}
        for i in inbox:
            for e, m in inbox[i].get("msgs", {}).items():
                self.heard[e] = np.asarray(m, dtype=float)

    def payload(self, phase):
        p = self.tuple_payload()
        if self.ready:
            p["msgs"] = {e: m.copy() for e, m in self.own.items()}
        return p

    def update_messages(self, rho: Mapping[int, float]):
        table = self.message_table()
        new = {}
        self.flags.discard("stale")
        for e in sorted(self.ms):
            try:
                new[e] = gbp_message_update(self.local_rg, rho, table, e, self.own.get(e), self.alpha)
            except KeyError:
                self.flags.add("stale")
                new[e] = self.own[e]
        self.own = new

    def region_weights(self, rho) -> np.ndarray | None:
        try:
            return region_belief(self.local_rg, rho, self.message_table(), self.region)
        except KeyError:
            self.flags.add("stale")
            return None

    def own_slot(self) -> int:
        return self.region.index(self.id) + 1


class GbpAgent(_RegionAgent):
    def __init__(self, j, rho: float, alpha: float = 0.5):
        super().__init__(j, rho, alpha)
        self.rho = float(rho)

    def receive(self, inbox, phase):
        self.discover(inbox)
        if not self.ready:
            return
        self.absorb(inbox)
        rho = self.neighbor_rho()
        b = self.region_weights(rho)
        if b is not None:
            self.th = float(b[self.own_slot()])
        self.update_messages(rho)
        self.level += 1


class _TwoPhaseAgent(_RegionAgent):
    """Phase ``msgs`` solves the own intensity, phase ``rho`` updates messages."""

    phases = ("msgs", "rho")

    def payload(self, phase):
        p = self.tuple_payload()
        if self.ready and phase == "msgs":
            p["msgs"] = {e: m.copy() for e, m in self.own.items()}
        return p

    def receive(self, inbox, phase):
        if phase == "rho":
            self.discover(inbox)
            if self.ready:
                rho = self.neighbor_rho()
                self.after_rho(rho)
                self.update_messages(rho)
                self.level += 1
            return
        if not self.ready:
            return
        self.absorb(inbox)
        self.prev_rho = self.neighbor_rho()
        self.solve_rho()

    def after_rho(self, rho):
        pass


class IgbpAgent(_TwoPhaseAgent):
    def __init__(self, j, target: float, alpha: float = 0.5):
        super().__init__(j, target, alpha)
        if not 0.0 < target < 1.0:
            raise InfeasibleTargetError("targets must lie strictly inside (0, 1)")
        self.target = float(target)
        self.th = self.target

    def initial_rho(self):
        return 1.0

    def solve_rho(self):
        a = self.region_weights(1.0)
        if a is None:
            return
        targets = {i: float(p["param"]) for i, p in self.known.items()}
        targets[self.id] = self.target
        idle = 1.0 - sum(targets[v] for v in self.region)
        if idle <= 0:
            raise InfeasibleTargetError(f"region {self.region} target sum >= 1")
        self.rho = float(self.target / idle * a[0] / a[self.own_slot()])


class GbpAcsmaAgent(_TwoPhaseAgent):
    def __init__(self, j, utility: UtilitySpec, alpha: float = 0.5):
        super().__init__(j, None, alpha)
        self.utility = utility
        self.solved = False

    def initial_rho(self):
        return 1.0

    def reset_messages(self):
        super().reset_messages()
        self.solved = False

    def solve_rho(self):
        a = self.region_weights(1.0)
        if a is None:
            return
        prev = self.prev_rho
        slot = self.own_slot()
        m1 = a[slot]
        m0 = a[0] + sum(prev.get(v, 1.0) * a[k + 1] for k, v in enumerate(self.region) if v != self.id)
        x = math.log(float(_solve_all(np.array([m0]), np.array([m1]), self.utility)[0]))
        # the first solve is undamped, later ones move r = log rho by alpha
        if self.solved:
            x = (1 - self.alpha) * math.log(self.rho) + self.alpha * x
        self.rho = math.exp(x)
        self.solved = True

    def after_rho(self, rho):
        b = self.region_weights(rho)
        if b is not None:
            self.th = float(b[self.own_slot()])


# ---------------------------------------------------------------------------
# harness


def make_agent(kind: str, j: int, param, *, damping: float = 0.0, alpha: float = 0.5) -> Agent:
    if kind == "bp":
        return BpAgent(j, param, damping)
    if kind == "ibp":
        return IbpAgent(j, param, damping)
    if kind == "bp-acsma":
        return BpAcsmaAgent(j, param, damping)
    if kind == "gbp":
        return GbpAgent(j, param, alpha)
    if kind == "igbp":
        return IgbpAgent(j, param, alpha)
    if kind == "gbp-acsma":
        return GbpAcsmaAgent(j, param, alpha)
    raise ValueError(f"unknown agent kind {kind!r}; choose from {AGENT_KINDS}")


def _param_for(kind: str, params, j: int):
    if kind in ("bp-acsma", "gbp-acsma"):
        if not isinstance(params, UtilitySpec):
            raise ValueError(f"{kind} agents need a UtilitySpec")
        return params
    if isinstance(params, (int, float)):
        return float(params)
    try:
        return float(params[j])
    except KeyError:
        raise ValueError(f"missing parameter for link {j}") from None


def apply_churn(g: ContentionGraph, ev: ChurnEvent) -> ContentionGraph:
    verts, edges = set(g.vertices), set(g.edges)
    if ev.op == "remove_link":
        (v,) = ev.args[:1]
        if v not in verts:
            raise ChurnError(f"round {ev.round}: link {v} does not exist")
        verts.discard(v)
        edges = {e for e in edges if v not in e}
    elif ev.op == "add_link":
        v, nbrs = ev.args[0], ev.args[1]
        if v in verts or any(u not in verts for u in nbrs):
            raise ChurnError(f"round {ev.round}: cannot add link {v} next to {nbrs}")
        verts.add(v)
        edges |= {(min(u, v), max(u, v)) for u in nbrs}
    elif ev.op in ("add_edge", "remove_edge"):
        u, v = ev.args
        e = (min(u, v), max(u, v))
        if u not in verts or v not in verts or u == v:
            raise ChurnError(f"round {ev.round}: invalid edge {e}")
        if ev.op == "add_edge":
            if e in edges:
                raise ChurnError(f"round {ev.round}: edge {e} already present")
            edges.add(e)
        else:
            if e not in edges:
                raise ChurnError(f"round {ev.round}: edge {e} absent")
            edges.discard(e)
    else:
        raise ChurnError(f"unknown churn operation {ev.op!r}")
    return build_graph(sorted(verts), edges)


@dataclass
class Network:
    """True topology, the agents on it and the broadcast delivery layer."""

    g: ContentionGraph
    agents: dict[int, Agent]
    round: int = 0

    def phase(self, name: str):
        sent = {j: Broadcast(j, a.payload(name)) for j, a in self.agents.items()}
        for j, a in self.agents.items():
            a.receive(Inbox(j, self.g.adj[j], sent), name)

    def tick(self, t1: int):
        self.round += 1
        phases = next(iter(self.agents.values())).phases if self.agents else ("main",)
        for name in phases:
            self.phase(name)
        for a in self.agents.values():
            if not a.ready and a.heard_rounds >= BOOTSTRAP_ROUNDS:
                a.refresh()
                a.start()
            elif a.ready and self.round % t1 == 0:
                a.refresh()


def run_harness(
    g: ContentionGraph,
    kind: str,
    params,
    schedule: RoundSchedule,
    *,
    damping: float = 0.0,
    alpha: float = 0.5,
) -> list[RoundSnapshot]:
    """Run ``schedule.rounds`` rounds and snapshot every agent after each.

    ``params`` is a per-link mapping or scalar (intensities for bp/gbp,
    targets for ibp/igbp) or a :class:`UtilitySpec` for the ACSMA kinds.
    Newly added links take their parameter from the churn event.
    """
    if kind not in AGENT_KINDS:
        raise ValueError(f"unknown agent kind {kind!r}; choose from {AGENT_KINDS}")
    net = Network(g, {j: make_agent(kind, j, _param_for(kind, params, j), damping=damping, alpha=alpha)
                      for j in g.vertices})
    pending = sorted(schedule.churn, key=lambda e: e.round)
    snaps = []
    for rnd in range(1, schedule.rounds + 1):
        for ev in [e for e in pending if e.round == rnd]:
            net.g = apply_churn(net.g, ev)
            if ev.op == "remove_link":
                net.agents.pop(ev.args[0])
            elif ev.op == "add_link":
                param = ev.args[2] if len(ev.args) > 2 else params
                net.agents[ev.args[0]] = make_agent(kind, ev.args[0], _param_for(kind, param, ev.args[0]),
                                                    damping=damping, alpha=alpha)
        for a in net.agents.values():
            a.flags.discard("reset")
        net.tick(schedule.t1)
        snaps.append(RoundSnapshot(rnd, {j: a.snapshot() for j, a in sorted(net.agents.items())}))
    return snaps


# ---------------------------------------------------------------------------
# bootstrap and feature checks


@dataclass
class BootstrapResult:
    local: dict[int, ContentionGraph]
    one_hop_history: list[dict[int, ContentionGraph]]


def bootstrap_local_graphs(g: ContentionGraph, rounds: int = BOOTSTRAP_ROUNDS) -> BootstrapResult:
    """Run the discovery broadcasts alone; ``one_hop_history[k]`` is each
    agent's closed-neighborhood view after round ``k + 1``."""
    net = Network(g, {j: Agent(j) for j in g.vertices})
    for a in net.agents.values():
        a.receive = lambda inbox, phase, a=a: a.discover(inbox)
    history = []
    for _ in range(rounds):
        net.phase("main")
        history.append({j: a.one_hop for j, a in net.agents.items()})
    return BootstrapResult({j: a.local_graph for j, a in net.agents.items()}, history)


@dataclass
class FeatureReport:
    checks: dict[str, bool]
    failures: dict[str, list] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(self.checks.values())


def check_features(
    g: ContentionGraph,
    rho: Mapping[int, float] | float = 1.0,
    messages: Mapping | None = None,
    withhold: Iterable[tuple[int, int]] = (),
) -> FeatureReport:
    """Check each agent's local region graph and information reach.

    F1: local regions and edges are global ones. F2: the agent's region
    belief needs only messages it owns or hears, and equals the global one.
    F3: the same for every message it owns. ``messages`` defaults to a
    deterministic random global table; ``withhold`` drops broadcasts
    ``(sender, receiver)`` to plant faults.
    """
    withhold = frozenset(withhold)
    rg = build_region_graph(g)
    if messages is None:
        rng = np.random.default_rng(0)
        messages = {e: _norm(rng.random(len(e[1]) + 1) + 0.1) for e in rg.edges}
    rho_map = {v: float(rho) for v in g.vertices} if isinstance(rho, (int, float)) else dict(rho)

    locals_ = {j: build_region_graph_from_local(two_hop_local_graph(g, j), j) for j in g.vertices}
    owned = {j: elect_message_agents(locals_[j], j) for j in g.vertices}
    fails = {"F1": [], "F2": [], "F3": []}
    global_edges, global_regions = set(rg.edges), set(rg.regions)
    for j in g.vertices:
        lrg = locals_[j]
        fails["F1"] += [(j, r) for r in lrg.regions if r not in global_regions]
        fails["F1"] += [(j, e) for e in lrg.edges if e not in global_edges]
        audible = {i for i in g.adj[j] if (i, j) not in withhold}
        reach = set(owned[j]).union(*(owned[i] for i in audible)) if audible else set(owned[j])
        table = {e: messages[e] for e in reach if e in messages}
        rhos = {v: rho_map[v] for v in g.closed_neighbors(j)}

        region = lrg.smallest_region(j)
        need = external_messages_into(lrg, region)
        if not need <= set(table):
            fails["F2"].append((j, region, sorted(need - set(table))))
        else:
            local_b = region_belief(lrg, rhos, table, region)
            global_b = region_belief(rg, rho_map, messages, region)
            if not np.allclose(local_b, global_b, rtol=1e-12, atol=1e-15):
                fails["F2"].append((j, region, "belief mismatch"))
        for p, r in sorted(owned[j]):
            need = numerator_messages(lrg, p, r) | denominator_messages(lrg, p, r)
            if not need <= set(table):
                fails["F3"].append((j, (p, r), sorted(need - set(table))))
                continue
            local_m = gbp_message_update(lrg, rhos, table, (p, r))
            global_m = gbp_message_update(rg, rho_map, messages, (p, r))
            if not np.allclose(local_m, global_m, rtol=1e-12, atol=1e-15):
                fails["F3"].append((j, (p, r), "message mismatch"))
    covered = [e for j in g.vertices for e in owned[j]]
    partition = sorted(covered) == sorted(rg.edges)
    checks = {k: not v for k, v in fails.items()}
    checks["partition"] = partition
    report = FeatureReport(checks, {k: v[:10] for k, v in fails.items() if v})
    if not partition:
        report.failures["partition"] = sorted(set(covered) ^ global_edges)[:10]
    return report
