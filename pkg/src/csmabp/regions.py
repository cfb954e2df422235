"""Clique-seeded region graphs for generalized belief propagation.

Level 0 holds the maximal cliques. Each lower level holds pairwise
intersections of the level just above with itself and with every earlier
level; a candidate is dropped if it already exists higher up, then dropped if
it is a strict subset of another surviving candidate. Edges run from each
region to its immediate sub-regions, i.e. there is no third region strictly
between parent and child.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field
from typing import Iterable

import networkx as nx

from .graph import ContentionGraph, GraphError, enumerate_maximal_cliques, two_hop_local_graph

RegionKey = tuple  # sorted member tuple


@dataclass(frozen=True)
class Region:
    members: tuple[int, ...]
    level: int

    def __contains__(self, v) -> bool:
        return v in self.members

    @property
    def size(self) -> int:
        return len(self.members)


def _sort_key(key: RegionKey):
    return (len(key) and key[0], len(key), key)


@dataclass(frozen=True)
class RegionGraph:
    """Leveled region DAG; regions are keyed by their sorted member tuple.

    ``owner`` is set for local region graphs and is ``None`` for the global one.
    """

    levels: tuple[tuple[RegionKey, ...], ...]
    edges: tuple[tuple[RegionKey, RegionKey], ...]
    owner: int | None = None
    _level_of: dict = field(default=None, compare=False, hash=False, repr=False)
    _parents: dict = field(default=None, compare=False, hash=False, repr=False)
    _children: dict = field(default=None, compare=False, hash=False, repr=False)

    def __post_init__(self):
        level_of = {r: k for k, lv in enumerate(self.levels) for r in lv}
        parents = {r: [] for r in level_of}
        children = {r: [] for r in level_of}
        for p, c in self.edges:
            parents[c].append(p)
            children[p].append(c)
        object.__setattr__(self, "_level_of", level_of)
        object.__setattr__(self, "_parents", {r: tuple(v) for r, v in parents.items()})
        object.__setattr__(self, "_children", {r: tuple(v) for r, v in children.items()})

    @property
    def regions(self) -> list[RegionKey]:
        return [r for lv in self.levels for r in lv]

    def __contains__(self, key) -> bool:
        return tuple(key) in self._level_of

    def __len__(self) -> int:
        return len(self._level_of)

    def region(self, key) -> Region:
        key = tuple(key)
        return Region(key, self.level(key))

    def level(self, key) -> int:
        try:
            return self._level_of[tuple(key)]
        except KeyError:
            raise GraphError(f"unknown region {tuple(key)}") from None

    def parents(self, key) -> tuple[RegionKey, ...]:
        self.level(key)
        return self._parents[tuple(key)]

    def children(self, key) -> tuple[RegionKey, ...]:
        self.level(key)
        return self._children[tuple(key)]

    def regions_containing(self, v: int) -> list[RegionKey]:
        return [r for r in self.regions if v in r]

    def smallest_region(self, v: int) -> RegionKey:
        """Smallest region containing ``v``; ties go to the lowest member tuple."""
        found = self.regions_containing(v)
        if not found:
            raise GraphError(f"no region contains link {v}")
        return min(found, key=lambda r: (len(r), r))

    def to_dict(self) -> dict:
        return {
            "owner": self.owner,
            "regions": [{"members": list(r), "level": k} for k, lv in enumerate(self.levels) for r in lv],
            "edges": [[list(p), list(c)] for p, c in self.edges],
        }


def _immediate_edges(regions: Iterable[RegionKey]) -> list[tuple[RegionKey, RegionKey]]:
    regs = [frozenset(r) for r in regions]
    by_vertex: dict[int, list[frozenset]] = {}
    for r in regs:
        for v in r:
            by_vertex.setdefault(v, []).append(r)
    edges = []
    for r in regs:
        supers = [p for p in by_vertex[min(r)] if r < p]
        for p in supers:
            if not any(r < q < p for q in supers):
                edges.append((tuple(sorted(p)), tuple(sorted(r))))
    return sorted(edges, key=lambda e: (_sort_key(e[0]), _sort_key(e[1])))


def _construct(seeds: Iterable[frozenset], keep=lambda r: True) -> RegionGraph:
    levels: list[list[frozenset]] = [sorted({frozenset(s) for s in seeds}, key=lambda r: _sort_key(tuple(sorted(r))))]
    seen = set(levels[0])
    while True:
        top = levels[-1]
        cand = set()
        for a in range(len(top)):
            for b in range(a + 1, len(top)):
                cand.add(top[a] & top[b])
        for lower in levels[:-1]:
            for ra in top:
                for rb in lower:
                    cand.add(ra & rb)
        cand = {r for r in cand if r and keep(r) and r not in seen}
        cand = {r for r in cand if not any(r < q for q in cand)}
        if not cand:
            break
        levels.append(sorted(cand, key=lambda r: _sort_key(tuple(sorted(r)))))
        seen |= cand
    keys = tuple(tuple(tuple(sorted(r)) for r in lv) for lv in levels)
    return keys, _immediate_edges(r for lv in keys for r in lv)


@functools.lru_cache(maxsize=256)
def build_region_graph(g: ContentionGraph) -> RegionGraph:
    """Region graph of the whole contention graph."""
    if not len(g):
        return RegionGraph(levels=((),), edges=())
    levels, edges = _construct(frozenset(c) for c in enumerate_maximal_cliques(g))
    return RegionGraph(levels=levels, edges=tuple(edges))


def build_region_graph_from_local(local: ContentionGraph, j: int) -> RegionGraph:
    """Local construction given an already-assembled two-hop graph of ``j``."""
    hood = local.closed_neighbors(j)
    seeds = [frozenset(c) for c in enumerate_maximal_cliques(local) if hood & set(c)]
    levels, edges = _construct(seeds, keep=lambda r: bool(r & hood))
    return RegionGraph(levels=levels, edges=tuple(edges), owner=j)


def build_local_region_graph(g: ContentionGraph, j: int) -> RegionGraph:
    """Region graph vertex ``j`` can build from its two-hop neighborhood.

    Only regions touching the closed one-hop neighborhood of ``j`` are kept.
    """
    return build_region_graph_from_local(two_hop_local_graph(g, j), j)


@functools.lru_cache(maxsize=65536)
def descendant_closure(rg: RegionGraph, key) -> frozenset:
    """``key`` plus every region reachable along parent-to-child edges."""
    key = tuple(key)
    rg.level(key)
    out = {key}
    stack = [key]
    while stack:
        for c in rg.children(stack.pop()):
            if c not in out:
                out.add(c)
                stack.append(c)
    return frozenset(out)


@functools.lru_cache(maxsize=65536)
def external_messages_into(rg: RegionGraph, key) -> frozenset:
    """Edges ``(P', R')`` with ``R'`` in the closure of ``key`` and ``P'`` outside it."""
    closure = descendant_closure(rg, key)
    return frozenset((p, r) for r in closure for p in rg.parents(r) if p not in closure)


@functools.lru_cache(maxsize=65536)
def numerator_messages(rg: RegionGraph, parent, child) -> frozenset:
    """External messages into the parent's closure that are not external to the child's."""
    return external_messages_into(rg, parent) - external_messages_into(rg, child)


@functools.lru_cache(maxsize=65536)
def denominator_messages(rg: RegionGraph, parent, child) -> frozenset:
    """Messages from the parent's closure minus the child's closure into the child's
    closure, the edge ``parent -> child`` itself excluded."""
    dp = descendant_closure(rg, parent)
    dr = descendant_closure(rg, child)
    edge = (tuple(parent), tuple(child))
    return frozenset(
        (p, r) for r in dr for p in rg.parents(r) if p in dp and p not in dr and (p, r) != edge
    )


def is_loop_free(rg: RegionGraph) -> bool:
    """True when the region graph, taken as undirected, has no cycle."""
    ug = nx.Graph()
    ug.add_nodes_from(rg.regions)
    ug.add_edges_from(rg.edges)
    return nx.is_forest(ug)


# ---------------------------------------------------------------------------
# validation


@dataclass
class RegionReport:
    checks: dict[str, bool]
    failures: dict[str, list] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(self.checks.values())

    def record(self, name: str, problems: list):
        self.checks[name] = not problems
        if problems:
            self.failures[name] = problems[:10]


def validate_region_graph(rg: RegionGraph, g: ContentionGraph, reference: RegionGraph | None = None) -> RegionReport:
    """Structural checks; names follow the numbered properties and features.

    For a local graph (``rg.owner`` set) pass the global graph as ``reference``
    to also check Features 1 and 1'.
    """
    report = RegionReport(checks={})
    regions = rg.regions
    regset = set(regions)
    hood = g.closed_neighbors(rg.owner) if rg.owner is not None else None

    def relevant(r) -> bool:
        return hood is None or bool(hood & set(r))

    # level 0 is exactly the maximal cliques (meeting the neighborhood when local)
    cliques = {c for c in enumerate_maximal_cliques(g) if relevant(c)}
    level0 = set(rg.levels[0]) if rg.levels else set()
    report.record("P1", sorted(cliques ^ level0))

    # every region is a clique
    report.record("P2", [r for r in regions if any(not g.has_edge(a, b) for k, a in enumerate(r) for b in r[k + 1:])])

    # closure under relevant non-empty intersections
    missing = []
    for a in range(len(regions)):
        sa = set(regions[a])
        for b in range(a + 1, len(regions)):
            inter = tuple(sorted(sa & set(regions[b])))
            if inter and relevant(inter) and inter not in regset:
                missing.append((regions[a], regions[b]))
    report.record("P3", missing)

    # edges are exactly the immediate containments
    want = set(_immediate_edges(regions))
    have = set(rg.edges)
    report.record("P4", sorted(want ^ have))

    # no region listed twice and no region appears on two levels
    report.record("unique", [r for r in regset if regions.count(r) > 1])

    if reference is not None and rg.owner is not None:
        ref_regions = set(reference.regions)
        ref_edges = set(reference.edges)
        extra_r = [r for r in regions if r not in ref_regions]
        extra_e = [e for e in rg.edges if e not in ref_edges]
        report.record("F1", extra_r + extra_e)
        need_r = [r for r in ref_regions if relevant(r) and r not in regset]
        report.record("P5", need_r)
        need_e = [e for e in ref_edges if e[0] in regset and e[1] in regset and e not in have]
        report.record("P6", need_e)
        touching = [e for e in ref_edges if relevant(e[0]) and relevant(e[1]) and e not in have]
        report.record("F1'", need_r + touching)
    return report
