"""Contention graphs, topology generators and combinatorial enumeration."""

from __future__ import annotations

import functools
import json
import math
import random
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping

import networkx as nx
import numpy as np

ENUMERATION_CAP = 25


class GraphError(ValueError):
    """Malformed graph construction or unknown vertex."""


class GraphTooLargeError(ValueError):
    """Graph exceeds the enumeration cap of an exact engine."""


@dataclass(frozen=True)
class ContentionGraph:
    """Undirected conflict graph over integer link ids.

    Immutable and hashable, so it can key caches of derived structures.
    """

    vertices: tuple[int, ...]
    edges: tuple[tuple[int, int], ...]
    adj: Mapping[int, frozenset] = field(compare=False, hash=False, repr=False)

    def __len__(self) -> int:
        return len(self.vertices)

    def __contains__(self, v) -> bool:
        return v in self.adj

    def neighbors(self, v: int) -> frozenset:
        try:
            return self.adj[v]
        except KeyError:
            raise GraphError(f"unknown vertex {v}") from None

    def closed_neighbors(self, v: int) -> frozenset:
        return self.neighbors(v) | {v}

    def degree(self, v: int) -> int:
        return len(self.neighbors(v))

    def mean_degree(self) -> float:
        if not self.vertices:
            return 0.0
        return 2.0 * len(self.edges) / len(self.vertices)

    def has_edge(self, u: int, v: int) -> bool:
        return v in self.adj.get(u, ())

    def subgraph(self, keep: Iterable[int]) -> "ContentionGraph":
        keep = set(keep)
        return build_graph(
            sorted(keep), [(u, v) for u, v in self.edges if u in keep and v in keep]
        )

    def is_tree(self) -> bool:
        return len(self.vertices) > 0 and nx.is_tree(self.to_networkx())

    def is_forest(self) -> bool:
        return nx.is_forest(self.to_networkx()) if self.vertices else True

    def is_connected(self) -> bool:
        return len(self.vertices) > 0 and nx.is_connected(self.to_networkx())

    def to_networkx(self) -> nx.Graph:
        g = nx.Graph()
        g.add_nodes_from(self.vertices)
        g.add_edges_from(self.edges)
        return g

    def to_dict(self, **per_link: Mapping[int, float]) -> dict:
        links = []
        for v in self.vertices:
            entry = {"id": v}
            for key, values in per_link.items():
                if values is not None and v in values:
                    entry[key] = float(values[v])
            links.append(entry)
        return {"links": links, "edges": [list(e) for e in self.edges]}


def build_graph(vertices: Iterable[int], edges: Iterable[tuple[int, int]]) -> ContentionGraph:
    verts = [int(v) for v in vertices]
    if len(set(verts)) != len(verts):
        raise GraphError("duplicate vertex id")
    if any(v < 0 for v in verts):
        raise GraphError("link ids must be non-negative")
    adj: dict[int, set] = {v: set() for v in verts}
    for u, v in edges:
        u, v = int(u), int(v)
        if u == v:
            raise GraphError(f"self-edge on {u}")
        if u not in adj or v not in adj:
            raise GraphError(f"dangling edge ({u}, {v})")
        adj[u].add(v)
        adj[v].add(u)
    canon = sorted({(min(u, v), max(u, v)) for u in adj for v in adj[u]})
    return ContentionGraph(
        vertices=tuple(sorted(verts)),
        edges=tuple(canon),
        adj={v: frozenset(n) for v, n in adj.items()},
    )


def graph_from_dict(data: Mapping) -> tuple[ContentionGraph, dict[str, dict[int, float]]]:
    """Parse the graph JSON schema; returns the graph and any per-link fields."""
    links = data["links"]
    ids = [int(link["id"]) for link in links]
    extras: dict[str, dict[int, float]] = {}
    for link in links:
        for key, value in link.items():
            if key != "id":
                extras.setdefault(key, {})[int(link["id"])] = float(value)
    return build_graph(ids, [tuple(e) for e in data.get("edges", [])]), extras


def load_graph(path) -> tuple[ContentionGraph, dict[str, dict[int, float]]]:
    with open(path) as fh:
        return graph_from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# generators


def ring_graph(n: int) -> ContentionGraph:
    if n < 3:
        raise GraphError("ring needs at least 3 vertices")
    return build_graph(range(1, n + 1), [(i, i % n + 1) for i in range(1, n + 1)])


def path_graph(n: int) -> ContentionGraph:
    return build_graph(range(1, n + 1), [(i, i + 1) for i in range(1, n)])


def complete_graph(n: int) -> ContentionGraph:
    return build_graph(
        range(1, n + 1), [(i, j) for i in range(1, n + 1) for j in range(i + 1, n + 1)]
    )


def star_graph(leaves: int) -> ContentionGraph:
    return build_graph(range(1, leaves + 2), [(1, i) for i in range(2, leaves + 2)])


def cayley_tree_graph(z: int, layers: int) -> ContentionGraph:
    """Cayley tree of order ``z`` with ``layers`` shells around root link 1.

    Shell 0 is the root; shell 1 holds its ``z`` neighbors and every vertex in
    shells 1..layers-1 gets ``z - 1`` children, so z=3, layers=4 has 46 links.
    Ids are assigned breadth first.
    """
    if z < 2 or layers < 0:
        raise GraphError("need z >= 2 and layers >= 0")
    edges = []
    shell = [1]
    next_id = 2
    for depth in range(layers):
        fanout = z if depth == 0 else z - 1
        new_shell = []
        for parent in shell:
            for _ in range(fanout):
                edges.append((parent, next_id))
                new_shell.append(next_id)
                next_id += 1
        shell = new_shell
    return build_graph(range(1, next_id), edges)


def random_tree(n: int, seed: int) -> ContentionGraph:
    """Uniform-attachment random tree on ids 1..n."""
    rng = random.Random(seed)
    edges = [(v, rng.randint(1, v - 1)) for v in range(2, n + 1)]
    return build_graph(range(1, n + 1), edges)


def random_geometric_graph(
    n: int, target_mean_degree: float, seed: int | tuple[int, ...], *, tolerance: float = 0.5
) -> ContentionGraph:
    """Unit-disk contention graph with links placed uniformly in a unit square.

    The radius is calibrated so that the realized mean degree lands within
    ``tolerance`` of the target. Mean degree is a step function of the radius
    with jumps at pairwise distances, so the calibration searches the sorted
    distances directly; the smallest qualifying radius wins.
    """
    if n < 1 or target_mean_degree < 0:
        raise GraphError("need n >= 1 and a non-negative target degree")
    if target_mean_degree > n - 1:
        raise GraphError(f"mean degree {target_mean_degree} unattainable with {n} links")
    rng = np.random.default_rng(seed)
    pts = rng.random((n, 2))
    iu, ju = np.triu_indices(n, k=1)
    dist = np.hypot(*(pts[iu] - pts[ju]).T)
    order = np.argsort(dist, kind="stable")
    # k edges give mean degree 2k/n; half-way ties round down (smaller radius)
    k = math.ceil(target_mean_degree * n / 2 - 0.5)
    if abs(2 * k / n - target_mean_degree) > tolerance + 1e-12:
        raise GraphError(f"mean degree {target_mean_degree} unattainable with {n} links")
    chosen = order[:k]
    edges = [(int(iu[e]) + 1, int(ju[e]) + 1) for e in chosen]
    return build_graph(range(1, n + 1), edges)


def random_connected_geometric_graph(
    n: int, target_mean_degree: float, seed: int, max_tries: int = 1000
) -> ContentionGraph:
    """First connected draw of :func:`random_geometric_graph` from ``seed`` on.

    Sparse large graphs are rarely connected (about 0.2% of 100-link degree-4
    draws), so after ``max_tries`` plain seeds the search continues on a
    per-seed stream that cannot collide with other seeds' draws.
    """
    for attempt in range(max_tries):
        g = random_geometric_graph(n, target_mean_degree, seed * max_tries + attempt)
        if g.is_connected():
            return g
    for attempt in range(100 * max_tries):
        g = random_geometric_graph(n, target_mean_degree, (seed, attempt))
        if g.is_connected():
            return g
    raise GraphError("no connected draw found")


def fig1_graph() -> ContentionGraph:
    """Four-link example whose feasible states are 0000,1000,...,1010,1001."""
    return build_graph([1, 2, 3, 4], [(1, 2), (2, 3), (2, 4), (3, 4)])


FIG6_CLIQUES = ((1, 2), (1, 3), (3, 4), (2, 4, 5), (4, 5, 6), (5, 6, 8), (5, 9), (6, 7))


def fig6_graph() -> ContentionGraph:
    """Nine-link region-graph example, edges being the union of its cliques."""
    edges = {
        (a, b) for clique in FIG6_CLIQUES for a in clique for b in clique if a < b
    }
    return build_graph(range(1, 10), edges)


# ---------------------------------------------------------------------------
# enumeration


def enumerate_maximal_cliques(g: ContentionGraph) -> list[tuple[int, ...]]:
    """Inclusion-maximal cliques (pivoted Bron-Kerbosch), sorted."""
    cliques = (tuple(sorted(c)) for c in nx.find_cliques(g.to_networkx()))
    return sorted(cliques, key=lambda c: (c[0], len(c), c))


def enumerate_independent_sets(
    g: ContentionGraph, cap: int = ENUMERATION_CAP
) -> Iterator[frozenset]:
    """Every independent set of ``g``, the empty set first."""
    if len(g) > cap:
        raise GraphTooLargeError(f"{len(g)} links exceeds enumeration cap {cap}")
    order = list(g.vertices)

    def extend(start: int, current: frozenset, blocked: frozenset):
        yield current
        for k in range(start, len(order)):
            v = order[k]
            if v not in blocked:
                yield from extend(k + 1, current | {v}, blocked | g.adj[v])

    yield from extend(0, frozenset(), frozenset())


@functools.lru_cache(maxsize=64)
def independent_set_matrix(g: ContentionGraph, cap: int = ENUMERATION_CAP) -> np.ndarray:
    """Boolean incidence matrix, one row per independent set, columns in vertex order."""
    index = {v: k for k, v in enumerate(g.vertices)}
    sets = list(enumerate_independent_sets(g, cap))
    mat = np.zeros((len(sets), len(g)), dtype=bool)
    for row, s in enumerate(sets):
        mat[row, [index[v] for v in s]] = True
    mat.setflags(write=False)
    return mat


def greedy_maximal_independent_set(g: ContentionGraph, rng: random.Random) -> frozenset:
    order = list(g.vertices)
    rng.shuffle(order)
    chosen: set[int] = set()
    blocked: set[int] = set()
    for v in order:
        if v not in blocked:
            chosen.add(v)
            blocked |= g.closed_neighbors(v)
    return frozenset(chosen)


def two_hop_local_graph(g: ContentionGraph, j: int) -> ContentionGraph:
    """Union of the closed one-hop graphs of ``j`` and of each of its neighbors."""
    verts: set[int] = set()
    edges: set[tuple[int, int]] = set()
    for i in g.closed_neighbors(j):
        hood = g.closed_neighbors(i)
        verts |= hood
        edges |= {(u, v) for u in hood for v in g.adj[u] & hood if u < v}
    return build_graph(sorted(verts), edges)
