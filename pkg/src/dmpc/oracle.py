"""
dmpc/oracle.py - Brute-Force Ground Truth

Independent checks of every maintained solution. Oracles work on a plain
graph (a networkx.Graph or any iterable of edges, optionally weighted) and
on the dump-level view of a solution (matched edges, component labels, tour
entries, forest edges). They never touch simulator state.

Checks return a Verdict: ``ok`` plus a witness when the check failed.
"""

from __future__ import annotations

from typing import Any, Dict, Iterable, List, Mapping, NamedTuple, Optional, Sequence, Set, Tuple, Union

import networkx as nx

from .errors import TooLarge
from .utils import canonical_edge

GraphLike = Union[nx.Graph, Iterable[Tuple[Any, ...]]]

# Largest edge count max_matching_exhaustive accepts.
EXHAUSTIVE_LIMIT = 24


class Verdict(NamedTuple):
    ok: bool
    witness: Any = None

    def __bool__(self) -> bool:
        return self.ok


def as_graph(graph: GraphLike, n: Optional[int] = None) -> nx.Graph:
    """A networkx copy of ``graph``; edge tuples may carry a weight third."""
    if isinstance(graph, nx.Graph):
        G = graph.copy()
    else:
        G = nx.Graph()
        for edge in graph:
            if len(edge) > 2 and edge[2] is not None:
                G.add_edge(edge[0], edge[1], weight=edge[2])
            else:
                G.add_edge(edge[0], edge[1])
    if n is not None:
        G.add_nodes_from(range(n))
    return G


def _edge_set(matching: Union[Mapping[int, int], Iterable[Tuple[int, int]]]) -> Set[Tuple[int, int]]:
    if isinstance(matching, Mapping):
        return {canonical_edge(v, w) for v, w in matching.items()}
    return {canonical_edge(v, w) for v, w in matching}


# ---------------------------------------------------------------------------
# Matching
# ---------------------------------------------------------------------------

def check_maximal(graph: GraphLike, matching: Union[Mapping[int, int], Iterable[Tuple[int, int]]]) -> Verdict:
    """
    Matching edges are graph edges, vertex-disjoint, and leave no edge with two free ends.

    Example:
        >>> check_maximal([(0, 1), (1, 2), (2, 3)], [(1, 2)])
        Verdict(ok=True, witness=None)
        >>> check_maximal([(0, 1), (1, 2), (2, 3)], [])
        Verdict(ok=False, witness=(0, 1))
    """
    G = as_graph(graph)
    edges = _edge_set(matching)
    covered: Set[int] = set()
    for u, v in sorted(edges):
        if not G.has_edge(u, v):
            return Verdict(False, (u, v))
        if u in covered or v in covered:
            return Verdict(False, (u, v))
        covered.update((u, v))
    for u, v in sorted(canonical_edge(u, v) for u, v in G.edges()):
        if u not in covered and v not in covered:
            return Verdict(False, (u, v))
    return Verdict(True)


def check_no_short_augmenting(
    graph: GraphLike, matching: Union[Mapping[int, int], Iterable[Tuple[int, int]]]
) -> Verdict:
    """
    No augmenting path of length 1 or 3.

    A length-3 path is f1 - a = b - f2 with (a, b) matched and f1 != f2
    free; the witness is the path.

    Example:
        >>> check_no_short_augmenting([(0, 1), (1, 2), (2, 3)], [(1, 2)])
        Verdict(ok=False, witness=(0, 1, 2, 3))
    """
    G = as_graph(graph)
    verdict = check_maximal(G, matching)
    if not verdict:
        return verdict
    edges = _edge_set(matching)
    covered = {v for edge in edges for v in edge}
    for a, b in sorted(edges):
        for x, y in ((a, b), (b, a)):
            free_x = sorted(w for w in G.neighbors(x) if w not in covered)
            free_y = sorted(w for w in G.neighbors(y) if w not in covered)
            for f1 in free_x:
                for f2 in free_y:
                    if f1 != f2:
                        return Verdict(False, (f1, x, y, f2))
    return Verdict(True)


def max_matching_exhaustive(graph: GraphLike) -> int:
    """
    Exact maximum matching size by branching on edges.

    Raises:
        TooLarge: The graph has more than 24 edges.

    Example:
        >>> max_matching_exhaustive(nx.petersen_graph())
        5
    """
    G = as_graph(graph)
    edges = sorted(canonical_edge(u, v) for u, v in G.edges())
    if len(edges) > EXHAUSTIVE_LIMIT:
        raise TooLarge(f"{len(edges)} edges, exhaustive search takes at most {EXHAUSTIVE_LIMIT}")
    best = 0

    def search(start: int, used: Set[int], size: int) -> None:
        nonlocal best
        best = max(best, size)
        remaining = len(edges) - start
        # Prune: no better result even if every remaining edge were added.
        if size + remaining <= best or size + (G.number_of_nodes() - len(used)) // 2 <= best:
            return
        for i in range(start, len(edges)):
            u, v = edges[i]
            if u in used or v in used:
                continue
            used.update((u, v))
            search(i + 1, used, size + 1)
            used.difference_update((u, v))

    search(0, set(), 0)
    return best


def check_free_counters(
    graph: GraphLike, mates: Mapping[int, int], counters: Mapping[int, int]
) -> Verdict:
    """Every vertex's stored free-neighbour count equals a recount."""
    G = as_graph(graph)
    for v in sorted(G.nodes()):
        expected = sum(1 for w in G.neighbors(v) if w not in mates)
        if counters.get(v, 0) != expected:
            return Verdict(False, (v, counters.get(v, 0), expected))
    for v, count in sorted(counters.items()):
        if count and v not in G:
            return Verdict(False, (v, count, 0))
    return Verdict(True)


def check_placement(graph: GraphLike, copies: Mapping[Tuple[int, int], int]) -> Verdict:
    """
    Every graph edge is stored once in each direction and nothing else is stored.

    ``copies`` counts live ``(owner, nbr)`` copies; the witness is
    ``(owner, nbr, stored, expected)``.

    Example:
        >>> check_placement([(0, 1)], {(0, 1): 1, (1, 0): 1})
        Verdict(ok=True, witness=None)
        >>> check_placement([(0, 1)], {(0, 1): 1})
        Verdict(ok=False, witness=(1, 0, 0, 1))
    """
    G = as_graph(graph)
    expected = {(u, v): 1 for a, b in G.edges() for u, v in ((a, b), (b, a))}
    for pair in sorted(set(expected) | {p for p, count in copies.items() if count}):
        stored = copies.get(pair, 0)
        if stored != expected.get(pair, 0):
            return Verdict(False, (*pair, stored, expected.get(pair, 0)))
    return Verdict(True)


# ---------------------------------------------------------------------------
# Components and forests
# ---------------------------------------------------------------------------

class UnionFind:
    def __init__(self, items: Iterable[int] = ()):
        self.parent: Dict[int, int] = {x: x for x in items}

    def find(self, x: int) -> int:
        self.parent.setdefault(x, x)
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a: int, b: int) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        if rb < ra:
            ra, rb = rb, ra
        self.parent[rb] = ra
        return True


def components_oracle(graph: GraphLike, n: Optional[int] = None) -> Dict[int, int]:
    """
    Smallest vertex of each vertex's component.

    Example:
        >>> components_oracle([], n=3)
        {0: 0, 1: 1, 2: 2}
    """
    G = as_graph(graph, n)
    uf = UnionFind(G.nodes())
    for u, v in G.edges():
        uf.union(u, v)
    return {v: uf.find(v) for v in sorted(G.nodes())}


def same_partition(labels: Mapping[int, int], expected: Mapping[int, int]) -> Verdict:
    """Two labellings describe the same partition; the witness is a vertex where they disagree."""
    forward: Dict[int, int] = {}
    backward: Dict[int, int] = {}
    for v in sorted(expected):
        a, b = labels.get(v, v), expected[v]
        if forward.setdefault(a, b) != b or backward.setdefault(b, a) != a:
            return Verdict(False, v)
    return Verdict(True)


def mst_oracle(graph: GraphLike) -> int:
    """
    Minimum spanning forest weight by Kruskal.

    Example:
        >>> mst_oracle([(0, 1, 5), (1, 2, 2), (0, 2, 1)])
        3
    """
    G = as_graph(graph)
    uf = UnionFind(G.nodes())
    total = 0
    ordered = sorted((data["weight"], *canonical_edge(u, v)) for u, v, data in G.edges(data=True))
    for weight, u, v in ordered:
        if uf.union(u, v):
            total += weight
    return total


def prim_weight(graph: GraphLike) -> int:
    """Minimum spanning forest weight by networkx's Prim, for cross-checking."""
    forest = nx.minimum_spanning_tree(as_graph(graph), algorithm="prim")
    return sum(data["weight"] for _, _, data in forest.edges(data=True))


def check_spanning_forest(graph: GraphLike, forest: Iterable[Tuple[int, int]], n: Optional[int] = None) -> Verdict:
    """``forest`` is acyclic, uses graph edges and spans every component."""
    G = as_graph(graph, n)
    uf = UnionFind(G.nodes())
    for u, v in sorted(canonical_edge(u, v) for u, v in forest):
        if not G.has_edge(u, v) or not uf.union(u, v):
            return Verdict(False, (u, v))
    for u, v in sorted(canonical_edge(u, v) for u, v in G.edges()):
        if uf.find(u) != uf.find(v):
            return Verdict(False, (u, v))
    return Verdict(True)


def tree_path(forest: Iterable[Tuple[int, int]], x: int, y: int) -> Set[Tuple[int, int]]:
    """Edges of the forest path between x and y."""
    F = nx.Graph(list(forest))
    path = nx.shortest_path(F, x, y)
    return {canonical_edge(a, b) for a, b in zip(path, path[1:])}


# ---------------------------------------------------------------------------
# Euler tours
# ---------------------------------------------------------------------------

def check_tour(tour: Sequence[Optional[int]], tree_edges: Iterable[Tuple[int, int]]) -> Verdict:
    """
    One component's tour is a valid Euler tour of its tree edges.

    Entries (2k-1, 2k) form one traversal, consecutive traversals meet at
    the same vertex, every tree edge is traversed once each way, and the
    tour starts and ends at the root.

    Example:
        >>> check_tour([0, 1, 1, 2, 2, 1, 1, 0], [(0, 1), (1, 2)])
        Verdict(ok=True, witness=None)
        >>> check_tour([0, 1, 1, 0, 2, 0, 0, 2], [(0, 1), (0, 2)])
        Verdict(ok=False, witness=('walk', 4))
    """
    edges = {canonical_edge(u, v) for u, v in tree_edges}
    if len(tour) != 4 * len(edges):
        return Verdict(False, ("length", len(tour)))
    if not tour:
        return Verdict(True)
    for i, vertex in enumerate(tour, start=1):
        if vertex is None:
            return Verdict(False, ("missing", i))
    seen: Set[Tuple[int, int]] = set()
    for k in range(0, len(tour), 2):
        a, b = tour[k], tour[k + 1]
        if canonical_edge(a, b) not in edges or (a, b) in seen:
            return Verdict(False, ("traversal", k + 1))
        seen.add((a, b))
        if k + 2 < len(tour) and tour[k + 2] != b:
            return Verdict(False, ("walk", k + 2))
    if tour[0] != tour[-1]:
        return Verdict(False, ("walk", len(tour)))
    return Verdict(True)


def check_tours(
    tours: Mapping[int, Sequence[Optional[int]]],
    forest: Iterable[Tuple[int, int]],
    labels: Mapping[int, int],
) -> Verdict:
    """Every component's tour is valid for the forest edges inside it."""
    by_comp: Dict[int, List[Tuple[int, int]]] = {comp: [] for comp in tours}
    for u, v in forest:
        if labels[u] != labels[v]:
            return Verdict(False, ("split edge", canonical_edge(u, v)))
        by_comp.setdefault(labels[u], []).append((u, v))
    for comp in sorted(by_comp):
        verdict = check_tour(tours.get(comp, ()), by_comp[comp])
        if not verdict:
            return Verdict(False, (comp,) + verdict.witness)
    return Verdict(True)
