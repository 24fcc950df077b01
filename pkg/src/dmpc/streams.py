"""
dmpc/streams.py - Update Streams

Parsing, generation and formatting of update stream files.

Stream grammar, one item per line:

    # comment               ignored, as are blank lines
    vertices <n>            optional size of the vertex universe
    preload                 opens the preload section (insertions only)
    updates                 closes it; optional when there is no preload
    + <u> <v> [<w>]         insert edge (u, v), optional decimal weight
    - <u> <v>               delete edge (u, v)
    ? <u> <v>               query u and v

Preload edges are the initial graph handed to preprocessing; they are not
updates and produce no metrics rows. Weights are decimals converted to
fixed-point words at the configured scale.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, NamedTuple, Optional, Set, Tuple

import networkx as nx
import numpy as np

from .errors import ConfigError, StreamParseError
from .models import Op
from .utils import DEFAULT_WEIGHT_SCALE, canonical_edge, from_fixed, to_fixed

logger = logging.getLogger(__name__)

_OPS = {"+": Op.INSERT, "-": Op.DELETE, "?": Op.QUERY}


class Update(NamedTuple):
    op: Op
    u: int
    v: int
    weight: Optional[int] = None
    line_no: int = 0


@dataclass
class Stream:
    """
    A parsed stream.

    Attributes:
        preload: Initial edges as ``(u, v, weight)``; weight None when unweighted.
        updates: The updates in order.
        n: Vertex universe size: the declared size or the largest ID plus one.
    """

    preload: List[Tuple[int, int, Optional[int]]] = field(default_factory=list)
    updates: List[Update] = field(default_factory=list)
    n: int = 0

    @property
    def weighted(self) -> bool:
        return any(w is not None for _, _, w in self.preload) or any(
            up.weight is not None for up in self.updates
        )

    def peak_edges(self) -> int:
        """Largest edge count the stream reaches, counting only effective inserts and deletes."""
        present: Set[Tuple[int, int]] = {canonical_edge(u, v) for u, v, _ in self.preload}
        peak = len(present)
        for up in self.updates:
            edge = canonical_edge(up.u, up.v)
            if up.op == Op.INSERT:
                present.add(edge)
                peak = max(peak, len(present))
            elif up.op == Op.DELETE:
                present.discard(edge)
        return peak


def _vertex(token: str, line_no: int) -> int:
    try:
        value = int(token)
    except ValueError:
        raise StreamParseError(line_no, f"vertex ID {token!r} is not an integer") from None
    if value < 0:
        raise StreamParseError(line_no, f"vertex ID {value} is negative")
    return value


def parse_stream(lines: Iterable[str], scale: int = DEFAULT_WEIGHT_SCALE) -> Stream:
    """
    Parse stream lines.

    Raises:
        StreamParseError: On the first malformed line, naming its number.

    Example:
        >>> s = parse_stream(["preload", "+ 0 1", "updates", "- 0 1", "? 1 2"])
        >>> s.preload, [u.op.symbol for u in s.updates], s.n
        ([(0, 1, None)], ['-', '?'], 3)
    """
    stream = Stream()
    declared = 0
    largest = -1
    section = "start"
    seen_preload: Set[Tuple[int, int]] = set()

    for line_no, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        head = tokens[0]

        if head == "vertices":
            if len(tokens) != 2 or section != "start":
                raise StreamParseError(line_no, "'vertices <n>' must come first and take one value")
            declared = _vertex(tokens[1], line_no)
            continue
        if head == "preload":
            if section != "start" or len(tokens) != 1:
                raise StreamParseError(line_no, "unexpected 'preload'")
            section = "preload"
            continue
        if head == "updates":
            if section == "updates" or len(tokens) != 1:
                raise StreamParseError(line_no, "unexpected 'updates'")
            section = "updates"
            continue

        op = _OPS.get(head)
        if op is None:
            raise StreamParseError(line_no, f"unknown operation {head!r}")
        expected = (3, 4) if op == Op.INSERT else (3,)
        if len(tokens) not in expected:
            raise StreamParseError(line_no, f"'{head}' takes {' or '.join(str(k - 1) for k in expected)} values")
        u, v = _vertex(tokens[1], line_no), _vertex(tokens[2], line_no)
        weight = None
        if len(tokens) == 4:
            try:
                weight = to_fixed(tokens[3], scale)
            except ValueError:
                raise StreamParseError(line_no, f"weight {tokens[3]!r} is not a number") from None
        if declared and max(u, v) >= declared:
            raise StreamParseError(line_no, f"vertex {max(u, v)} is outside the declared {declared} vertices")
        largest = max(largest, u, v)

        if section == "preload":
            if op != Op.INSERT:
                raise StreamParseError(line_no, "the preload section holds insertions only")
            if u == v:
                raise StreamParseError(line_no, f"self loop on vertex {u} in preload")
            edge = canonical_edge(u, v)
            if edge in seen_preload:
                raise StreamParseError(line_no, f"duplicate preload edge {edge}")
            seen_preload.add(edge)
            stream.preload.append((u, v, weight))
        else:
            section = "updates"
            stream.updates.append(Update(op, u, v, weight, line_no))

    stream.n = max(declared, largest + 1)
    return stream


def read_stream(path: Path, scale: int = DEFAULT_WEIGHT_SCALE) -> Stream:
    with open(path, encoding="utf-8") as handle:
        return parse_stream(handle, scale)


def format_stream(stream: Stream, scale: int = DEFAULT_WEIGHT_SCALE) -> str:
    """Render a stream in the grammar parse_stream reads."""

    def edge_line(symbol: str, u: int, v: int, weight: Optional[int]) -> str:
        if weight is None:
            return f"{symbol} {u} {v}"
        return f"{symbol} {u} {v} {from_fixed(weight, scale)}"

    lines = [f"vertices {stream.n}"]
    if stream.preload:
        lines.append("preload")
        lines.extend(edge_line("+", u, v, w) for u, v, w in stream.preload)
        lines.append("updates")
    lines.extend(edge_line(up.op.symbol, up.u, up.v, up.weight) for up in stream.updates)
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Generation
# ---------------------------------------------------------------------------

class _EdgePool:
    """Present edges with O(1) uniform sampling and removal."""

    def __init__(self) -> None:
        self.items: List[Tuple[int, int]] = []
        self.index: Dict[Tuple[int, int], int] = {}
        self.born: Dict[Tuple[int, int], int] = {}
        self._clock = 0

    def __len__(self) -> int:
        return len(self.items)

    def __contains__(self, edge: object) -> bool:
        return edge in self.index

    def add(self, edge: Tuple[int, int]) -> None:
        self.index[edge] = len(self.items)
        self.items.append(edge)
        self.born[edge] = self._clock
        self._clock += 1

    def remove(self, edge: Tuple[int, int]) -> None:
        pos = self.index.pop(edge)
        del self.born[edge]
        last = self.items.pop()
        if pos < len(self.items):
            self.items[pos] = last
            self.index[last] = pos

    def forest(self) -> List[Tuple[int, int]]:
        """Spanning forest that prefers older edges, sorted."""
        graph = nx.Graph()
        graph.add_edges_from((u, v, {"born": self.born[(u, v)]}) for u, v in self.items)
        chosen = nx.minimum_spanning_edges(graph, algorithm="kruskal", weight="born", data=False)
        return sorted(canonical_edge(u, v) for u, v in chosen)


def generate_stream(
    n: int,
    updates: int,
    insert_prob: float,
    *,
    seed: int = 0,
    weighted: bool = False,
    queries: float = 0.0,
    preload: int = 0,
    max_weight: int = 100,
    scale: int = DEFAULT_WEIGHT_SCALE,
    tree_bias: float = 0.0,
) -> Stream:
    """
    A seeded random stream over vertices 0..n-1.

    Each step is a query with probability ``queries``; otherwise an insertion
    of a uniformly random absent edge with probability ``insert_prob``, else
    a deletion of a uniformly random present edge. A deletion on an empty
    graph (or an insertion into a complete one) is skipped and logged, so
    the stream may hold fewer than ``updates`` lines. Weights are uniform
    fixed-point words in (0, max_weight].

    With ``tree_bias`` a deletion instead removes, with that probability, a
    random edge of the spanning forest that prefers the oldest edges, so
    deletions keep cutting trees.

    Raises:
        ConfigError: If n < 2 or a probability lies outside [0, 1].

    Example:
        >>> s = generate_stream(4, 3, 1.0, seed=1)
        >>> [u.op.symbol for u in s.updates], len({(u.u, u.v) for u in s.updates})
        (['+', '+', '+'], 3)
    """
    if n < 2:
        raise ConfigError(f"a stream needs at least 2 vertices, got {n}")
    if not 0 <= insert_prob <= 1 or not 0 <= queries <= 1 or not 0 <= tree_bias <= 1:
        raise ConfigError("insert, query and tree-bias probabilities must lie in [0, 1]")
    if updates < 0 or preload < 0:
        raise ConfigError("update and preload counts must be non-negative")
    full = n * (n - 1) // 2
    if preload > full:
        raise ConfigError(f"{preload} preload edges do not fit on {n} vertices")

    rng = np.random.default_rng(seed)
    pool = _EdgePool()

    def weight() -> Optional[int]:
        return int(rng.integers(1, max_weight * scale + 1)) if weighted else None

    def fresh_edge() -> Optional[Tuple[int, int]]:
        if len(pool) >= full:
            return None
        while True:
            u, v = (int(x) for x in rng.integers(0, n, size=2))
            edge = canonical_edge(u, v)
            if u != v and edge not in pool:
                return edge

    stream = Stream(n=n)
    for _ in range(preload):
        edge = fresh_edge()
        pool.add(edge)
        stream.preload.append(edge + (weight(),))

    skipped = 0
    for _ in range(updates):
        if queries and rng.random() < queries:
            u, v = (int(x) for x in rng.choice(n, size=2, replace=False))
            stream.updates.append(Update(Op.QUERY, u, v))
        elif rng.random() < insert_prob:
            edge = fresh_edge()
            if edge is None:
                skipped += 1
                continue
            pool.add(edge)
            stream.updates.append(Update(Op.INSERT, edge[0], edge[1], weight()))
        else:
            if not pool:
                skipped += 1
                continue
            if tree_bias and rng.random() < tree_bias:
                forest = pool.forest()
                edge = forest[int(rng.integers(0, len(forest)))]
            else:
                edge = pool.items[int(rng.integers(0, len(pool)))]
            pool.remove(edge)
            stream.updates.append(Update(Op.DELETE, edge[0], edge[1]))

    if skipped:
        logger.warning("generator skipped %d operations that the graph did not allow", skipped)
    return stream
