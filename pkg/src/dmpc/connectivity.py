"""
dmpc/connectivity.py - Dynamic Connected Components over Euler Tours

Every component keeps a spanning tree and an Euler tour of it. A tour of a
tree with k vertices has 4(k-1) entries: each traversal of a tree edge
writes two entries (tail, head), and every tree edge is traversed once in
each direction. The tour is never stored in one place. Each stored copy of
a tree edge holds its owner's two entries for that edge (``lo``, ``hi``),
so a vertex's index set is spread over its own blocks.

Every vertex also has an anchor: one odd entry at which the tour leaves the
vertex (0 for a singleton). Anchors decide subtree membership, since w lies
below y exactly when anchor(w) falls inside [f(y), l(y)]. Copies cache the
component and anchor of their far endpoint. The per-vertex header stored
next to every block, the copies and the statistics records are all kept
current by small broadcasts that each machine applies to its own data:

    ("R", c, pivot, L)               reroot component c
    ("L", cx, cy, p, Ly)             splice cy's tour after entry p of cx
    ("C", c, fy, ly, c_in, c_out)    cut the subtree spanning [fy, ly]
    ("A", v, comp, anchor, ...)      set the component and anchor of vertices

Component labels are vertex IDs. A component's label always belongs to it,
and its size is kept on the label's statistics record.
"""

from __future__ import annotations

import logging
import math
from collections import Counter, defaultdict
from functools import partial
from typing import Any, Callable, Dict, Final, Iterable, List, Mapping, NamedTuple, Optional, Sequence, Set, Tuple

import numpy as np

from .errors import (
    DifferentComponents,
    InvariantViolation,
    MachinePoolExhausted,
    SelfLoop,
    SingletonComponent,
    UnknownEdge,
)
from .models import COORDINATOR, AdjEntry, MessageEnvelope, Op, VertexRecord
from .partition import ADJ, EMPTY_RECORD, HDR, REC, Placement, block, put_block
from .runtime import Machine, Payload, Runtime, Store
from .utils import canonical_edge

logger = logging.getLogger(__name__)

# Words of one stored copy: neighbour, seq, lo, hi, far comp, far anchor.
ENTRY_WORDS: Final[int] = 6
HEADER_WORDS: Final[int] = 2
RECORD_WORDS: Final[int] = 6
BROADCAST_WORDS: Final[int] = 8

# Per-update round bound checked by the cost tests.
R_CC: Final[int] = 64

# Contraction iterations are checked against PRE_ITERATION_FACTOR·log2(n).
PRE_ITERATION_FACTOR: Final[int] = 4

# Vertex range of a statistics machine, kept in its own store.
OWNS: Final = ("owns",)

SIZING: Final[Dict[str, int]] = {
    "edge_words": ENTRY_WORDS,
    "record_words": RECORD_WORDS,
    "header_words": HEADER_WORDS,
    "broadcast_words": BROADCAST_WORDS,
}


class Span(NamedTuple):
    """First and last tour entry of a vertex plus its smallest odd entry."""

    first: int = 0
    last: int = 0
    odd: int = 0


# ---------------------------------------------------------------------------
# Tour arithmetic
# ---------------------------------------------------------------------------

def remap(op: Payload, comp: int, idx: int) -> Tuple[int, int]:
    """
    Apply one tour operation to a ``(component, entry)`` pair.

    Entry 0 (a singleton's anchor, or no entry) is never shifted, only
    relabelled.

    Example:
        >>> remap(("R", 7, 3, 4), 7, 1)
        (7, 3)
        >>> remap(("L", 1, 2, 4, 4), 2, 1)
        (1, 7)
    """
    tag = op[0]
    if tag == "R":
        _, c, pivot, length = op
        if comp == c and idx > 0:
            idx = (idx + length - pivot) % length + 1
    elif tag == "L":
        _, cx, cy, p, length_y = op
        if comp == cy:
            comp, idx = cx, (idx + p + 2 if idx > 0 else 0)
        elif comp == cx and idx > p:
            idx += length_y + 4
    elif tag == "C":
        _, c, fy, ly, c_in, c_out = op
        if comp == c:
            if fy <= idx <= ly:
                comp, idx = c_in, idx - fy
            else:
                comp = c_out
                if idx > ly:
                    idx -= ly - fy + 3
    return comp, idx


def comp_of(vertex: int, record: VertexRecord) -> int:
    return vertex if record.comp is None else record.comp


def anchor_of(record: VertexRecord) -> int:
    return record.anchor or 0


def packed(vertex: int, comp: int, anchor: int) -> Dict[str, Optional[int]]:
    """Record fields for a component and anchor; defaults cost nothing."""
    return {"comp": None if comp == vertex else comp, "anchor": anchor or None}


def _fixups(op: Payload) -> Dict[int, Tuple[int, int]]:
    flat = op[1:]
    return {flat[i]: (flat[i + 1], flat[i + 2]) for i in range(0, len(flat), 3)}


def _apply_tour_op(machine: Machine, op: Payload) -> None:
    """Machine side of every tour broadcast: headers, copies and records."""
    store = machine.store
    if op[0] == "A":
        _apply_fixups(store, _fixups(op))
        return
    owners = sorted(key[1] for key in store if key[0] == ADJ)
    for owner in owners:
        comp = store[(HDR, owner)][0]
        entries = []
        for entry in block(store, owner):
            if entry.lo:
                _, lo = remap(op, comp, entry.lo)
                _, hi = remap(op, comp, entry.hi)
                entry = entry._replace(lo=min(lo, hi), hi=max(lo, hi))
            far_comp, far_anchor = remap(op, entry.far_comp, entry.far_anchor)
            entries.append(entry._replace(far_comp=far_comp, far_anchor=far_anchor))
        put_block(store, owner, entries)
    for key in [k for k in store if k[0] == HDR]:
        store[key] = remap(op, *store[key])
    for key in [k for k in store if k[0] == REC]:
        vertex, record = key[1], store[key]
        comp, anchor = remap(op, comp_of(vertex, record), anchor_of(record))
        store[key] = record._replace(**packed(vertex, comp, anchor))


def _apply_fixups(store: Store, fixes: Mapping[int, Tuple[int, int]]) -> None:
    for key in [k for k in store if k[0] == ADJ]:
        entries = block(store, key[1])
        if any(entry.nbr in fixes for entry in entries):
            put_block(store, key[1], [
                entry._replace(far_comp=fixes[entry.nbr][0], far_anchor=fixes[entry.nbr][1])
                if entry.nbr in fixes else entry
                for entry in entries
            ])
    owned = _owned(store)
    for vertex, (comp, anchor) in fixes.items():
        if (HDR, vertex) in store:
            store[(HDR, vertex)] = (comp, anchor)
        if vertex in owned:
            record = store.get((REC, vertex), EMPTY_RECORD)
            _write_record(store, vertex, record._replace(**packed(vertex, comp, anchor)))


def _owned(store: Store) -> range:
    """Vertices whose records this store keeps; empty unless a statistics machine."""
    owns = store.get(OWNS)
    return range(*owns) if owns is not None else range(0)


def _write_record(store: Store, vertex: int, record: VertexRecord) -> None:
    if record == EMPTY_RECORD:
        store.pop((REC, vertex), None)
    else:
        store[(REC, vertex)] = record


# ---------------------------------------------------------------------------
# Visit handlers
# ---------------------------------------------------------------------------

def _span(machine: Machine, inner: Payload) -> Payload:
    out = []
    for vertex in inner:
        entries = [i for e in block(machine.store, vertex) if e.lo for i in (e.lo, e.hi)]
        odd = [i for i in entries if i % 2]
        out.append((vertex, min(entries, default=0), max(entries, default=0), min(odd, default=0)))
    return tuple(out)


def _take(machine: Machine, inner: Payload) -> Payload:
    """Remove (or turn into a non-tree copy) each requested copy; return what was found."""
    pairs, remove = inner
    store = machine.store
    found = []
    for owner, nbr in pairs:
        entries = list(block(store, owner))
        for i, entry in enumerate(entries):
            if entry.nbr == nbr:
                found.append((owner, entry))
                if remove:
                    del entries[i]
                else:
                    entries[i] = entry._replace(lo=0, hi=0)
                put_block(store, owner, entries)
                break
    return tuple(found)


def _mark_tree(machine: Machine, inner: Payload) -> Payload:
    store = machine.store
    for owner, nbr, lo, hi in inner:
        entries = block(store, owner)
        if any(entry.nbr == nbr for entry in entries):
            put_block(store, owner, [
                entry._replace(lo=lo, hi=hi) if entry.nbr == nbr else entry for entry in entries
            ])
    return ()


def _straddling(sides: Tuple[int, int], weighted: bool, machine: Machine) -> Optional[Payload]:
    """Best non-tree copy here joining the two sides of a cut."""
    store = machine.store
    best = None
    for key in store:
        if key[0] != ADJ:
            continue
        owner = key[1]
        comp = store[(HDR, owner)][0]
        if comp not in sides:
            continue
        for entry in store[key]:
            if entry.lo or entry.far_comp not in sides or entry.far_comp == comp:
                continue
            u, v = canonical_edge(owner, entry.nbr)
            candidate = (entry.weight, u, v) if weighted else (u, v)
            if best is None or candidate < best:
                best = candidate
    return best


# ---------------------------------------------------------------------------
# Coordinator side
# ---------------------------------------------------------------------------

class DynamicConnectivity:
    """
    Connected components under edge insertions and deletions.

    Example:
        >>> from dmpc.models import SimConfig
        >>> rt = Runtime(SimConfig.for_graph(3, 2, **SIZING))
        >>> cc = DynamicConnectivity(rt)
        >>> cc.preprocess([])
        0
        >>> cc.insert(0, 1)
        True
        >>> cc.connected(0, 1), cc.connected(0, 2)
        (True, False)
    """

    entry_words = ENTRY_WORDS
    weighted = False

    def __init__(self, runtime: Runtime):
        self.rt = runtime
        self.cfg = runtime.config
        self.placement = Placement(
            runtime, entry_words=self.entry_words, header_words=HEADER_WORDS, lazy_deletes=False
        )
        self.preprocess_iterations = 0
        self.last_replacement: Optional[Tuple[int, int]] = None
        self._iteration = 0
        # Statistics machines know their vertex range.
        for stats in range(1, self.cfg.first_pool_machine):
            lo = (stats - 1) * self.cfg.stats_range
            hi = self.cfg.n if stats == self.cfg.stats_count else lo + self.cfg.stats_range
            self.rt.store(stats)[OWNS] = (lo, hi)

    # -- records -----------------------------------------------------------

    def _comp(self, v: int) -> int:
        return comp_of(v, self.placement.record(v))

    def _anchor(self, v: int) -> int:
        return anchor_of(self.placement.record(v))

    def _size(self, label: int) -> int:
        return self.placement.record(label).size or 1

    def _set_place(self, v: int, comp: int, anchor: int) -> None:
        self.placement.set_fields(v, **packed(v, comp, anchor))

    # -- queries -----------------------------------------------------------

    def connected(self, u: int, v: int) -> bool:
        """
        Whether u and v share a component (2 rounds, ≤ 3 active machines).

        Raises:
            UnknownVertex
        """
        P = self.placement
        P.begin_update(Op.QUERY, u, v)
        P.load([u, v])
        return self._comp(u) == self._comp(v)

    def is_ancestor(self, x: int, y: int) -> bool:
        """
        Whether x is a proper ancestor of y in their tree.

        Raises:
            DifferentComponents, UnknownVertex
        """
        P = self.placement
        P.begin_update(Op.QUERY, x, y)
        P.load([x, y])
        if self._comp(x) != self._comp(y):
            raise DifferentComponents(f"{x} and {y} are in different components")
        if x == y:
            return False
        spans = self._spans([x, y])
        return spans[x].first < spans[y].first and spans[x].last > spans[y].last

    def reroot(self, y: int) -> None:
        """
        Make y the root of its tour.

        Raises:
            SingletonComponent, UnknownVertex
        """
        P = self.placement
        P.begin_update(Op.QUERY, y, y)
        P.load([y])
        label = self._comp(y)
        P.load([label])
        if self._size(label) < 2:
            raise SingletonComponent(f"vertex {y} is alone in its component")
        self._reroot(y, label)
        P.flush_records()

    # -- updates -----------------------------------------------------------

    def insert(self, x: int, y: int, weight: Optional[int] = None) -> bool:
        """
        Insert edge (x, y).

        Returns:
            True when the edge joined two components (a tree edge).

        Raises:
            SelfLoop, UnknownVertex, DuplicateEdge
        """
        if x == y:
            raise SelfLoop(x)
        P = self.placement
        seq = P.begin_update(Op.INSERT, x, y)
        records = P.load([x, y])
        lookup = (x, y) if (records[x].degree, x) <= (records[y].degree, y) else (y, x)
        P.refresh_vertices([x, y], lookup=lookup, expect=False)
        if self._comp(x) != self._comp(y):
            indexes = self._link(x, y)
        else:
            indexes = self._close_cycle(x, y, weight)
        self._store_edge(seq, x, y, indexes, weight)
        P.end_update(Op.INSERT, x, y)
        return bool(indexes[x][0])

    def _close_cycle(self, x: int, y: int, weight: Optional[int]) -> Dict[int, Tuple[int, int]]:
        """An edge inside one component is stored as a non-tree edge."""
        return {x: (0, 0), y: (0, 0)}

    def delete(self, x: int, y: int) -> Optional[Tuple[int, int]]:
        """
        Delete edge (x, y); a tree edge is replaced when possible.

        Returns:
            The replacement edge promoted to the tree, if any.

        Raises:
            UnknownVertex, UnknownEdge
        """
        P = self.placement
        P.begin_update(Op.DELETE, x, y)
        P.load([x, y])
        copies = self._detach(x, y, remove=True)
        if x not in copies or y not in copies:
            raise UnknownEdge(x, y)
        for v in (x, y):
            P.set_record(v, P.record(v)._replace(degree=P.record(v).degree - 1))
        P.refresh_vertices([x, y])
        self.last_replacement = None
        if copies[x].is_tree:
            sides = self._cut(x, y, copies)
            self.last_replacement = self._replace(sides)
        P.end_update(Op.DELETE, x, y)
        return self.last_replacement

    def _store_edge(
        self,
        seq: int,
        x: int,
        y: int,
        indexes: Mapping[int, Tuple[int, int]],
        weight: Optional[int],
    ) -> None:
        far = {v: (self._comp(v), self._anchor(v)) for v in (x, y)}
        entries = {
            x: AdjEntry(y, seq, None, weight, *indexes[x], *far[y]),
            y: AdjEntry(x, seq, None, weight, *indexes[y], *far[x]),
        }
        self.placement.add_edge_storage(entries, headers=far)

    # -- tour operations ---------------------------------------------------

    def _tour_op(self, op: Payload) -> None:
        """Broadcast one tour operation and apply it to the loaded records."""
        self.rt.broadcast(COORDINATOR, op, _apply_tour_op, f"cc:{op[0]}")
        P = self.placement
        if op[0] == "A":
            for v, (comp, anchor) in _fixups(op).items():
                if v in P.work:
                    self._set_place(v, comp, anchor)
            return
        for v, record in list(P.work.items()):
            place = remap(op, comp_of(v, record), anchor_of(record))
            if place != (comp_of(v, record), anchor_of(record)):
                self._set_place(v, *place)

    def _spans(self, vertices: Iterable[int]) -> Dict[int, Span]:
        """First, last and smallest odd entry of loaded vertices (2 rounds)."""
        P = self.placement
        calls: Dict[int, List[int]] = defaultdict(list)
        wanted = sorted(set(vertices))
        for v in wanted:
            for mid in P.machines_of(v):
                calls[mid].append(v)
        spans = {v: Span() for v in wanted}
        answers = P.visit({mid: tuple(vs) for mid, vs in calls.items()}, _span, "cc:span")
        for items in answers.values():
            for v, first, last, odd in items:
                if not first:
                    continue
                old = spans[v]
                spans[v] = Span(
                    min(first, old.first) if old.first else first,
                    max(last, old.last),
                    min(odd, old.odd) if old.odd else odd,
                )
        return spans

    def _reroot(self, y: int, label: int) -> None:
        span = self._spans([y])[y]
        if span.first == 1:
            return
        # A non-root's last entry is the odd one where it leaves for its parent.
        self._tour_op(("R", label, span.last, 4 * (self._size(label) - 1)))

    def _link(self, x: int, y: int) -> Dict[int, Tuple[int, int]]:
        """
        Join the tours of x and y through the new tree edge (x, y).

        T_y is rerooted at y and spliced after an even entry p of x: f(x)
        for a non-root, l(x) for the root. Returns the entries each
        endpoint stores for the edge.
        """
        P = self.placement
        cx, cy = self._comp(x), self._comp(y)
        P.load([cx, cy])
        sx, sy = self._size(cx), self._size(cy)
        length_y = 4 * (sy - 1)
        if sy > 1:
            self._reroot(y, cy)
        p = 0
        if sx > 1:
            span = self._spans([x])[x]
            p = span.first if span.first % 2 == 0 else span.last
        self._tour_op(("L", cx, cy, p, length_y))

        fixes = []
        if sx == 1:
            fixes.append((x, cx, p + 1))
        if sy == 1:
            fixes.append((y, cx, p + length_y + 3))
        stored = [(v, comp, anchor) for v, comp, anchor in fixes if P.record(v).degree > 0]
        if stored:
            self._tour_op(("A",) + tuple(word for fix in stored for word in fix))
        for v, comp, anchor in fixes:
            self._set_place(v, comp, anchor)

        P.set_fields(cx, size=sx + sy)
        if cy != cx:
            P.set_fields(cy, size=None)
        logger.debug("linked %d-%d at entry %d", x, y, p)
        return {x: (p + 1, p + length_y + 4), y: (p + 2, p + length_y + 3)}

    def _detach(self, x: int, y: int, *, remove: bool) -> Dict[int, AdjEntry]:
        """Take both copies of (x, y) off their machines, or turn them into non-tree copies."""
        P = self.placement
        calls: Dict[int, List[Tuple[int, int]]] = defaultdict(list)
        for owner, nbr in ((x, y), (y, x)):
            for mid in P.machines_of(owner):
                calls[mid].append((owner, nbr))
        found: Dict[int, AdjEntry] = {}
        answers = P.visit({mid: (tuple(pairs), remove) for mid, pairs in calls.items()}, _take, "cc:take")
        for items in answers.values():
            for owner, entry in items:
                found[owner] = entry
        return found

    def _cut(self, x: int, y: int, copies: Mapping[int, AdjEntry]) -> Tuple[int, int]:
        """
        Split a tour at the tree edge (x, y), whose copies are already gone.

        Returns:
            The labels of the child side and of the parent side.
        """
        P = self.placement
        parent, child = (x, y) if copies[x].lo < copies[y].lo else (y, x)
        fy, ly = copies[child].lo, copies[child].hi
        c = self._comp(x)
        P.load([c])
        size = self._size(c)
        size_child = (ly - fy - 1) // 4 + 1
        size_parent = size - size_child
        if fy <= self._anchor(c) <= ly:
            c_in, c_out = c, parent
        else:
            c_in, c_out = child, c
        anchor_parent, anchor_child = self._anchor(parent), self._anchor(child)
        self._tour_op(("C", c, fy, ly, c_in, c_out))

        fixes = []
        if size_child == 1:
            fixes.append((child, child, 0))
        elif anchor_child == ly:
            fixes.append((child, c_in, 1))
        if size_parent == 1:
            fixes.append((parent, parent, 0))
        elif anchor_parent == fy - 1:
            fixes.append((parent, c_out, self._spans([parent])[parent].odd))
        if fixes:
            self._tour_op(("A",) + tuple(word for fix in fixes for word in fix))

        P.load([c_in, c_out])
        P.set_fields(c_in, size=size_child if size_child > 1 else None)
        P.set_fields(c_out, size=size_parent if size_parent > 1 else None)
        logger.debug("cut %d-%d into components %d and %d", parent, child, c_in, c_out)
        return c_in, c_out

    def _replace(self, sides: Tuple[int, int]) -> Optional[Tuple[int, int]]:
        """Promote the best non-tree edge across the cut (1 collection round)."""
        found = self.rt.collect(
            COORDINATOR, partial(_straddling, tuple(sides), self.weighted), "cc:replace"
        )
        if not found:
            return None
        best = min(found.values())
        u, v = best[-2], best[-1]
        self._promote(u, v)
        return (u, v)

    def _promote(self, u: int, v: int) -> None:
        """Turn the stored non-tree edge (u, v) into a tree edge."""
        P = self.placement
        P.load([u, v])
        indexes = self._link(u, v)
        calls: Dict[int, List[Payload]] = defaultdict(list)
        for owner, nbr in ((u, v), (v, u)):
            for mid in P.machines_of(owner):
                calls[mid].append((owner, nbr) + indexes[owner])
        P.visit({mid: tuple(items) for mid, items in calls.items()}, _mark_tree, "cc:mark")
        logger.debug("promoted replacement edge (%d, %d)", u, v)

    # -- preprocessing -----------------------------------------------------

    def preprocess(self, edges: Iterable[Tuple[int, ...]]) -> int:
        """
        Load the initial graph and build a spanning forest with its tours.

        Contraction: every iteration each component flips a seeded coin;
        a tail component with an edge to a head component hooks to the
        smallest adjacent head, and all tails hooking to one head merge in
        one shot. Iterations stop when no edge joins two components.

        Returns:
            Contraction iterations run.
        """
        self._bulk_load(edges)
        iterations = self._contract()
        self.preprocess_iterations = iterations
        return iterations

    def _bulk_load(self, edges: Iterable[Tuple[int, ...]]) -> None:
        adjacency: Dict[int, List[AdjEntry]] = defaultdict(list)
        seen: Set[Tuple[int, int]] = set()
        for edge in edges:
            u, v = edge[0], edge[1]
            weight = edge[2] if len(edge) > 2 else None
            if u == v:
                raise SelfLoop(u)
            pair = canonical_edge(u, v)
            if pair in seen:
                continue
            seen.add(pair)
            adjacency[u].append(AdjEntry(v, 0, None, weight, 0, 0, v, 0))
            adjacency[v].append(AdjEntry(u, 0, None, weight, 0, 0, u, 0))
        self.placement.bulk_load(adjacency, {x: (x, 0) for x in adjacency})

    def _contract(self, accept: Optional[Callable[[int], bool]] = None) -> int:
        """Contraction iterations over the edges whose weight passes ``accept``."""
        limit = 8 * math.ceil(math.log2(self.cfg.n + 1)) + 64
        for run in range(limit + 1):
            self._iteration += 1
            if not self._contraction_iteration(self._iteration, accept):
                logger.info("contraction finished after %d iterations", run)
                return run
        raise InvariantViolation(f"contraction did not finish within {limit} iterations")

    def _contraction_iteration(self, iteration: int, accept: Optional[Callable[[int], bool]]) -> bool:
        cfg = self.cfg
        heads = np.random.default_rng([cfg.rng_seed, iteration]).integers(0, 2, size=cfg.n).astype(bool)
        edge_machines = self.placement.edge_machines()

        # Hooks: each edge machine proposes, per tail, its best head neighbour.
        envelopes = []
        for mid in edge_machines:
            store = self.rt.store(mid)
            best: Dict[int, Tuple[int, ...]] = {}
            active = 0
            for key in sorted(k for k in store if k[0] == ADJ):
                owner = key[1]
                comp, anchor = store[(HDR, owner)]
                for entry in store[key]:
                    if entry.lo or entry.far_comp == comp:
                        continue
                    if accept is not None and not accept(entry.weight):
                        continue
                    active += 1
                    if heads[comp] or not heads[entry.far_comp]:
                        continue
                    hook = (entry.far_comp, owner, entry.nbr, anchor, entry.far_anchor)
                    if comp not in best or hook < best[comp]:
                        best[comp] = hook
            envelopes.append(MessageEnvelope(mid, COORDINATOR, "pre:active", (active,)))
            groups: Dict[int, List[Payload]] = defaultdict(list)
            for tail, hook in sorted(best.items()):
                groups[cfg.stats_machine_of(tail)].append((tail,) + hook)
            envelopes.extend(
                MessageEnvelope(mid, dst, "pre:hook", tuple(items)) for dst, items in sorted(groups.items())
            )
        delivered = self.rt.exchange_bulk(envelopes)
        active = sum(env.payload[0] for env in delivered.get(COORDINATOR, ()) if env.kind == "pre:active")
        if active == 0:
            return False

        # Statistics machines settle each tail's hook into an attachment key.
        attachments: Dict[int, List[Payload]] = {}
        for stats in range(1, cfg.first_pool_machine):
            hooks: Dict[int, Tuple[int, ...]] = {}
            for env in delivered.get(stats, ()):
                for tail, *hook in env.payload:
                    if tail not in hooks or tuple(hook) < hooks[tail]:
                        hooks[tail] = tuple(hook)
            store = self.rt.store(stats)
            keys = []
            for tail, (head, y, x, anchor_y, anchor_x) in sorted(hooks.items()):
                record = store.get((REC, tail), EMPTY_RECORD)
                length = 4 * ((record.size or 1) - 1)
                keys.append((head, max(anchor_x - 1, 0), y, tail, length, anchor_y, x, int(anchor_x == 0)))
                _write_record(store, tail, record._replace(size=None))
            attachments[stats] = keys
        if not any(attachments.values()):
            return True

        plans, sizes = self._attach(attachments)
        self._join(plans)
        envelopes = []
        for src, adds in sizes.items():
            groups = defaultdict(list)
            for head, add in adds:
                groups[cfg.stats_machine_of(head)].append((head, add))
            envelopes.extend(
                MessageEnvelope(src, dst, "pre:size", tuple(items)) for dst, items in sorted(groups.items())
            )
        for dst, envs in self.rt.exchange_bulk(envelopes).items():
            store = self.rt.store(dst)
            for env in envs:
                for head, add in env.payload:
                    record = store.get((REC, head), EMPTY_RECORD)
                    store[(REC, head)] = record._replace(size=(record.size or 1) + add)
        logger.debug("contraction iteration %d merged %d tails", iteration, sum(map(len, attachments.values())))
        return True

    def _attach(
        self, attachments: Mapping[int, List[Payload]]
    ) -> Tuple[Dict[int, List[Payload]], Dict[int, List[Tuple[int, int]]]]:
        """
        Order the attachments of every head and turn them into plans.

        Attachments sorted by (head, splice entry, tail vertex) sit next to
        each other in the merged tour; a running sum over the sorted keys
        gives every tail its offset.
        """
        placed = self._sort_on_scratch(attachments, "att")

        def summarize(block: Sequence[Payload]) -> Payload:
            last = block[-1][0]
            return (block[0][0], last, sum(key[4] + 4 for key in block if key[0] == last))

        def combine(carry: Optional[Payload], summary: Payload) -> Payload:
            first, last, total = summary
            if carry is not None and carry[0] == last and first == last:
                return (last, carry[1] + total)
            return (last, total)

        carry_in = self._carry(placed, summarize, combine, "att")
        plans: Dict[int, List[Payload]] = {}
        sizes: Dict[int, List[Tuple[int, int]]] = {}
        for target, keys in placed.items():
            before: Dict[int, int] = {}
            if carry_in.get(target) is not None:
                before[carry_in[target][0]] = carry_in[target][1]
            out: List[Payload] = []
            added: Counter = Counter()
            marked: Set[int] = set()
            for head, p, y, tail, length, anchor_y, x, single in keys:
                base = p + before.get(head, 0)
                before[head] = before.get(head, 0) + length + 4
                out.append((tail, 0, anchor_y, length, base, head, x, y))
                out.append((head, 2 * p + 2, length + 4))
                if head not in marked:
                    marked.add(head)
                    out.append((head, 0, -1, single))
                added[head] += length // 4 + 1
            plans[target] = out
            sizes[target] = sorted(added.items())
            self.rt.store(target).pop(("pre", "att"), None)
        return plans, sizes

    def _join(self, plans: Mapping[int, List[Payload]]) -> None:
        """Send every machine the new place of each (component, entry) it holds."""
        keys: Dict[int, List[Payload]] = defaultdict(list)
        for mid in range(self.cfg.mu):
            for comp, idx in sorted(_tour_items(self.rt.store(mid))):
                keys[mid].append((comp, 2 * idx + 1, mid))
        for target, out in plans.items():
            keys[target].extend(out)
        placed = self._sort_on_scratch(keys, "join")

        def summarize(block: Sequence[Payload]) -> Payload:
            last = block[-1][0]
            plan, shift = None, 0
            for key in block:
                if key[0] != last:
                    continue
                if key[1] == 0:
                    plan = key
                elif key[1] % 2 == 0:
                    shift += key[2]
            return (block[0][0], last, plan, shift)

        def combine(carry: Optional[Payload], summary: Payload) -> Payload:
            first, last, plan, shift = summary
            if carry is not None and carry[0] == last and first == last:
                return (last, plan or carry[1], carry[2] + shift)
            return (last, plan, shift)

        carry_in = self._carry(placed, summarize, combine, "join")
        envelopes = []
        for target, block in placed.items():
            state: Dict[int, List[Any]] = {}
            carry = carry_in.get(target)
            if carry is not None:
                state[carry[0]] = [carry[1], carry[2]]
            results: Dict[int, List[Payload]] = defaultdict(list)
            for key in block:
                comp, second = key[0], key[1]
                current = state.setdefault(comp, [None, 0])
                if second == 0:
                    current[0] = key
                elif second % 2 == 0:
                    current[1] += key[2]
                else:
                    result = _joined(comp, (second - 1) // 2, current[0], current[1])
                    if result is not None:
                        results[key[2]].append(result)
            envelopes.extend(
                MessageEnvelope(target, mid, "pre:place", tuple(items)) for mid, items in sorted(results.items())
            )
            self.rt.store(target).pop(("pre", "join"), None)
        for mid, envs in self.rt.exchange_bulk(envelopes).items():
            _apply_places(self.rt.store(mid), [r for env in envs for r in env.payload])

    def _sort_on_scratch(self, keys: Mapping[int, List[Payload]], tag: str) -> Dict[int, Tuple[Payload, ...]]:
        """Spread keys over the unused machines and sort them there."""
        taken = self.placement.directory()
        scratch = [m for m in range(self.cfg.first_pool_machine, self.cfg.mu) if m not in taken]
        if not scratch:
            raise MachinePoolExhausted("no free machine left for preprocessing sorts")
        envelopes = []
        for mid, items in sorted(keys.items()):
            parts: Dict[int, List[Payload]] = defaultdict(list)
            for j, item in enumerate(items):
                parts[scratch[(mid + j) % len(scratch)]].append(item)
            envelopes.extend(
                MessageEnvelope(mid, dst, f"pre:{tag}", tuple(part)) for dst, part in sorted(parts.items())
            )
        key = ("pre", tag)
        for dst, envs in self.rt.exchange_bulk(envelopes).items():
            store = self.rt.store(dst)
            store[key] = tuple(store.get(key, ())) + tuple(item for env in envs for item in env.payload)
        return self.rt.distributed_sort(key, scratch, scratch)

    def _carry(
        self,
        placed: Mapping[int, Sequence[Payload]],
        summarize: Callable[[Sequence[Payload]], Payload],
        combine: Callable[[Optional[Payload], Payload], Payload],
        tag: str,
    ) -> Dict[int, Optional[Payload]]:
        """Prefix state across sorted blocks: summaries in, carries out (2 rounds)."""
        summaries = {target: summarize(block) for target, block in placed.items() if block}
        self.rt.exchange([
            MessageEnvelope(target, COORDINATOR, f"pre:{tag}:sum", summary)
            for target, summary in summaries.items()
        ])
        carry: Optional[Payload] = None
        carry_in: Dict[int, Optional[Payload]] = {}
        for target in placed:
            if target not in summaries:
                continue
            carry_in[target] = carry
            carry = combine(carry, summaries[target])
        self.rt.exchange([
            MessageEnvelope(COORDINATOR, target, f"pre:{tag}:carry", state)
            for target, state in carry_in.items()
            if state is not None
        ])
        return carry_in

    # -- inspection --------------------------------------------------------

    def components(self) -> Dict[int, int]:
        """Component label of every vertex, read from the statistics machines."""
        found = {v: v for v in range(self.cfg.n)}
        for stats in range(1, self.cfg.first_pool_machine):
            for key, record in self.rt.store(stats).items():
                if key[0] == REC:
                    found[key[1]] = comp_of(key[1], record)
        return found

    def anchors(self) -> Dict[int, int]:
        found = {v: 0 for v in range(self.cfg.n)}
        for stats in range(1, self.cfg.first_pool_machine):
            for key, record in self.rt.store(stats).items():
                if key[0] == REC:
                    found[key[1]] = anchor_of(record)
        return found

    def sizes(self) -> Dict[int, int]:
        """Size of every component, by label."""
        return dict(Counter(self.components().values()))

    def stored_copies(self) -> List[Tuple[int, AdjEntry]]:
        """Every live copy as ``(owner, entry)``, read from the edge machines."""
        found = []
        for mid in self.placement.edge_machines():
            store = self.rt.store(mid)
            for key in sorted(k for k in store if k[0] == ADJ):
                found.extend((key[1], entry) for entry in store[key])
        return found

    def tours(self) -> Dict[int, List[Optional[int]]]:
        """Each component's tour as the list of vertices at entries 1..L."""
        comps = self.components()
        entries: Dict[int, Dict[int, int]] = defaultdict(dict)
        for owner, entry in self.stored_copies():
            if entry.lo:
                entries[comps[owner]][entry.lo] = owner
                entries[comps[owner]][entry.hi] = owner
        tours: Dict[int, List[Optional[int]]] = {}
        for comp, size in self.sizes().items():
            length = 4 * (size - 1)
            tours[comp] = [entries[comp].get(i) for i in range(1, length + 1)]
        return tours

    def forest_edges(self) -> Dict[Tuple[int, int], Optional[int]]:
        """Tree edges with their weights."""
        return {
            canonical_edge(owner, entry.nbr): entry.weight
            for owner, entry in self.stored_copies()
            if entry.lo
        }

    def stale_caches(self) -> List[Tuple[int, int]]:
        """Copies whose cached far component or anchor disagrees with the records."""
        comps, anchors = self.components(), self.anchors()
        stale = []
        for owner, entry in self.stored_copies():
            if (entry.far_comp, entry.far_anchor) != (comps[entry.nbr], anchors[entry.nbr]):
                stale.append((owner, entry.nbr))
        for mid in self.placement.edge_machines():
            for key, header in self.rt.store(mid).items():
                if key[0] == HDR and tuple(header) != (comps[key[1]], anchors[key[1]]):
                    stale.append((key[1], key[1]))
        return stale


# ---------------------------------------------------------------------------
# Preprocessing helpers (machine side)
# ---------------------------------------------------------------------------

def _tour_items(store: Store) -> Set[Tuple[int, int]]:
    """Every (component, entry) value a machine holds."""
    items: Set[Tuple[int, int]] = set()
    for key, value in store.items():
        if key[0] == HDR:
            items.add(tuple(value))
        elif key[0] == ADJ:
            comp = store[(HDR, key[1])][0]
            for entry in value:
                if entry.lo:
                    items.add((comp, entry.lo))
                    items.add((comp, entry.hi))
                items.add((entry.far_comp, entry.far_anchor))
    for vertex in _owned(store):
        record = store.get((REC, vertex), EMPTY_RECORD)
        items.add((comp_of(vertex, record), anchor_of(record)))
    return items


def _joined(comp: int, idx: int, plan: Optional[Payload], shift: int) -> Optional[Payload]:
    if plan is None:
        return None
    if plan[2] == -1:
        single = plan[3]
        new = 1 if single and idx == 0 else idx + shift
        return None if new == idx else (comp, idx, comp, new)
    _, _, pivot, length, base, head, x, y = plan
    if length == 0:
        new = base + 3
    else:
        new = (idx + length - pivot) % length + 1 + base + 2
    return (comp, idx, head, new, x, y, base, length)


def _apply_places(store: Store, results: Sequence[Payload]) -> None:
    """Move every held (component, entry) to its merged place and mark hook edges."""
    places: Dict[Tuple[int, int], Tuple[int, int]] = {}
    hooks: Dict[Tuple[int, int], Tuple[int, int]] = {}
    for result in results:
        places[(result[0], result[1])] = (result[2], result[3])
        if len(result) > 4:
            x, y, base, length = result[4:]
            hooks[(x, y)] = (base + 1, base + length + 4)
            hooks[(y, x)] = (base + 2, base + length + 3)

    def moved(comp: int, idx: int) -> Tuple[int, int]:
        return places.get((comp, idx), (comp, idx))

    for key in [k for k in store if k[0] == ADJ]:
        owner = key[1]
        comp = store[(HDR, owner)][0]
        entries = []
        for entry in store[key]:
            if entry.lo:
                entry = entry._replace(lo=moved(comp, entry.lo)[1], hi=moved(comp, entry.hi)[1])
            elif (owner, entry.nbr) in hooks:
                lo, hi = hooks[(owner, entry.nbr)]
                entry = entry._replace(lo=lo, hi=hi)
            far = moved(entry.far_comp, entry.far_anchor)
            entries.append(entry._replace(far_comp=far[0], far_anchor=far[1]))
        put_block(store, owner, entries)
    for key in [k for k in store if k[0] == HDR]:
        store[key] = moved(*store[key])
    for vertex in _owned(store):
        record = store.get((REC, vertex), EMPTY_RECORD)
        place = moved(comp_of(vertex, record), anchor_of(record))
        _write_record(store, vertex, record._replace(**packed(vertex, *place)))
