"""
dmpc/partition.py - Vertex-Based Placement

Keeps the graph spread over the edge machines and the bookkeeping the
coordinator needs to find it again.

Store layout:
    coordinator   ("meta",)         Meta: last update, oldest kept history
                                    entry, round-robin cursors
                  ("dir", mid)      DirEntry per edge machine
                  ("hist", seq)     HistoryEntry of the last H_max updates
    statistics    ("v", x)          VertexRecord (absent while all-default)
    edge machine  ("adj", x)        adjacency block of x: AdjEntry tuple
                  ("hdr", x)        per-vertex header (connectivity only)

Placement rules:
    - A light vertex (degree ≤ τ) keeps its whole block on one machine;
      light machines pack many blocks.
    - A heavy vertex keeps τ "alive" entries on a packing machine and the
      rest on a stack of machines it owns alone ("suspended" machines).
    - Deletions are lazy: a copy becomes stale when the history holds a
      deletion of its edge with a larger sequence number. Machines apply the
      history when they are next synced, so stale copies never move.
    - Cached mates travel in the history as well: each entry lists the mate
      changes its update triggered.

Directory free-word counts are exact after a machine reports and
conservative (never too high) after moves the coordinator only planned.
"""

from __future__ import annotations

import logging
import math
from collections import Counter, defaultdict
from functools import partial
from typing import (
    Any,
    Callable,
    Dict,
    Iterable,
    List,
    Mapping,
    NamedTuple,
    Optional,
    Sequence,
    Set,
    Tuple,
)

from .errors import (
    DestinationFull,
    DuplicateEdge,
    HistoryOverflow,
    InvariantViolation,
    MachinePoolExhausted,
    NoMachineFits,
    UnknownEdge,
    UnknownVertex,
)
from .models import (
    COORDINATOR,
    AdjEntry,
    DirEntry,
    HistoryEntry,
    MachineKind,
    Op,
    VertexRecord,
)
from .runtime import Machine, Payload, Runtime, Store
from .utils import canonical_edge

logger = logging.getLogger(__name__)

ADJ = "adj"
HDR = "hdr"
REC = "v"
META = ("meta",)

EMPTY_RECORD = VertexRecord()
PACKING_KINDS = frozenset({MachineKind.LIGHT, MachineKind.SCRATCH})
EDGE_KINDS = frozenset({MachineKind.LIGHT, MachineKind.HEAVY, MachineKind.SCRATCH})

_FIELD_INDEX = {name: index for index, name in enumerate(VertexRecord._fields)}

# Upper bound on entries moved by one "move everything" request.
_ALL = 1 << 30

# Words an (owner, entries, header) shipment adds on top of its entries
# and header: the owner ID.
FRAME_WORDS = 1


class Meta(NamedTuple):
    seq: int = 0
    first: int = 1
    cursor: int = 0
    stats_cursor: int = 0


# ---------------------------------------------------------------------------
# Machine-side procedures
# ---------------------------------------------------------------------------

def block(store: Store, owner: int) -> Tuple[AdjEntry, ...]:
    """The adjacency block of ``owner`` held by this store."""
    return store.get((ADJ, owner), ())


def put_block(store: Store, owner: int, entries: Sequence[AdjEntry]) -> None:
    """Replace a block; an empty block takes its header with it."""
    if entries:
        store[(ADJ, owner)] = tuple(entries)
    else:
        store.pop((ADJ, owner), None)
        store.pop((HDR, owner), None)


def apply_history(
    store: Store,
    delta: Sequence[Tuple[int, int, int, int, Tuple[Tuple[int, int], ...]]],
    extra: Sequence[Tuple[int, int, int]] = (),
) -> List[Tuple[int, int, int]]:
    """
    Bring every block of a store up to date with history entries.

    ``delta`` holds ``(seq, op, u, v, changes)`` items, ``extra`` holds
    ``(seq, u, v)`` deletions of the update in progress. Applying the same
    items twice changes nothing, and a window larger than needed is harmless
    because the last mate change of a vertex is its current mate.

    Returns:
        ``(owner, nbr, seq)`` for every copy dropped as stale.
    """
    cutoff: Dict[Tuple[int, int], int] = {}
    latest: Dict[int, int] = {}
    for seq, op, u, v, changes in delta:
        if op == Op.DELETE:
            for pair in ((u, v), (v, u)):
                cutoff[pair] = max(cutoff.get(pair, 0), seq)
        for vertex, mate in changes:
            latest[vertex] = mate
    for seq, u, v in extra:
        for pair in ((u, v), (v, u)):
            cutoff[pair] = max(cutoff.get(pair, 0), seq)

    dropped: List[Tuple[int, int, int]] = []
    if not cutoff and not latest:
        return dropped
    for key in [k for k in store if k[0] == ADJ]:
        owner = key[1]
        kept: List[AdjEntry] = []
        changed = False
        for entry in store[key]:
            cut = cutoff.get((owner, entry.nbr))
            if cut is not None and entry.seq < cut:
                dropped.append((owner, entry.nbr, cut))
                changed = True
                continue
            if entry.mate is not None and entry.nbr in latest and entry.mate != latest[entry.nbr]:
                entry = entry._replace(mate=latest[entry.nbr])
                changed = True
            kept.append(entry)
        if changed:
            put_block(store, owner, kept)
    return dropped


def synced(handler: Callable[[Machine, Any], Any], machine: Machine, payload: Payload) -> Payload:
    """Apply the sync part of a request, then run ``handler`` on the rest."""
    sync, inner = payload
    dropped = apply_history(machine.store, sync[1], sync[2])
    out = handler(machine, inner)
    return (machine.store.words, tuple(dropped), out)


def _count_and_find(machine: Machine, inner: Payload) -> Payload:
    vertices, edge = inner
    counts = tuple((x, len(block(machine.store, x))) for x in vertices)
    found = 0
    if edge:
        owner, nbr = edge
        found = int(any(entry.nbr == nbr for entry in block(machine.store, owner)))
    return (counts, found)


def _move_out(machine: Machine, payload: Payload) -> List[Tuple[int, Payload]]:
    """Take up to ``count`` entries of one owner and split them over ``plan``."""
    sync, (owner, count, exclude, plan, cap) = payload
    store = machine.store
    dropped = apply_history(store, sync[1], sync[2])
    entries = list(block(store, owner))
    count = min(count, sum(limit for _, limit in plan))
    movable = [i for i, entry in enumerate(entries) if entry.nbr != exclude]
    picked = set(movable[max(0, len(movable) - count):])
    chosen = [entry for i, entry in enumerate(entries) if i in picked]
    header = store.get((HDR, owner))
    put_block(store, owner, [entry for i, entry in enumerate(entries) if i not in picked])

    out: List[Tuple[int, Payload]] = []
    start = 0
    for dst, limit in plan:
        chunk = chosen[start:start + limit]
        start += len(chunk)
        for i in range(0, len(chunk), cap):
            out.append((dst, (owner, tuple(chunk[i:i + cap]), header)))
    report = (store.words, len(chosen), len(block(store, owner)), tuple(dropped))
    out.append((COORDINATOR, report))
    return out


def _receive(machine: Machine, payload: Payload) -> None:
    owner, chunk, header = payload
    store = machine.store
    store[(ADJ, owner)] = block(store, owner) + tuple(chunk)
    if header is not None and (HDR, owner) not in store:
        store[(HDR, owner)] = header


def _evacuate(machine: Machine, payload: Payload) -> List[Tuple[int, Payload]]:
    """Ship every block to ``dst``, one envelope per block."""
    sync, dst = payload
    store = machine.store
    dropped = apply_history(store, sync[1], sync[2])
    before = store.words
    out: List[Tuple[int, Payload]] = []
    for owner in sorted(key[1] for key in store if key[0] == ADJ):
        out.append((dst, (owner, block(store, owner), store.get((HDR, owner)))))
        put_block(store, owner, ())
    out.append((COORDINATOR, (store.words, before - store.words, tuple(dropped))))
    return out


def _read_records(machine: Machine, payload: Payload) -> Payload:
    return tuple((v, machine.store.get((REC, v), EMPTY_RECORD)) for v in payload)


def _write_records(machine: Machine, payload: Payload) -> None:
    store = machine.store
    for vertex, full, fields in payload:
        record = full if full is not None else store.get((REC, vertex), EMPTY_RECORD)
        for index, value in fields:
            record = record._replace(**{VertexRecord._fields[index]: value})
        if record == EMPTY_RECORD:
            store.pop((REC, vertex), None)
        else:
            store[(REC, vertex)] = record


def _forward_alive(machine: Machine, payload: Payload) -> None:
    forwards = dict(payload)
    store = machine.store
    for key in [k for k in store if k[0] == REC]:
        record = store[key]
        target = record.alive
        if target not in forwards:
            continue
        while target in forwards:
            target = forwards[target]
        store[key] = record._replace(alive=target)


# ---------------------------------------------------------------------------
# Coordinator side
# ---------------------------------------------------------------------------

class Placement:
    """
    The coordinator's view of where every adjacency block lives.

    Algorithms drive one update at a time:

        seq = placement.begin_update(op, u, v)
        placement.load([u, v])                 # records into the work set
        placement.refresh_vertices([u, v])     # sync + heavy/light upkeep
        placement.add_edge_storage(...)        # inserts only
        ...                                    # algorithm-specific visits
        placement.end_update(op, u, v, changes)

    Args:
        runtime: The simulated cluster; machine 0 is the coordinator.
        entry_words: Words of one AdjEntry for this algorithm.
        header_words: Words of the per-vertex header, 0 when unused.
        lazy_deletes: Deletions travel through the history (matching); when
                      False the algorithm removes copies eagerly itself.
    """

    def __init__(
        self,
        runtime: Runtime,
        *,
        entry_words: int,
        header_words: int = 0,
        lazy_deletes: bool = True,
    ):
        self.rt = runtime
        self.cfg = runtime.config
        if self.cfg.n < 1:
            raise InvariantViolation("placement needs a graph configuration (n >= 1)")
        self.tau = self.cfg.tau
        self.entry_words = entry_words
        self.header_words = header_words
        self.lazy_deletes = lazy_deletes
        # Most entries one shipment can carry and stay within S words.
        self.chunk_entries = max(1, (self.cfg.S - header_words - FRAME_WORDS) // entry_words)
        self.coord = runtime.store(COORDINATOR)
        self.coord[META] = Meta()

        self.work: Dict[int, VertexRecord] = {}
        self._dirty: Set[int] = set()
        self._partial: Dict[int, Dict[str, Any]] = defaultdict(dict)
        self._shrunk: Set[int] = set()
        self._acks = 0
        self._extra: Tuple[Tuple[int, int, int], ...] = ()
        self._current = 0
        self._op: Tuple[int, int, int] = (0, 0, 0)

    # -- meta and history --------------------------------------------------

    @property
    def meta(self) -> Meta:
        return self.coord[META]

    @property
    def seq(self) -> int:
        """Sequence number of the last recorded update."""
        return self.meta.seq

    @property
    def current(self) -> int:
        """Sequence number of the update in progress."""
        return self._current

    def history(self) -> List[Tuple[int, HistoryEntry]]:
        meta = self.meta
        return [(s, self.coord[("hist", s)]) for s in range(meta.first, meta.seq + 1)]

    def record_update(self, seq: int, entry: HistoryEntry) -> None:
        """
        Append the entry of update ``seq`` and evict down to H_max entries.

        Raises:
            InvariantViolation: ``seq`` does not follow the last entry.
            HistoryOverflow: The oldest entry has not reached every machine.
        """
        meta = self.meta
        if seq != meta.seq + 1:
            raise InvariantViolation(f"history expects update {meta.seq + 1}, got {seq}")
        self.coord[("hist", seq)] = entry
        meta = meta._replace(seq=seq)
        cap = self.cfg.history_cap
        while meta.seq - meta.first + 1 > cap:
            oldest = meta.first
            laggard = self._least_refreshed()
            if laggard is not None and self._dir(laggard).refreshed < oldest:
                raise HistoryOverflow(
                    f"cannot evict update {oldest}: machine refreshed only up to "
                    f"{self._dir(laggard).refreshed}",
                    laggard,
                )
            del self.coord[("hist", oldest)]
            meta = meta._replace(first=oldest + 1)
        self.coord[META] = meta

    def _least_refreshed(self) -> Optional[int]:
        edge = [(e.refreshed, mid) for mid, e in self.directory().items() if e.kind in EDGE_KINDS]
        return min(edge)[1] if edge else None

    def _delta(self, mid: int) -> Tuple[Any, ...]:
        meta = self.meta
        refreshed = self._dir(mid).refreshed
        if refreshed + 1 < meta.first:
            raise HistoryOverflow(
                f"history starts at {meta.first} but machine is at {refreshed}", mid
            )
        items = []
        for s in range(refreshed + 1, meta.seq + 1):
            entry = self.coord[("hist", s)]
            if entry.changes or (self.lazy_deletes and entry.op == Op.DELETE):
                items.append((s, entry.op, entry.u, entry.v, entry.changes))
        return tuple(items)

    def _sync_part(self, mid: int) -> Payload:
        return (self._current, self._delta(mid), self._extra)

    def _ack(self, seq: int, owner: int, nbr: int) -> None:
        bit = 1 if owner < nbr else 2
        key = ("hist", seq)
        if key in self.coord:
            entry = self.coord[key]
            self.coord[key] = entry._replace(acks=entry.acks | bit)
        elif seq == self._current:
            self._acks |= bit

    # -- directory ---------------------------------------------------------

    def directory(self) -> Dict[int, DirEntry]:
        """Every directory entry, by machine ID."""
        return {key[1]: value for key, value in sorted(self.coord.items()) if key[0] == "dir"}

    def _dir(self, mid: int) -> DirEntry:
        return self.coord[("dir", mid)]

    def _set_dir(self, mid: int, entry: DirEntry) -> None:
        self.coord[("dir", mid)] = entry

    def _use(self, mid: int, words: int) -> None:
        entry = self._dir(mid)
        self._set_dir(mid, entry._replace(free=entry.free - words))

    def _report(self, mid: int, words: int, dropped: Iterable[Tuple[int, int, int]] = ()) -> None:
        """Take a machine's exact word count and dropped copies."""
        entry = self._dir(mid)
        free = self.cfg.S - words
        if free > entry.free:
            self._shrunk.add(mid)
        self._set_dir(mid, entry._replace(free=free))
        for owner, nbr, seq in dropped:
            self._ack(seq, owner, nbr)

    def _provision(self, kind: MachineKind, owner: Optional[int] = None, below: Optional[int] = None) -> int:
        taken = self.directory()
        for mid in range(self.cfg.first_pool_machine, self.cfg.mu):
            if mid not in taken:
                self._set_dir(mid, DirEntry(int(kind), self.cfg.S, self.seq, owner, below))
                self._shrunk.add(mid)
                logger.info("provisioned machine %d as %s", mid, kind.name.lower())
                return mid
        raise MachinePoolExhausted(f"all {self.cfg.mu} machines are in use")

    def _release(self, mid: int) -> None:
        forwarded = any(
            e.kind == MachineKind.RETIRED and e.below == mid for e in self.directory().values()
        )
        if forwarded:
            return
        del self.coord[("dir", mid)]
        self._shrunk.discard(mid)
        logger.info("released machine %d", mid)

    def resolve(self, mid: Optional[int]) -> Optional[int]:
        """Follow retirement forwards to the machine that holds the data now."""
        while mid is not None:
            entry = self.coord.get(("dir", mid))
            if entry is None or entry.kind != MachineKind.RETIRED:
                return mid
            mid = entry.below
        return mid

    def fits(self, mid: int, words: int) -> bool:
        entry = self.coord.get(("dir", mid))
        return entry is not None and entry.kind in EDGE_KINDS and entry.free >= words

    def to_fit(self, words: int, exclude: Iterable[int] = ()) -> Tuple[int, int]:
        """
        First packing machine, by ID, with ``words`` free.

        Returns:
            The machine and its free words left after the reservation.

        Raises:
            NoMachineFits: No packing machine has room.
        """
        skip = set(exclude)
        for mid, entry in self.directory().items():
            if entry.kind in PACKING_KINDS and mid not in skip and entry.free >= words:
                return mid, entry.free - words
        raise NoMachineFits(words)

    def _place(self, words: int, exclude: Iterable[int] = (), kind: MachineKind = MachineKind.LIGHT) -> int:
        try:
            return self.to_fit(words, exclude)[0]
        except NoMachineFits:
            return self._provision(kind)

    def chain(self, owner: int) -> List[int]:
        """Suspended machines of ``owner``, top of the stack first."""
        members = {
            mid: e for mid, e in self.directory().items()
            if e.kind == MachineKind.HEAVY and e.owner == owner
        }
        pointed = {e.below for e in members.values()}
        tops = [mid for mid in members if mid not in pointed]
        ordered: List[int] = []
        mid = tops[0] if tops else None
        while mid is not None and mid in members:
            ordered.append(mid)
            mid = members[mid].below
        return ordered

    def machines_of(self, vertex: int) -> List[int]:
        """Every machine holding copies of ``vertex``: alive first, then the chain."""
        record = self.work[vertex]
        found = [] if record.alive is None else [record.alive]
        return found + self.chain(vertex)

    def edge_machines(self) -> List[int]:
        return [mid for mid, e in self.directory().items() if e.kind in EDGE_KINDS]

    # -- records -----------------------------------------------------------

    def begin_update(self, op: int, u: int, v: int) -> int:
        """Start update ``seq`` = last + 1 and clear the per-update state."""
        self._current = self.seq + 1
        self._op = (int(op), u, v)
        self.work.clear()
        self._dirty.clear()
        self._partial.clear()
        self._shrunk.clear()
        self._acks = 0
        self._extra = ((self._current, u, v),) if op == Op.DELETE and self.lazy_deletes else ()
        return self._current

    def load(self, vertices: Iterable[int]) -> Dict[int, VertexRecord]:
        """
        Fetch records into the work set (2 rounds unless all are loaded).

        Raises:
            UnknownVertex: A vertex is outside 0..n-1.
        """
        wanted = sorted(set(vertices))
        for v in wanted:
            if not 0 <= v < self.cfg.n:
                raise UnknownVertex(v)
        missing = [v for v in wanted if v not in self.work]
        if missing:
            groups: Dict[int, List[int]] = defaultdict(list)
            for v in missing:
                groups[self.cfg.stats_machine_of(v)].append(v)
            replies = self.rt.rpc(
                COORDINATOR,
                [(mid, tuple(vs)) for mid, vs in sorted(groups.items())],
                _read_records,
                "stats:read",
            )
            for items in replies.values():
                for v, record in items:
                    alive = self.resolve(record.alive)
                    self.work[v] = record._replace(alive=alive)
                    if alive != record.alive:
                        self._dirty.add(v)
            for v in missing:
                fields = self._partial.pop(v, None)
                if fields:
                    self.set_record(v, self.work[v]._replace(**fields))
        return {v: self.work[v] for v in wanted}

    def record(self, vertex: int) -> VertexRecord:
        return self.work[vertex]

    def set_record(self, vertex: int, record: VertexRecord) -> None:
        self.work[vertex] = record
        self._dirty.add(vertex)

    def set_fields(self, vertex: int, **fields: Any) -> None:
        """Change fields of a record, loaded or not; written at flush."""
        if vertex in self.work:
            self.set_record(vertex, self.work[vertex]._replace(**fields))
        else:
            self._partial[vertex].update(fields)

    def flush_records(self) -> None:
        """
        Write changed records to their statistics machines (1 round).

        Alive pointers are resolved first, so a record loaded before a merge
        never writes back the retired machine.
        """
        groups: Dict[int, List[Payload]] = defaultdict(list)
        for v in sorted(self._dirty):
            record = self.work[v]
            alive = self.resolve(record.alive)
            if alive != record.alive:
                record = self.work[v] = record._replace(alive=alive)
            groups[self.cfg.stats_machine_of(v)].append((v, record, ()))
        for v in sorted(self._partial):
            fields = tuple((_FIELD_INDEX[name], value) for name, value in sorted(self._partial[v].items()))
            groups[self.cfg.stats_machine_of(v)].append((v, None, fields))
        self._dirty.clear()
        self._partial.clear()
        if groups:
            self.rt.cast(
                COORDINATOR,
                [(mid, tuple(items)) for mid, items in sorted(groups.items())],
                _write_records,
                "stats:write",
            )

    # -- visiting machines -------------------------------------------------

    def visit(
        self,
        calls: Mapping[int, Payload],
        handler: Callable[[Machine, Any], Any],
        kind: str,
    ) -> Dict[int, Any]:
        """
        Sync each machine, run ``handler`` there and collect its answer (2 rounds).

        The machine first applies the history it has not seen plus the
        deletion in progress, so the handler always sees current blocks.
        """
        if not calls:
            return {}
        replies = self.rt.rpc(
            COORDINATOR,
            [(mid, (self._sync_part(mid), calls[mid])) for mid in sorted(calls)],
            partial(synced, handler),
            kind,
        )
        answers = {}
        for mid, (words, dropped, out) in replies.items():
            self._report(mid, words, dropped)
            self._mark_refreshed(mid)
            answers[mid] = out
        return answers

    def _mark_refreshed(self, mid: int) -> None:
        entry = self._dir(mid)
        if entry.refreshed < self.seq:
            self._set_dir(mid, entry._replace(refreshed=self.seq))

    def locate(self, vertex: int, query: str, *, machine: Optional[int] = None, words: int = 0) -> Any:
        """
        Answer a placement query about ``vertex``.

        Queries: "alive", "suspended", "degree" (live copies of the vertex on
        ``machine``), "fits" (``machine`` has ``words`` free) and "to_fit".
        """
        record = self.load([vertex])[vertex]
        if query == "alive":
            return record.alive
        if query == "suspended":
            return record.suspended
        if query == "degree":
            answer = self.visit({machine: ((vertex,), ())}, _count_and_find, "placement:degree")
            return dict(answer[machine][0]).get(vertex, 0)
        if query == "fits":
            return self.fits(machine, words)
        if query == "to_fit":
            return self.to_fit(words)
        raise ValueError(f"unknown placement query {query!r}")

    # -- vertex upkeep -----------------------------------------------------

    def refresh_vertices(
        self,
        vertices: Sequence[int],
        *,
        lookup: Optional[Tuple[int, int]] = None,
        expect: Optional[bool] = None,
    ) -> Dict[int, int]:
        """
        Sync the alive machines of ``vertices`` and restore their windows.

        Args:
            lookup: ``(owner, nbr)``: also sync every machine of ``owner`` and
                    look for a live copy of that edge. During a deletion the
                    copy counts as found when the sync dropped it.
            expect: Whether the looked-up edge must exist; checked before any
                    upkeep moves data.

        Returns:
            Live alive-entry count per vertex before upkeep.

        Raises:
            DuplicateEdge: ``expect`` is False and the edge is stored.
            UnknownEdge: ``expect`` is True and the edge is not stored.
        """
        asked: Dict[int, List[int]] = defaultdict(list)
        for x in vertices:
            alive = self.work[x].alive
            if alive is not None:
                asked[alive].append(x)
        targets = set(asked)
        if lookup is not None:
            targets.update(self.machines_of(lookup[0]))
        calls = {mid: (tuple(asked.get(mid, ())), lookup or ()) for mid in targets}
        live = {x: 0 for x in vertices}
        found = False
        acks_before = self._acks
        for counts, hit in self.visit(calls, _count_and_find, "placement:sync").values():
            live.update(counts)
            found = found or bool(hit)
        if lookup is not None:
            if self._extra:
                found = found or self._acks != acks_before
            if expect is True and not found:
                raise UnknownEdge(*lookup)
            if expect is False and found:
                raise DuplicateEdge(*lookup)
        for x in vertices:
            self._rebalance(x, live[x])
        return live

    def refresh_vertex(self, vertex: int) -> int:
        """Single-vertex form of refresh_vertices; returns the live alive count."""
        self.load([vertex])
        return self.refresh_vertices([vertex])[vertex]

    def _rebalance(self, x: int, live: int) -> None:
        record = self.work[x]
        tau = self.tau
        if record.degree > tau:
            if live < tau and record.suspended is not None:
                self.fetch_suspended(x, tau - live, live)
            elif live > tau:
                self.move_suspended(x, live - tau, exclude=record.mate)
        elif record.suspended is not None:
            self.fetch_suspended(x, record.degree - live, live, drain=True)
            logger.debug("vertex %d is light again", x)
        elif live != record.degree:
            raise InvariantViolation(
                f"light vertex {x} has degree {record.degree} but {live} stored copies",
                record.alive,
            )
        if self.work[x].degree == 0 and self.work[x].alive is not None:
            self._shrunk.add(self.work[x].alive)
            self.set_record(x, self.work[x]._replace(alive=None))

    def fetch_suspended(self, x: int, count: int, live: int, *, drain: bool = False) -> int:
        """
        Move ``count`` suspended entries of ``x`` to its alive machine.

        Machines are taken from the top of the stack; an emptied machine is
        released. With ``drain`` the whole stack is emptied.

        Returns:
            Entries moved.
        """
        ew = self.entry_words
        record = self.work[x]
        alive = record.alive
        if count > 0 and (alive is None or self._dir(alive).free < count * ew + self.header_words):
            alive = self._relocate_block(x, live, extra_words=count * ew)
        moved = 0
        while self.work[x].suspended is not None and (drain or moved < count):
            top = self.work[x].suspended
            want = max(0, count - moved) if not drain else _ALL
            taken, left = self._move(x, want, top, ((alive, want),))
            moved += taken
            if left == 0:
                below = self._dir(top).below
                self._release_heavy(top)
                self.set_record(x, self.work[x]._replace(suspended=below))
            elif not drain:
                break
        return moved

    def move_suspended(self, x: int, count: int, *, exclude: Optional[int] = None) -> int:
        """
        Push ``count`` alive entries of ``x`` onto its suspended stack.

        The entry towards ``exclude`` (the mate) never moves. The top machine
        is filled first; new machines are stacked above it as needed.
        """
        ew = self.entry_words
        record = self.work[x]
        top = record.suspended
        plan: List[Tuple[int, int]] = []
        remaining = count
        if top is not None:
            room = max(0, (self._dir(top).free - self.header_words) // ew)
            take = min(room, self.chunk_entries, remaining)
            if take:
                plan.append((top, take))
                remaining -= take
        while remaining > 0:
            top = self._provision(MachineKind.HEAVY, owner=x, below=top)
            take = min(self.chunk_entries, remaining)
            plan.append((top, take))
            remaining -= take
        moved, _ = self._move(x, count, record.alive, tuple(plan), exclude=exclude)
        self.set_record(x, self.work[x]._replace(suspended=top))
        return moved

    def relocate_edges(
        self,
        vertex: int,
        count: int,
        source: int,
        destination: int,
        *,
        exclude: Optional[int] = None,
    ) -> int:
        """
        Move up to ``count`` live entries of ``vertex`` between machines.

        Stale copies are dropped at the source first and never move.

        Raises:
            DestinationFull: The directory says the destination lacks room.
        """
        words = count * self.entry_words + self.header_words
        if not self.fits(destination, words):
            raise DestinationFull(destination, words)
        return self._move(vertex, count, source, ((destination, count),), exclude=exclude)[0]

    def _move(
        self,
        owner: int,
        count: int,
        source: int,
        plan: Tuple[Tuple[int, int], ...],
        *,
        exclude: Optional[int] = None,
    ) -> Tuple[int, int]:
        arrived = self.rt.relay(
            COORDINATOR,
            [(source, (self._sync_part(source), (owner, count, exclude, plan, self.chunk_entries)))],
            _move_out,
            "edge:move",
            on_arrival=_receive,
        )
        (_, (words, taken, left, dropped)), = arrived[COORDINATOR]
        self._report(source, words, dropped)
        self._mark_refreshed(source)
        self._shrunk.add(source)
        remaining = taken
        for dst, limit in plan:
            chunk = min(limit, remaining)
            remaining -= chunk
            if chunk:
                self._use(dst, chunk * self.entry_words + self.header_words)
        logger.debug("moved %d entries of vertex %d from machine %d", taken, owner, source)
        return taken, left

    def _relocate_block(self, x: int, live: int, *, extra_words: int) -> int:
        """Move the whole alive block of ``x`` where it fits with ``extra_words`` to spare."""
        record = self.work[x]
        need = live * self.entry_words + self.header_words + extra_words
        source = record.alive
        exclude = () if source is None else (source,)
        dst = self._place(need, exclude, kind=MachineKind.SCRATCH)
        if source is not None and live:
            self._move(x, _ALL, source, ((dst, _ALL),))
        self.set_record(x, self.work[x]._replace(alive=dst))
        logger.debug("relocated block of vertex %d to machine %d", x, dst)
        return dst

    def _release_heavy(self, mid: int) -> None:
        """Unlink an empty suspended machine from its owner's stack and free it."""
        entry = self._dir(mid)
        for other, e in self.directory().items():
            if e.kind == MachineKind.HEAVY and e.below == mid:
                self._set_dir(other, e._replace(below=entry.below))
        self._release(mid)

    def add_edge_storage(
        self,
        entries: Mapping[int, AdjEntry],
        *,
        keep_alive: Iterable[int] = (),
        headers: Optional[Mapping[int, Any]] = None,
    ) -> None:
        """
        Store the new copy of an edge for each endpoint and bump its degree.

        Args:
            entries: The copy to store, per endpoint (owner).
            keep_alive: Heavy endpoints whose new edge must be alive (it is
                        about to become their matched edge); an older
                        unmatched alive entry is pushed out instead.
            headers: Per-vertex header to store next to new blocks.
        """
        headers = headers or {}
        keep = set(keep_alive)
        ew = self.entry_words
        appends: List[Tuple[int, Payload]] = []
        sheds: List[int] = []
        for owner in sorted(entries):
            record = self.work[owner]
            degree = record.degree + 1
            self.set_record(owner, record._replace(degree=degree))
            header = headers.get(owner)
            if degree <= self.tau or owner in keep:
                target = self._room_in_alive(owner, min(degree - 1, self.tau))
                # A block started or moved here may still lack its header.
                fresh = target != record.alive
                appends.append((target, (owner, (entries[owner],), header)))
                self._use(target, ew + (self.header_words if fresh else 0))
                if degree > self.tau:
                    sheds.append(owner)
            else:
                top = record.suspended
                fresh = top is None or self._dir(top).free < ew + self.header_words
                if fresh:
                    top = self._provision(MachineKind.HEAVY, owner=owner, below=record.suspended)
                    self.set_record(owner, self.work[owner]._replace(suspended=top))
                    logger.debug("vertex %d pushed suspended machine %d", owner, top)
                appends.append((top, (owner, (entries[owner],), header)))
                self._use(top, ew + (self.header_words if fresh else 0))
        self.rt.cast(COORDINATOR, appends, _receive, "edge:add")
        for owner in sheds:
            self.move_suspended(owner, 1, exclude=entries[owner].nbr)

    def bulk_load(
        self,
        adjacency: Mapping[int, Sequence[AdjEntry]],
        headers: Optional[Mapping[int, Any]] = None,
    ) -> None:
        """
        Lay out an initial graph during preprocessing.

        The coordinator plans every block from the degrees (first τ entries
        alive, the rest stacked on owned machines) and ships the blocks in
        as many rounds as its send cap needs; records follow in one round.
        """
        headers = headers or {}
        ew = self.entry_words
        hw = self.header_words
        self.work.clear()
        shipments: List[Tuple[int, Payload]] = []
        for x in sorted(adjacency):
            entries = list(adjacency[x])
            if not entries:
                continue
            header = headers.get(x)
            alive_part, rest = entries[: self.tau], entries[self.tau:]
            words = len(alive_part) * ew + hw
            alive = self._place(words)
            self._use(alive, words)
            shipments.append((alive, (x, tuple(alive_part), header)))
            top = None
            per_machine = self.chunk_entries
            while rest:
                chunk, rest = rest[:per_machine], rest[per_machine:]
                top = self._provision(MachineKind.HEAVY, owner=x, below=top)
                self._use(top, len(chunk) * ew + hw)
                shipments.append((top, (x, tuple(chunk), header)))
            self.set_record(x, VertexRecord(degree=len(entries), alive=alive, suspended=top))
        self.rt.cast(COORDINATOR, shipments, _receive, "edge:load")
        self.flush_records()
        self.work.clear()
        logger.info(
            "loaded %d vertices onto %d edge machines", len(adjacency), len(self.edge_machines())
        )

    def _room_in_alive(self, owner: int, live: int) -> int:
        record = self.work[owner]
        ew = self.entry_words
        if record.alive is None:
            target = self._place(ew + self.header_words)
            self.set_record(owner, record._replace(alive=target))
            return target
        if self._dir(record.alive).free >= ew:
            return record.alive
        return self._relocate_block(owner, live, extra_words=ew)

    # -- closing an update -------------------------------------------------

    def end_update(
        self,
        op: int,
        u: int,
        v: int,
        changes: Sequence[Tuple[int, int]] = (),
        *,
        acks: Optional[int] = None,
    ) -> HistoryEntry:
        """
        Write records, record the history entry and run the per-update upkeep.

        Upkeep: round-robin refresh of edge machines, merging of machines
        that shrank, forwarding of retired machines to one statistics
        machine, and the machine-count check.
        """
        self.flush_records()
        if acks is None:
            acks = HistoryEntry.ALL_ACKED if op != Op.DELETE or not self.lazy_deletes else self._acks
        entry = HistoryEntry(int(op), *canonical_edge(u, v), acks, tuple(changes))
        self.record_update(self._current, entry)
        self._extra = ()
        refreshed = self._refresh_round_robin()
        self._compact(refreshed | self._shrunk)
        self._refresh_stats()
        self.flush_records()
        self.check_machine_bound()
        return entry

    def refresh_machine(self, mid: int) -> None:
        """Apply pending history to one machine, then merge it away if it can go."""
        self.visit({mid: ((), ())}, _count_and_find, "refresh")
        self._compact({mid})

    def _refresh_round_robin(self) -> Set[int]:
        machines = self.edge_machines()
        if not machines:
            return set()
        period = max(1, math.ceil(self.cfg.history_cap / 2))
        k = max(1, math.ceil(len(machines) / period))
        meta = self.meta
        order = [m for m in machines if m > meta.cursor] + [m for m in machines if m <= meta.cursor]
        chosen = order[:k]
        self.visit({mid: ((), ()) for mid in chosen}, _count_and_find, "refresh")
        self.coord[META] = self.meta._replace(cursor=chosen[-1])
        return set(chosen)

    def _compact(self, candidates: Iterable[int]) -> None:
        """Compact every candidate, and every machine that shrinks meanwhile."""
        pending = set(candidates)
        done: Set[int] = set()
        while pending:
            mid = min(pending)
            pending.discard(mid)
            done.add(mid)
            self._compact_one(mid)
            pending |= self._shrunk - done

    def _compact_one(self, mid: int) -> None:
        entry = self.coord.get(("dir", mid))
        if entry is None:
            return
        if entry.kind in PACKING_KINDS:
            self._compact_light(mid)
        elif entry.kind == MachineKind.HEAVY:
            self._compact_heavy(mid)

    def _compact_light(self, mid: int) -> None:
        """
        Merge ``mid`` into another packing machine, or another one into it.

        Partners are tried in machine order and the machine holding less
        moves, so a merge never ships more than S/2 words. A pair the
        directory says fits is synced, and merged only if the exact counts
        still fit.
        """
        if self._dir(mid).free >= self.cfg.S:
            self._release(mid)
            return
        others = [
            other for other, e in self.directory().items()
            if other != mid and e.kind in PACKING_KINDS and e.free < self.cfg.S
        ]
        for other in others:
            if not self.merge_fits(*self._smaller_first(mid, other)):
                continue
            self.visit({mid: ((), ()), other: ((), ())}, _count_and_find, "machine:size")
            if self._dir(mid).free >= self.cfg.S:
                self._release(mid)
                return
            source, target = self._smaller_first(mid, other)
            if self.merge_fits(source, target):
                self._evacuate(source, target)
                return

    def _smaller_first(self, a: int, b: int) -> Tuple[int, int]:
        if self._dir(a).free >= self._dir(b).free:
            return a, b
        return b, a

    def merge_fits(self, source: int, target: int) -> bool:
        """Whether ``source`` holds data and all of it fits in the free words of ``target``."""
        used = self.cfg.S - self._dir(source).free
        return used > 0 and self._dir(target).free >= used

    def _evacuate(self, source: int, target: int) -> None:
        arrived = self.rt.relay(
            COORDINATOR,
            [(source, (self._sync_part(source), target))],
            _evacuate,
            "machine:merge",
            on_arrival=_receive,
        )
        (_, (words, moved, dropped)), = arrived[COORDINATOR]
        self._report(source, words, dropped)
        self._use(target, moved)
        self._set_dir(source, DirEntry(int(MachineKind.RETIRED), self.cfg.S, self.seq, None, target))
        logger.info("merged machine %d into machine %d", source, target)

    def _compact_heavy(self, mid: int) -> None:
        S = self.cfg.S
        entry = self._dir(mid)
        used = S - entry.free
        if 2 * used > S:
            return
        owner = entry.owner
        stack = self.chain(owner)
        if used > 0:
            target = next(
                (m for m in stack if m != mid and self._dir(m).free >= used + self.header_words),
                None,
            )
            if target is None:
                return
            _, left = self._move(owner, _ALL, mid, ((target, _ALL),))
            if left:
                return
        if stack and stack[0] == mid:
            self.set_fields(owner, suspended=self._dir(mid).below)
        self._release_heavy(mid)

    def _refresh_stats(self) -> None:
        retired = {
            mid: e for mid, e in self.directory().items() if e.kind == MachineKind.RETIRED
        }
        if not retired:
            return
        k = self.cfg.stats_count
        meta = self.meta
        target = 1 + meta.stats_cursor % k
        forwards = tuple((mid, self.resolve(mid)) for mid in sorted(retired))
        self.rt.cast(COORDINATOR, [(target, forwards)], _forward_alive, "stats:forward")
        self.coord[META] = meta._replace(stats_cursor=meta.stats_cursor + 1)
        for mid, entry in retired.items():
            if self.seq - entry.refreshed >= k - 1:
                del self.coord[("dir", mid)]
                logger.debug("forward of machine %d dropped", mid)

    def check_machine_bound(self) -> Tuple[int, int]:
        """
        Check the edge machines holding data against the storage they need.

        Compaction leaves every machine more than half full, except:

            1        one packing machine no other packing machine can take
            heavy    one member of each suspended stack
            heavy    a second stack member when neither member has room for
                     the other plus its header

        so ``bound = 2·ceil(stored/S) + 1 + 2·heavy``. Retired entries and
        empty machines still named by a forward hold nothing and are not
        counted.

        Returns:
            (machines in use, bound).

        Raises:
            InvariantViolation: Too many machines are in use.
        """
        S = self.cfg.S
        edge = [e for e in self.directory().values() if e.kind in EDGE_KINDS and e.free < S]
        stored = sum(S - e.free for e in edge)
        heavy = len({e.owner for e in edge if e.kind == MachineKind.HEAVY})
        bound = 2 * math.ceil(stored / S) + 1 + 2 * heavy
        in_use = len(edge)
        if in_use > bound:
            raise InvariantViolation(f"{in_use} edge machines in use, bound is {bound}")
        return in_use, bound

    # -- inspection --------------------------------------------------------

    def stored_copies(self) -> Counter:
        """
        Live ``(owner, nbr)`` copies across all edge machines.

        Reads the stores directly; stale copies are filtered against the
        coordinator's history. Used by the oracle, never by an algorithm.
        """
        cutoff: Dict[Tuple[int, int], int] = {}
        for seq, entry in self.history():
            if entry.op == Op.DELETE:
                cutoff[(entry.u, entry.v)] = seq
        copies: Counter = Counter()
        for mid in self.edge_machines():
            store = self.rt.store(mid)
            for key, value in store.items():
                if key[0] != ADJ:
                    continue
                owner = key[1]
                for entry in value:
                    cut = cutoff.get(canonical_edge(owner, entry.nbr))
                    if cut is not None and entry.seq < cut:
                        continue
                    copies[(owner, entry.nbr)] += 1
        return copies
