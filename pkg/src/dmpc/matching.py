"""
dmpc/matching.py - Fully Dynamic Maximal Matching

Keeps a maximal matching under edge insertions and deletions in a constant
number of rounds per update, with a constant number of active machines on
every path that only touches light vertices.

Every stored copy caches the mate of its neighbour, so a light vertex finds
a free neighbour by scanning one block on one machine. A heavy vertex is
never left unmatched: when it needs a partner it takes a neighbour w from
its alive window whose mate z is light, and z looks for a new partner
itself. Among τ = √(2·m) alive neighbours one always has a light mate,
otherwise the mates alone would carry more than 2·m edge ends.

Tie-breaking is by smallest vertex ID everywhere.
"""

from __future__ import annotations

import logging
import math
from collections import defaultdict
from typing import Dict, Final, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np

from .errors import HeavyStatusFlip, InvariantViolation, SelfLoop
from .models import COORDINATOR, FREE, AdjEntry, MessageEnvelope, Op, VertexRecord
from .partition import ADJ, REC, Placement, apply_history, block
from .runtime import Machine, Payload, Runtime
from .utils import canonical_edge

logger = logging.getLogger(__name__)

# Words of one stored copy: neighbour, insertion seq, cached mate.
ENTRY_WORDS: Final[int] = 3

# Per-update bounds checked by the cost tests. Active machines stay under
# A_MM on light paths; the heavy branch also asks up to τ statistics
# machines for mate degrees in one round.
R_MM: Final[int] = 96
A_MM: Final[int] = 24

# Record fields used: degree, mate, alive, suspended.
SIZING: Final[Dict[str, int]] = {"edge_words": ENTRY_WORDS, "record_words": 4}


def _alive_view(machine: Machine, inner: Payload) -> Payload:
    owner, overlay, _ = inner
    current = dict(overlay)
    return tuple(
        (entry.nbr, current.get(entry.nbr, entry.mate)) for entry in block(machine.store, owner)
    ) or ((FREE, FREE),)


def _free_scan(machine: Machine, inner: Payload) -> Payload:
    owner, overlay, exclude = inner
    current = dict(overlay)
    skip = set(exclude)
    free = [
        entry.nbr
        for entry in block(machine.store, owner)
        if current.get(entry.nbr, entry.mate) == FREE and entry.nbr not in skip
    ]
    return (min(free),) if free else (FREE,)


class DynamicMatching:
    """
    Maximal matching over a Placement.

    Example:
        >>> from dmpc.models import SimConfig
        >>> rt = Runtime(SimConfig.for_graph(4, 4))
        >>> mm = DynamicMatching(rt)
        >>> mm.bootstrap([])
        0
        >>> mm.insert(0, 1)
        {0: 1, 1: 0}
    """

    def __init__(self, runtime: Runtime):
        self.rt = runtime
        self.cfg = runtime.config
        self.placement = Placement(runtime, entry_words=ENTRY_WORDS)
        self.tau = self.cfg.tau
        self._changes: Dict[int, int] = {}
        self._before: Dict[int, Optional[int]] = {}
        self._known: Dict[int, int] = {}

    # -- preprocessing -----------------------------------------------------

    def bootstrap(self, edges: Iterable[Tuple[int, int]]) -> int:
        """
        Load the initial graph and compute a maximal matching.

        Proposal rounds: each iteration every free vertex proposes to one
        uniformly random free neighbour and every vertex that received
        proposals accepts the smallest proposer. A vertex that accepted
        someone withdraws its own proposal unless it went to that same
        vertex. Iterations stop once no edge joins two free vertices.

        Returns:
            Iterations run.
        """
        adjacency: Dict[int, List[AdjEntry]] = defaultdict(list)
        for u, v in sorted({canonical_edge(u, v) for u, v in edges}):
            if u == v:
                raise SelfLoop(u)
            adjacency[u].append(AdjEntry(v, 0, FREE))
            adjacency[v].append(AdjEntry(u, 0, FREE))
        self.placement.bulk_load(adjacency)
        if not adjacency:
            return 0

        limit = 8 * math.ceil(math.log2(self.cfg.n + 1)) + 64
        for iteration in range(1, limit + 1):
            if not self._proposal_iteration(iteration):
                logger.info("bootstrap matching finished after %d iterations", iteration - 1)
                return iteration - 1
        raise InvariantViolation(f"bootstrap matching did not settle within {limit} iterations")

    def _proposal_iteration(self, iteration: int) -> bool:
        """One iteration; returns False when no free vertex has a free neighbour."""
        cfg = self.cfg
        seed = cfg.rng_seed
        edge_machines = self.placement.edge_machines()

        # Edge machines: per block, one uniformly random free neighbour and the free count.
        envelopes = []
        for mid in edge_machines:
            store = self.rt.store(mid)
            rng = np.random.default_rng([seed, iteration, mid])
            items: Dict[int, List[Payload]] = defaultdict(list)
            for key in sorted(k for k in store if k[0] == ADJ):
                free = [e.nbr for e in store[key] if e.mate == FREE]
                if free:
                    pick = free[int(rng.integers(len(free)))]
                    items[cfg.stats_machine_of(key[1])].append((key[1], pick, len(free)))
            envelopes.extend(
                MessageEnvelope(mid, dst, "mm:candidates", tuple(found))
                for dst, found in sorted(items.items())
            )
        delivered = self.rt.exchange_bulk(envelopes)

        # Statistics machines: every free vertex proposes to one free neighbour.
        envelopes = []
        active = 0
        for stats in range(1, cfg.first_pool_machine):
            store = self.rt.store(stats)
            rng = np.random.default_rng([seed, iteration, stats])
            offers: Dict[int, List[Tuple[int, int]]] = defaultdict(list)
            live = 0
            for env in delivered.get(stats, ()):
                for owner, pick, free in env.payload:
                    if store.get((REC, owner), VertexRecord()).mate is not None:
                        continue
                    live += free
                    offers[owner].append((pick, free))
            active += live
            proposals: Dict[int, List[Tuple[int, int]]] = defaultdict(list)
            for owner in sorted(offers):
                picks = offers[owner]
                weights = np.array([count for _, count in picks], dtype=float)
                target = picks[int(rng.choice(len(picks), p=weights / weights.sum()))][0]
                proposals[cfg.stats_machine_of(target)].append((owner, target))
            envelopes.append(MessageEnvelope(stats, COORDINATOR, "mm:active", (live,)))
            envelopes.extend(
                MessageEnvelope(stats, dst, "mm:propose", tuple(pairs))
                for dst, pairs in sorted(proposals.items())
            )
        delivered = self.rt.exchange_bulk(envelopes)
        if active == 0:
            return False

        # Receivers accept their smallest proposer and tell it.
        accepted: Dict[int, Dict[int, int]] = {}
        envelopes = []
        for stats in range(1, cfg.first_pool_machine):
            store = self.rt.store(stats)
            best: Dict[int, int] = {}
            for env in delivered.get(stats, ()):
                if env.kind != "mm:propose":
                    continue
                for owner, target in env.payload:
                    if store.get((REC, target), VertexRecord()).mate is not None:
                        continue
                    best[target] = min(best.get(target, owner), owner)
            accepted[stats] = best
            notices: Dict[int, List[Tuple[int, int]]] = defaultdict(list)
            for target, owner in sorted(best.items()):
                notices[cfg.stats_machine_of(owner)].append((owner, target))
            envelopes.extend(
                MessageEnvelope(stats, dst, "mm:accept", tuple(pairs))
                for dst, pairs in sorted(notices.items())
            )
        delivered = self.rt.exchange_bulk(envelopes)

        # An accepted proposer that took another proposer itself withdraws.
        changes: Dict[int, List[Tuple[int, int]]] = defaultdict(list)
        envelopes = []
        for stats, envs in sorted(delivered.items()):
            store = self.rt.store(stats)
            taken = accepted.get(stats, {})
            confirms: Dict[int, List[Tuple[int, int]]] = defaultdict(list)
            for env in envs:
                for owner, target in env.payload:
                    if taken.get(owner, target) != target:
                        continue
                    record = store.get((REC, owner), VertexRecord())
                    store[(REC, owner)] = record._replace(mate=target)
                    changes[stats].append((owner, target))
                    confirms[cfg.stats_machine_of(target)].append((target, owner))
            envelopes.extend(
                MessageEnvelope(stats, dst, "mm:confirm", tuple(pairs))
                for dst, pairs in sorted(confirms.items())
            )
        for stats, envs in self.rt.exchange_bulk(envelopes).items():
            store = self.rt.store(stats)
            for env in envs:
                for target, owner in env.payload:
                    record = store.get((REC, target), VertexRecord())
                    if record.mate is None:
                        store[(REC, target)] = record._replace(mate=owner)
                        changes[stats].append((target, owner))

        # New mates reach every cached copy.
        notice = tuple(sorted(pair for pairs in changes.values() for pair in pairs))
        envelopes = [
            MessageEnvelope(stats, mid, "mm:mates", tuple(pairs))
            for stats, pairs in sorted(changes.items())
            for mid in edge_machines
        ]
        for mid, envs in self.rt.exchange_bulk(envelopes).items():
            for env in envs:
                apply_history(self.rt.store(mid), ((0, Op.INSERT, -1, -1, env.payload),))
        logger.debug("bootstrap iteration %d matched %d vertices", iteration, len(notice))
        return True

    # -- updates -----------------------------------------------------------

    def insert(self, x: int, y: int) -> Dict[int, int]:
        """
        Insert edge (x, y) and restore maximality.

        Returns:
            The mate changes the update made, FREE for unmatched.

        Raises:
            SelfLoop, UnknownVertex, DuplicateEdge
        """
        if x == y:
            raise SelfLoop(x)
        P = self.placement
        seq = P.begin_update(Op.INSERT, x, y)
        self._start()
        records = self._load([x, y])
        P.refresh_vertices([x, y], lookup=self._lookup_side(records, x, y), expect=False)

        free_x, free_y = self._mate(x) == FREE, self._mate(y) == FREE
        keep = [v for v in (x, y) if free_x and free_y and P.record(v).degree + 1 > self.tau]
        P.add_edge_storage(
            {x: AdjEntry(y, seq, self._mate(y)), y: AdjEntry(x, seq, self._mate(x))},
            keep_alive=keep,
        )
        self._settle_insert(x, y, free_x, free_y)
        return self._finish(Op.INSERT, x, y)

    def _settle_insert(self, x: int, y: int, free_x: bool, free_y: bool) -> None:
        P = self.placement
        if free_x and free_y:
            self._match(x, y)
        elif free_x and P.record(x).is_heavy(self.tau):
            self._rematch_heavy(x)
        elif free_y and P.record(y).is_heavy(self.tau):
            self._rematch_heavy(y)

    def delete(self, x: int, y: int) -> Dict[int, int]:
        """
        Delete edge (x, y); a matched edge frees both ends, which re-match.

        Raises:
            UnknownVertex, UnknownEdge
        """
        P = self.placement
        P.begin_update(Op.DELETE, x, y)
        self._start()
        records = self._load([x, y])
        lookup = self._lookup_side(records, x, y)
        for v in (x, y):
            P.set_record(v, records[v]._replace(degree=records[v].degree - 1))
        P.refresh_vertices([x, y], lookup=lookup, expect=True)

        if self._mate(x) == y:
            self._set_mate(x, FREE)
            self._set_mate(y, FREE)
            for z in (x, y):
                self._rematch(z)
        return self._finish(Op.DELETE, x, y)

    def matched(self, x: int, y: int) -> bool:
        """Whether (x, y) is a matching edge; one load from the statistics machines."""
        P = self.placement
        P.begin_update(Op.QUERY, x, y)
        self._start()
        P.load([x, y])
        return self._mate(x) == y

    def _start(self) -> None:
        self._changes = {}
        self._before = {}
        self._known = {}

    def _load(self, vertices: Iterable[int]) -> Dict[int, VertexRecord]:
        records = self.placement.load(vertices)
        for v, record in records.items():
            self._before.setdefault(v, record.mate)
        return records

    def _lookup_side(self, records: Dict[int, VertexRecord], x: int, y: int) -> Tuple[int, int]:
        """Search the copies of the endpoint with fewer edges."""
        if (records[y].degree, y) < (records[x].degree, x):
            return (y, x)
        return (x, y)

    def _finish(self, op: Op, x: int, y: int) -> Dict[int, int]:
        P = self.placement
        for v, mate in self._changes.items():
            record = P.work.get(v)
            if (
                mate == FREE
                and record is not None
                and record.is_heavy(self.tau)
                and self._before.get(v) is not None
            ):
                raise HeavyStatusFlip(f"heavy vertex {v} lost its mate", record.alive)
        changes = tuple(sorted(self._changes.items()))
        P.end_update(op, x, y, changes)
        return dict(self._changes)

    # -- matching moves ----------------------------------------------------

    def _mate(self, v: int) -> int:
        if v in self._changes:
            return self._changes[v]
        record = self.placement.work.get(v)
        if record is None:
            return self._known[v]
        return FREE if record.mate is None else record.mate

    def _set_mate(self, v: int, mate: int) -> None:
        old = self._mate(v)
        self.placement.set_fields(v, mate=None if mate == FREE else mate)
        self._changes[v] = mate
        if (old == FREE) != (mate == FREE):
            self._on_flip(v)

    def _on_flip(self, v: int) -> None:
        """Called when ``v`` turns free or matched."""

    def _match(self, a: int, b: int) -> None:
        self._set_mate(a, b)
        self._set_mate(b, a)
        logger.debug("matched (%d, %d)", a, b)

    def _overlay(self) -> Tuple[Tuple[int, int], ...]:
        return tuple(sorted(self._changes.items()))

    def _rematch(self, z: int) -> None:
        if self._mate(z) != FREE:
            return
        if self.placement.record(z).is_heavy(self.tau):
            self._rematch_heavy(z)
            return
        self._rematch_light(z)

    def _rematch_light(self, z: int) -> None:
        q = self._scan_free(z)
        if q is not None:
            self._match(z, q)

    def _scan_free(self, z: int, exclude: Sequence[int] = ()) -> Optional[int]:
        """Smallest free neighbour of ``z`` in its alive block."""
        alive = self.placement.record(z).alive
        if alive is None:
            return None
        (found,) = self.placement.visit(
            {alive: (z, self._overlay(), tuple(exclude))}, _free_scan, "mm:scan"
        )[alive]
        if found == FREE:
            return None
        self._known[found] = FREE
        return found

    def _rematch_heavy(self, x: int) -> None:
        """Match heavy ``x``: a free alive neighbour, else steal one whose mate is light."""
        P = self.placement
        alive = P.record(x).alive
        view = [
            pair for pair in P.visit({alive: (x, self._overlay(), ())}, _alive_view, "mm:alive")[alive]
            if pair[0] != FREE
        ]
        self._known.update(view)
        free = [w for w, mate in view if mate == FREE]
        if free:
            self._match(x, min(free))
            return
        self._load(sorted({mate for _, mate in view}))
        for w, z in sorted(view):
            if z != x and not P.record(z).is_heavy(self.tau):
                self._set_mate(z, FREE)
                self._match(x, w)
                self._rematch_light(z)
                return
        raise InvariantViolation(f"heavy vertex {x} has no alive neighbour with a light mate", alive)

    # -- inspection --------------------------------------------------------

    def mates(self) -> Dict[int, int]:
        """Current mate of every matched vertex, read from the statistics machines."""
        found: Dict[int, int] = {}
        for stats in range(1, self.cfg.first_pool_machine):
            for key, record in self.rt.store(stats).items():
                if key[0] == REC and record.mate is not None:
                    found[key[1]] = record.mate
        return found

    def matched_edges(self) -> Set[Tuple[int, int]]:
        return {canonical_edge(v, mate) for v, mate in self.mates().items()}

    def degrees(self) -> Dict[int, int]:
        found: Dict[int, int] = {}
        for stats in range(1, self.cfg.first_pool_machine):
            for key, record in self.rt.store(stats).items():
                if key[0] == REC and record.degree:
                    found[key[1]] = record.degree
        return found

    def heavy_vertices(self) -> Set[int]:
        return {v for v, degree in self.degrees().items() if degree > self.tau}
