"""
dmpc/threehalves.py - 3/2-Approximate Dynamic Matching

A maximal matching with no augmenting path of length three is within 3/2
of a maximum matching. This layer keeps that property on top of
DynamicMatching by storing, next to every vertex's statistics, the number
of its free neighbours. A free endpoint then learns in one lookup whether a
matched neighbour's mate could be re-matched elsewhere.

Counter upkeep is batched: status flips are collected while the update
runs and applied in one pass (neighbour fetch plus one write round) before
any counter is read and once more before the update ends.

The structure starts from the empty graph; there is no initializer that
removes short augmenting paths from an arbitrary input.
"""

from __future__ import annotations

import logging
from collections import Counter, defaultdict
from typing import Dict, Final, Iterable, List, Optional, Sequence, Set, Tuple

from .errors import ConfigError
from .matching import ENTRY_WORDS, DynamicMatching, _alive_view, _free_scan
from .models import COORDINATOR, FREE, Op
from .partition import EMPTY_RECORD, REC, block
from .runtime import Machine, Payload, Runtime

logger = logging.getLogger(__name__)

# The matching record plus the free-neighbour counter.
SIZING: Final[Dict[str, int]] = {"edge_words": ENTRY_WORDS, "record_words": 5}


def _neighbours(machine: Machine, inner: Payload) -> Payload:
    return tuple((v, tuple(entry.nbr for entry in block(machine.store, v))) for v in inner)


def _add_counters(machine: Machine, payload: Payload) -> None:
    store = machine.store
    for vertex, delta in payload:
        record = store.get((REC, vertex), EMPTY_RECORD)
        record = record._replace(free_nbrs=((record.free_nbrs or 0) + delta) or None)
        if record == EMPTY_RECORD:
            store.pop((REC, vertex), None)
        else:
            store[(REC, vertex)] = record


class ThreeHalvesMatching(DynamicMatching):
    """
    Maximal matching free of length-3 augmenting paths.

    Example:
        >>> from dmpc.models import SimConfig
        >>> th = ThreeHalvesMatching(Runtime(SimConfig.for_graph(4, 4)))
        >>> th.bootstrap([])
        0
        >>> th.insert(0, 1)
        {0: 1, 1: 0}
        >>> th.counters()
        {}
    """

    def __init__(self, runtime: Runtime):
        super().__init__(runtime)
        self._pending: Set[int] = set()
        self._counted: Dict[int, bool] = {}
        self._edge: Tuple[Op, int, int] = (Op.INSERT, -1, -1)
        self._edge_counted = True

    def bootstrap(self, edges: Iterable[Tuple[int, int]]) -> int:
        if any(True for _ in edges):
            raise ConfigError("the 3/2 matching starts from the empty graph")
        return super().bootstrap([])

    def insert(self, x: int, y: int) -> Dict[int, int]:
        self._edge = (Op.INSERT, x, y)
        return super().insert(x, y)

    def delete(self, x: int, y: int) -> Dict[int, int]:
        self._edge = (Op.DELETE, x, y)
        return super().delete(x, y)

    # -- update hooks ------------------------------------------------------

    def _start(self) -> None:
        super()._start()
        self._pending = set()
        self._counted = {}
        self._edge_counted = False

    def _on_flip(self, v: int) -> None:
        matched = self._changes[v] != FREE
        self._counted.setdefault(v, not matched)
        self._pending.add(v)

    def _finish(self, op: Op, x: int, y: int) -> Dict[int, int]:
        self._apply_counters()
        return super()._finish(op, x, y)

    def _settle_insert(self, x: int, y: int, free_x: bool, free_y: bool) -> None:
        if free_x and free_y:
            self._match(x, y)
            return
        if free_x == free_y:
            return
        free, other = (x, y) if free_x else (y, x)
        if not self._augment_through(free, other):
            if self.placement.record(free).is_heavy(self.tau):
                self._rematch_heavy(free)

    def _rematch_light(self, z: int) -> None:
        alive = self.placement.record(z).alive
        if alive is None:
            return
        view = [
            pair
            for pair in self.placement.visit({alive: (z, self._overlay(), ())}, _alive_view, "mm:alive")[alive]
            if pair[0] != FREE
        ]
        self._known.update(view)
        free = [w for w, mate in view if mate == FREE]
        if free:
            self._match(z, min(free))
            return
        if not self._augment_from(z, view):
            logger.debug("vertex %d stays free, no length-3 augmentation", z)

    # -- augmentations -----------------------------------------------------

    def _augment_through(self, a: int, b: int) -> bool:
        """Free ``a`` next to matched ``b``: take b, re-match b's mate elsewhere."""
        b2 = self._mate(b)
        self._apply_counters()
        self._load([b2])
        if not self.placement.record(b2).free_nbrs:
            return False
        t = self._scan_free_all(b2, exclude=(a,))
        if t is None:
            return False
        self._match(b, a)
        self._match(b2, t)
        logger.debug("augmented %d-%d-%d-%d", a, b, b2, t)
        return True

    def _augment_from(self, z: int, view: Sequence[Tuple[int, int]]) -> bool:
        """Free light ``z``: first neighbour w whose mate has another free neighbour."""
        P = self.placement
        neighbours = {w for w, _ in view}
        mates = sorted({mate for _, mate in view if mate not in (FREE, z)})
        if not mates:
            return False
        self._apply_counters()
        self._load(mates)
        for w, w2 in sorted(view):
            if w2 in (FREE, z):
                continue
            count = P.record(w2).free_nbrs or 0
            if count == 0 or (count == 1 and w2 in neighbours):
                continue
            t = self._scan_free_all(w2, exclude=(z,))
            if t is None:
                continue
            self._match(z, w)
            self._match(w2, t)
            logger.debug("augmented %d-%d-%d-%d", z, w, w2, t)
            return True
        return False

    def _scan_free_all(self, v: int, exclude: Sequence[int] = ()) -> Optional[int]:
        """Smallest free neighbour of ``v`` over every machine holding its copies."""
        self._load([v])
        inner = (v, self._overlay(), tuple(exclude))
        answers = self.placement.visit(
            {mid: inner for mid in self.placement.machines_of(v)}, _free_scan, "th:scan"
        )
        found = [w for (w,) in answers.values() if w != FREE]
        if not found:
            return None
        self._known[min(found)] = FREE
        return min(found)

    # -- counters ----------------------------------------------------------

    def _apply_counters(self) -> None:
        """Bring every counter up to date with the flips and edge changes so far."""
        P = self.placement
        flips = {
            v: self._mate(v) != FREE
            for v in sorted(self._pending)
            if (self._mate(v) != FREE) != self._counted[v]
        }
        self._pending.clear()
        deltas: Counter = Counter()
        if not self._edge_counted:
            # The edge itself counts against the statuses before the update.
            op, x, y = self._edge
            sign = 1 if op == Op.INSERT else -1
            for a, b in ((x, y), (y, x)):
                if self._before[b] is None:
                    deltas[a] += sign
            self._edge_counted = True
        if flips:
            self._load(flips)
            calls: Dict[int, List[int]] = defaultdict(list)
            for v in flips:
                for mid in P.machines_of(v):
                    calls[mid].append(v)
            answers = P.visit({mid: tuple(vs) for mid, vs in calls.items()}, _neighbours, "th:nbrs")
            for items in answers.values():
                for v, nbrs in items:
                    for w in nbrs:
                        deltas[w] += -1 if flips[v] else 1
            for v, matched in flips.items():
                self._counted[v] = matched
        self._write_counters(deltas)

    def _write_counters(self, deltas: Counter) -> None:
        P = self.placement
        groups: Dict[int, List[Tuple[int, int]]] = defaultdict(list)
        for v, delta in sorted(deltas.items()):
            if delta == 0:
                continue
            if v in P.work:
                count = (P.work[v].free_nbrs or 0) + delta
                P.set_record(v, P.work[v]._replace(free_nbrs=count or None))
            else:
                groups[self.cfg.stats_machine_of(v)].append((v, delta))
        if groups:
            self.rt.cast(
                COORDINATOR,
                [(mid, tuple(items)) for mid, items in sorted(groups.items())],
                _add_counters,
                "th:counters",
            )

    # -- inspection --------------------------------------------------------

    def counters(self) -> Dict[int, int]:
        """Non-zero free-neighbour counters, read from the statistics machines."""
        found: Dict[int, int] = {}
        for stats in range(1, self.cfg.first_pool_machine):
            for key, record in self.rt.store(stats).items():
                if key[0] == REC and record.free_nbrs:
                    found[key[1]] = record.free_nbrs
        return found
