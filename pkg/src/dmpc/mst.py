"""
dmpc/mst.py - Dynamic Minimum Spanning Forest

Runs on the Euler tour machinery of DynamicConnectivity with weighted
copies. An insertion inside a component swaps out the heaviest edge of the
tree path between its endpoints when the new edge is strictly lighter; a
deletion promotes the lightest edge across the cut.

A tree copy lies on the path between x and y exactly when it is the child
copy of its edge and one endpoint's anchor, but not the other's, falls in
its range, so every machine finds its share of the path locally.

Preprocessing buckets the initial edges by weight, (1+ε)^k apart starting
from the lightest, and contracts bucket after bucket in ascending order,
which yields a forest within a factor 1+ε of the minimum.
"""

from __future__ import annotations

import logging
import math
from functools import partial
from typing import Dict, Final, Iterable, Optional, Tuple

from .connectivity import BROADCAST_WORDS, HEADER_WORDS, RECORD_WORDS, DynamicConnectivity
from .errors import NonPositiveEpsilon, NonPositiveWeight
from .models import COORDINATOR
from .partition import ADJ, HDR
from .runtime import Machine, Payload, Runtime
from .utils import canonical_edge

logger = logging.getLogger(__name__)

# A connectivity copy plus its weight.
ENTRY_WORDS: Final[int] = 7

SIZING: Final[Dict[str, int]] = {
    "edge_words": ENTRY_WORDS,
    "record_words": RECORD_WORDS,
    "header_words": HEADER_WORDS,
    "broadcast_words": BROADCAST_WORDS,
}


def bucket_of(weight: int, lightest: int, epsilon: float) -> int:
    """
    Index k with lightest·(1+ε)^k ≤ weight < lightest·(1+ε)^(k+1).

    Example:
        >>> [bucket_of(w, 1000, 0.1) for w in (1000, 1050, 3000)]
        [0, 0, 11]
    """
    base = 1.0 + epsilon
    k = max(0, math.floor(math.log(weight / lightest) / math.log(base)))
    while lightest * base ** (k + 1) <= weight:
        k += 1
    while k > 0 and lightest * base ** k > weight:
        k -= 1
    return k


def _path_max(comp: int, ax: int, ay: int, machine: Machine) -> Optional[Payload]:
    """Heaviest tree edge held here on the path between two anchors of ``comp``."""
    store = machine.store
    best = None
    for key in store:
        if key[0] != ADJ or store[(HDR, key[1])][0] != comp:
            continue
        for entry in store[key]:
            # Child copies carry an even first entry.
            if not entry.lo or entry.lo % 2:
                continue
            if (entry.lo <= ax <= entry.hi) == (entry.lo <= ay <= entry.hi):
                continue
            candidate = (entry.weight,) + canonical_edge(key[1], entry.nbr)
            if best is None or candidate > best:
                best = candidate
    return best


class DynamicMST(DynamicConnectivity):
    """
    Minimum spanning forest under weighted insertions and deletions.

    Example:
        >>> from dmpc.models import SimConfig
        >>> from dmpc.runtime import Runtime
        >>> mst = DynamicMST(Runtime(SimConfig.for_graph(3, 3, **SIZING)))
        >>> mst.preprocess([])
        0
        >>> mst.insert(0, 1, 5), mst.insert(1, 2, 2), mst.insert(0, 2, 1)
        (True, True, True)
        >>> mst.last_swap, mst.forest_weight()
        ((0, 1), 3)
    """

    entry_words = ENTRY_WORDS
    weighted = True

    def __init__(self, runtime: Runtime):
        super().__init__(runtime)
        self.last_swap: Optional[Tuple[int, int]] = None

    def insert(self, x: int, y: int, weight: Optional[int] = None) -> bool:
        """
        Insert edge (x, y) of fixed-point ``weight``.

        Returns:
            True when the edge is in the forest afterwards.

        Raises:
            NonPositiveWeight, SelfLoop, UnknownVertex, DuplicateEdge
        """
        if weight is None or weight <= 0:
            raise NonPositiveWeight(f"edge ({x}, {y}) needs a positive weight, got {weight}")
        self.last_swap = None
        return super().insert(x, y, weight)

    def _close_cycle(self, x: int, y: int, weight: Optional[int]) -> Dict[int, Tuple[int, int]]:
        heaviest = self.path_max(x, y)
        if heaviest is None or not weight < heaviest[0]:
            return super()._close_cycle(x, y, weight)
        u, v = heaviest[1], heaviest[2]
        self.placement.load([u, v])
        copies = self._detach(u, v, remove=False)
        self._cut(u, v, copies)
        self.last_swap = (u, v)
        logger.debug("edge (%d, %d) of weight %d replaces (%d, %d)", x, y, weight, u, v)
        return self._link(x, y)

    def path_max(self, x: int, y: int) -> Optional[Tuple[int, int, int]]:
        """
        ``(weight, u, v)`` of the heaviest tree edge between loaded x and y (2 rounds).

        Both endpoints must share a component.
        """
        comp = self._comp(x)
        ax, ay = self._anchor(x), self._anchor(y)
        self.rt.broadcast(COORDINATOR, ("P", comp, ax, ay), kind="mst:path")
        found = self.rt.collect(COORDINATOR, partial(_path_max, comp, ax, ay), "mst:path-max")
        return max(found.values(), default=None)

    def preprocess(self, edges: Iterable[Tuple[int, ...]], epsilon: float = 0.1) -> int:
        """
        Load a weighted graph and build a forest within 1+ε of the minimum.

        Returns:
            Contraction iterations run over all buckets.

        Raises:
            NonPositiveEpsilon, NonPositiveWeight, SelfLoop
        """
        if not epsilon > 0:
            raise NonPositiveEpsilon(f"epsilon must be positive, got {epsilon}")
        edges = list(edges)
        for edge in edges:
            if len(edge) < 3 or edge[2] is None or edge[2] <= 0:
                raise NonPositiveWeight(f"edge {tuple(edge[:2])} needs a positive weight")
        self._bulk_load(edges)
        if not edges:
            self.preprocess_iterations = 0
            return 0
        lightest = min(edge[2] for edge in edges)
        buckets = sorted({bucket_of(edge[2], lightest, epsilon) for edge in edges})
        iterations = 0
        for k in buckets:
            accept = partial(_in_bucket, lightest, epsilon, k)
            iterations += self._contract(accept)
        logger.info("weighted preprocessing: %d buckets, %d iterations", len(buckets), iterations)
        self.preprocess_iterations = iterations
        return iterations

    def forest_weight(self) -> int:
        return sum(weight or 0 for weight in self.forest_edges().values())


def _in_bucket(lightest: int, epsilon: float, k: int, weight: int) -> bool:
    return bucket_of(weight, lightest, epsilon) == k
