"""
dmpc/seqsim.py - Running Sequential Dynamic Algorithms on the Cluster

One machine (the compute machine, machine 0) runs a sequential algorithm
step by step; the other machines act as its main memory. The memory is a
word array split into contiguous intervals, one interval per storage
machine, and the interval table lives on the compute machine. Every word
the algorithm touches costs one access of two rounds with two active
machines:

    read     mem-read (address)          ->  mem-reply (value)
    write    mem-write (address, value)  ->  mem-ack (address)

so an update with k accesses takes exactly 2k rounds.

Lists use the pointer scheme: a cell holding an address is just a word, and
the value 0 means "none", so a freshly allocated region reads as empty.

LocalMemory offers the same interface without a cluster; running an
algorithm against both must give the same answers.
"""

from __future__ import annotations

import bisect
import logging
import math
from abc import ABC, abstractmethod
from typing import Dict, Final, Iterable, List, NamedTuple, Optional, Tuple

from .errors import ConfigError, MachinePoolExhausted, SelfLoop, UnallocatedAddress
from .models import COORDINATOR, FREE, MessageEnvelope, Op, UpdateMetrics
from .runtime import Runtime, Store

logger = logging.getLogger(__name__)

CELL = "cell"

# Extra rounds allowed per update on top of two per access.
SEQ_ROUND_SLACK: Final[int] = 8


class Memory(ABC):
    """Word-addressed memory seen by a sequential algorithm."""

    def __init__(self) -> None:
        self.size = 0
        self.accesses = 0

    def allocate(self, count: int) -> int:
        """Reserve ``count`` consecutive words; returns the first address."""
        base = self.size
        if base + count > self.capacity:
            raise MachinePoolExhausted(f"memory holds {self.capacity} words, {base + count} requested")
        self.size += count
        return base

    def _check(self, address: int) -> None:
        if not 0 <= address < self.size:
            raise UnallocatedAddress(address)

    @property
    @abstractmethod
    def capacity(self) -> int: ...

    @abstractmethod
    def read(self, address: int) -> int: ...

    @abstractmethod
    def write(self, address: int, value: int) -> None: ...

    @abstractmethod
    def peek(self, address: int) -> int:
        """Read without counting an access (inspection only)."""


class LocalMemory(Memory):
    """A plain in-process word array."""

    def __init__(self, capacity: int):
        super().__init__()
        self._capacity = capacity
        self._cells: Dict[int, int] = {}

    @property
    def capacity(self) -> int:
        return self._capacity

    def read(self, address: int) -> int:
        self._check(address)
        self.accesses += 1
        return self._cells.get(address, 0)

    def write(self, address: int, value: int) -> None:
        self._check(address)
        self.accesses += 1
        self._cells[address] = value

    def peek(self, address: int) -> int:
        self._check(address)
        return self._cells.get(address, 0)


class AbstractMemory(Memory):
    """
    Memory spread over storage machines in intervals of at most S words.

    Example:
        >>> from dmpc.models import SimConfig
        >>> rt = Runtime(SimConfig(capacity_N=1024, machine_memory_S=1024, machine_count_mu=64))
        >>> mem = AbstractMemory(rt, 100)
        >>> mem.allocate(50)
        0
        >>> mem.write(42, 7)
        >>> mem.read(42)
        7
    """

    def __init__(self, runtime: Runtime, capacity: int, *, compute: int = COORDINATOR):
        super().__init__()
        self.rt = runtime
        self.compute = compute
        S = runtime.config.S
        needed = max(1, math.ceil(capacity / S))
        storage = [mid for mid in range(runtime.config.mu) if mid != compute]
        if needed > len(storage):
            raise ConfigError(f"{capacity} words need {needed} storage machines, only {len(storage)} exist")
        self._capacity = capacity
        self._starts = [i * S for i in range(needed)]
        self._machines = storage[:needed]
        self.local[("intervals",)] = tuple(zip(self._starts, self._machines))
        logger.info("memory of %d words on %d storage machines", capacity, needed)

    @property
    def capacity(self) -> int:
        return self._capacity

    @property
    def local(self) -> Store:
        """Scratch space of the compute machine, held to S words like any store."""
        return self.rt.store(self.compute)

    def machine_of(self, address: int) -> int:
        """The storage machine whose interval contains ``address``."""
        self._check(address)
        return self._machines[bisect.bisect_right(self._starts, address) - 1]

    def read(self, address: int) -> int:
        mid = self.machine_of(address)
        self.accesses += 1
        self.rt.exchange([MessageEnvelope(self.compute, mid, "mem-read", (address,))])
        value = self.rt.store(mid).get((CELL, address), 0)
        self.rt.exchange([MessageEnvelope(mid, self.compute, "mem-reply", (value,))])
        return value

    def write(self, address: int, value: int) -> None:
        mid = self.machine_of(address)
        self.accesses += 1
        self.rt.exchange([MessageEnvelope(self.compute, mid, "mem-write", (address, value))])
        store = self.rt.store(mid)
        if value:
            store[(CELL, address)] = value
        else:
            store.pop((CELL, address), None)
        self.rt.exchange([MessageEnvelope(mid, self.compute, "mem-ack", (address,))])

    def peek(self, address: int) -> int:
        return self.rt.store(self.machine_of(address)).get((CELL, address), 0)


class SequentialAlgorithm(ABC):
    """A dynamic algorithm that sees the world only through a Memory."""

    @abstractmethod
    def words_needed(self, n: int, m_max: int) -> int: ...

    @abstractmethod
    def setup(self, memory: Memory, n: int, m_max: int) -> None:
        """Allocate the memory layout; must not touch any cell."""

    @abstractmethod
    def update(self, memory: Memory, op: Op, u: int, v: int) -> Dict[int, int]:
        """Apply one update; returns the solution changes."""

    def preprocess(self, memory: Memory, edges: Iterable[Tuple[int, int]]) -> None:
        for u, v in edges:
            self.update(memory, Op.INSERT, u, v)


class ScanMatching(SequentialAlgorithm):
    """
    Maximal matching by scanning adjacency lists.

    Memory layout (all pointers stored +1 so that 0 means none):
        mate[v]      mate of v plus one, 0 when free
        head[v]      first list node of v
        node[i]      two words: neighbour, next node
        free, top    recycled-node stack and first never-used node

    Inserting is O(1) accesses; deleting scans the endpoints' lists. The
    algorithm trusts its input: duplicate or missing edges are rejected by
    the caller.
    """

    def __init__(self) -> None:
        self.n = 0
        self.mate_base = self.head_base = self.node_base = self.free_cell = self.top_cell = 0

    def words_needed(self, n: int, m_max: int) -> int:
        return 2 * n + 4 * max(1, m_max) + 2

    def setup(self, memory: Memory, n: int, m_max: int) -> None:
        self.n = n
        self.mate_base = memory.allocate(n)
        self.head_base = memory.allocate(n)
        self.free_cell = memory.allocate(1)
        self.top_cell = memory.allocate(1)
        self.node_base = memory.allocate(4 * max(1, m_max))

    # -- list handling -----------------------------------------------------

    def _node(self, pointer: int) -> int:
        return self.node_base + 2 * (pointer - 1)

    def _new_node(self, memory: Memory) -> int:
        pointer = memory.read(self.free_cell)
        if pointer:
            memory.write(self.free_cell, memory.read(self._node(pointer) + 1))
            return pointer
        pointer = memory.read(self.top_cell) + 1
        memory.write(self.top_cell, pointer)
        return pointer

    def _push(self, memory: Memory, owner: int, nbr: int) -> None:
        pointer = self._new_node(memory)
        node = self._node(pointer)
        memory.write(node, nbr + 1)
        memory.write(node + 1, memory.read(self.head_base + owner))
        memory.write(self.head_base + owner, pointer)

    def _unlink(self, memory: Memory, owner: int, nbr: int) -> None:
        previous = self.head_base + owner
        pointer = memory.read(previous)
        while pointer:
            node = self._node(pointer)
            following = memory.read(node + 1)
            if memory.read(node) == nbr + 1:
                memory.write(previous, following)
                memory.write(node + 1, memory.read(self.free_cell))
                memory.write(self.free_cell, pointer)
                return
            previous, pointer = node + 1, following

    def _free_neighbour(self, memory: Memory, owner: int) -> Optional[int]:
        pointer = memory.read(self.head_base + owner)
        while pointer:
            node = self._node(pointer)
            nbr = memory.read(node) - 1
            if not memory.read(self.mate_base + nbr):
                return nbr
            pointer = memory.read(node + 1)
        return None

    # -- updates -----------------------------------------------------------

    def update(self, memory: Memory, op: Op, u: int, v: int) -> Dict[int, int]:
        if op == Op.QUERY:
            memory.read(self.mate_base + u)
            return {}
        if u == v:
            raise SelfLoop(u)
        changes: Dict[int, int] = {}
        if op == Op.INSERT:
            self._push(memory, u, v)
            self._push(memory, v, u)
            if not memory.read(self.mate_base + u) and not memory.read(self.mate_base + v):
                self._match(memory, u, v, changes)
            return changes

        self._unlink(memory, u, v)
        self._unlink(memory, v, u)
        if memory.read(self.mate_base + u) == v + 1:
            for z in (u, v):
                memory.write(self.mate_base + z, 0)
                changes[z] = FREE
            for z in (u, v):
                if memory.read(self.mate_base + z):
                    continue
                w = self._free_neighbour(memory, z)
                if w is not None:
                    self._match(memory, z, w, changes)
        return changes

    def _match(self, memory: Memory, a: int, b: int, changes: Dict[int, int]) -> None:
        memory.write(self.mate_base + a, b + 1)
        memory.write(self.mate_base + b, a + 1)
        changes[a], changes[b] = b, a

    def mates(self, memory: Memory) -> Dict[int, int]:
        found = {}
        for v in range(self.n):
            word = memory.peek(self.mate_base + v)
            if word:
                found[v] = word - 1
        return found


class SimulatedUpdate(NamedTuple):
    changes: Dict[int, int]
    accesses: int
    metrics: UpdateMetrics


class SequentialSimulator:
    """
    Drives a SequentialAlgorithm over an AbstractMemory on the cluster.

    Example:
        >>> from dmpc.models import SimConfig
        >>> sim = SequentialSimulator(Runtime(SimConfig.for_graph(4, 4)), ScanMatching())
        >>> sim.preprocess([])
        0
        >>> step = sim.simulate_update(Op.INSERT, 0, 1, 1)
        >>> step.changes, step.metrics.rounds == 2 * step.accesses
        ({0: 1, 1: 0}, True)
    """

    def __init__(self, runtime: Runtime, algorithm: SequentialAlgorithm):
        cfg = runtime.config
        self.rt = runtime
        self.algorithm = algorithm
        self.memory = AbstractMemory(runtime, algorithm.words_needed(cfg.n, cfg.m_max))
        algorithm.setup(self.memory, cfg.n, cfg.m_max)

    def preprocess(self, edges: Iterable[Tuple[int, int]]) -> int:
        """Insert the initial edges one by one; returns the accesses spent."""
        before = self.memory.accesses
        self.algorithm.preprocess(self.memory, edges)
        return self.memory.accesses - before

    def update(self, op: Op, u: int, v: int) -> Dict[int, int]:
        return self.algorithm.update(self.memory, op, u, v)

    def simulate_update(self, op: Op, u: int, v: int, update_index: int) -> SimulatedUpdate:
        """Run one update and close its metrics."""
        before = self.memory.accesses
        changes = self.update(op, u, v)
        accesses = self.memory.accesses - before
        metrics = self.rt.metrics_snapshot(update_index, op.symbol)
        logger.debug("update %d: %d accesses in %d rounds", update_index, accesses, metrics.rounds)
        return SimulatedUpdate(changes, accesses, metrics)


def direct_run(
    algorithm: SequentialAlgorithm,
    n: int,
    m_max: int,
    updates: Iterable[Tuple[Op, int, int]],
    preload: Iterable[Tuple[int, int]] = (),
) -> Tuple[List[Dict[int, int]], LocalMemory]:
    """Run the same callbacks on a LocalMemory; returns every update's changes."""
    memory = LocalMemory(algorithm.words_needed(n, m_max))
    algorithm.setup(memory, n, m_max)
    algorithm.preprocess(memory, preload)
    return [algorithm.update(memory, op, u, v) for op, u, v in updates], memory
