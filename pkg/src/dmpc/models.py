"""
dmpc/models.py - Data Models

Value types shared across the simulator: the configuration of one simulated
cluster, the message envelope, the per round and per update metrics, and the
records that live inside machine stores.

Design Decisions:
    - Values kept in machine stores are immutable tuples (NamedTuples), so a
      store can account words incrementally on assignment.
    - Optional fields default to None; None costs no words
      (see utils.count_words).
    - Metrics are mutable dataclasses with to_dict/from_dict helpers used by
      the CSV and JSON writers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Any, Dict, Final, NamedTuple, Optional, Tuple

from .errors import ConfigError
from .utils import DEFAULT_WEIGHT_SCALE, ceil_sqrt, count_words

# Machine 0 is the coordinator in every layout.
COORDINATOR: Final[int] = 0

# Lower bounds applied by SimConfig.for_graph on top of the √N rules.
MIN_MACHINE_WORDS: Final[int] = 64
MIN_EDGE_MACHINES: Final[int] = 6

# Words per directory entry and a generous bound for one history entry,
# used to size the coordinator.
DIRECTORY_ENTRY_WORDS: Final[int] = 5
HISTORY_ENTRY_WORDS: Final[int] = 12

# Marker cached in an edge copy when the neighbour is unmatched. It occupies
# one word so a copy's size does not change when its neighbour gets matched.
FREE: Final[int] = -1


class MachineKind(IntEnum):
    """Role of a machine in the coordinator's directory."""

    LIGHT = 1       # packs light adjacency blocks and heavy alive blocks
    HEAVY = 2       # suspended edges of exactly one heavy vertex
    SCRATCH = 3     # provisioned for a relocation that found no room
    RETIRED = 4     # merged away, forwards to another machine


class Op(IntEnum):
    INSERT = 1
    DELETE = 2
    QUERY = 3

    @property
    def symbol(self) -> str:
        return {Op.INSERT: "+", Op.DELETE: "-", Op.QUERY: "?"}[self]


@dataclass(frozen=True)
class SimConfig:
    """
    Parameters of one simulated DMPC cluster.

    Attributes:
        capacity_N: The input size N in words (n + m_max for graphs).
        machine_memory_S: Words each machine may store, send and receive.
        machine_count_mu: Number of machines μ.
        rng_seed: Seed of every random choice made by the simulator.
        c_s, c_m: Constants of the √N rules checked in __post_init__.
        n: Size of the vertex universe (IDs 0..n-1), 0 when not a graph run.
        m_max: Peak number of edges the run may hold.
        weight_scale: Fixed-point scale of edge weights.

    Example:
        >>> cfg = SimConfig(capacity_N=1024, machine_memory_S=1024, machine_count_mu=64)
        >>> cfg.history_cap
        32
    """

    capacity_N: int
    machine_memory_S: int
    machine_count_mu: int
    rng_seed: int = 0
    c_s: float = 8.0
    c_m: float = 2.0
    n: int = 0
    m_max: int = 0
    weight_scale: int = DEFAULT_WEIGHT_SCALE

    def __post_init__(self) -> None:
        if self.capacity_N < 1:
            raise ConfigError(f"capacity_N must be positive, got {self.capacity_N}")
        if self.c_s < 1 or self.c_m < 1:
            raise ConfigError("c_s and c_m must be at least 1")
        root = math.sqrt(self.capacity_N)
        if self.machine_memory_S < math.ceil(self.c_s * root):
            raise ConfigError(
                f"S = {self.machine_memory_S} is below ceil(c_s·√N) = {math.ceil(self.c_s * root)}"
            )
        if self.machine_count_mu < math.ceil(self.c_m * root):
            raise ConfigError(
                f"μ = {self.machine_count_mu} is below ceil(c_m·√N) = {math.ceil(self.c_m * root)}"
            )
        if self.machine_memory_S * self.machine_count_mu < self.capacity_N:
            raise ConfigError("S·μ must be at least N")
        if not 0 <= self.rng_seed < 2**64:
            raise ConfigError("rng_seed must fit in 64 bits")
        if self.n < 0 or self.m_max < 0:
            raise ConfigError("n and m_max must be non-negative")
        if self.n and self.stats_count + 1 >= self.machine_count_mu:
            raise ConfigError("no machines left for edge storage")

    @property
    def S(self) -> int:
        return self.machine_memory_S

    @property
    def mu(self) -> int:
        return self.machine_count_mu

    @property
    def history_cap(self) -> int:
        """H_max = ceil(√N)."""
        return ceil_sqrt(self.capacity_N)

    @property
    def tau(self) -> int:
        """Heavy threshold and alive-set size, ceil(√(2·m_max))."""
        return max(1, ceil_sqrt(2 * self.m_max))

    @property
    def stats_count(self) -> int:
        """Number of statistics machines, ceil(n / √N)."""
        if self.n == 0:
            return 0
        return max(1, math.ceil(self.n / math.sqrt(self.capacity_N)))

    @property
    def stats_range(self) -> int:
        """Vertices per statistics machine; the last one absorbs the remainder."""
        if self.n == 0:
            return 0
        return max(1, self.n // self.stats_count)

    @property
    def first_pool_machine(self) -> int:
        return 1 + self.stats_count

    def stats_machine_of(self, vertex: int) -> int:
        """The statistics machine holding the record of ``vertex``."""
        return 1 + min(vertex // self.stats_range, self.stats_count - 1)

    @classmethod
    def for_graph(
        cls,
        n: int,
        m_max: int,
        *,
        edge_words: int = 3,
        record_words: int = 4,
        header_words: int = 0,
        broadcast_words: int = 0,
        c_s: float = 8.0,
        c_m: float = 2.0,
        rng_seed: int = 0,
        weight_scale: int = DEFAULT_WEIGHT_SCALE,
    ) -> SimConfig:
        """
        Size a cluster for a graph run with N = n + m_max.

        S and μ start from the √N rules and are raised only as far as the
        placement needs: the coordinator must hold its directory and a full
        history window, the largest light block must fit twice in one
        machine, the edge copies must fit with 2x slack, and a broadcast of
        ``broadcast_words`` must stay under the send cap.

        Raises:
            ConfigError: If n < 1 or the derived values are inconsistent.
        """
        if n < 1:
            raise ConfigError("a graph run needs n >= 1")
        m_max = max(1, m_max)
        N = n + m_max
        root = math.sqrt(N)
        stats = max(1, math.ceil(n / root))
        mu = max(math.ceil(c_m * root), stats + 1 + MIN_EDGE_MACHINES)
        tau = max(1, ceil_sqrt(2 * m_max))
        history = ceil_sqrt(N)
        edge_total = 2 * m_max * edge_words + n * header_words
        edge_machines = mu - stats - 1
        stats_range = max(1, n // stats)
        S = max(
            math.ceil(c_s * root),
            MIN_MACHINE_WORDS,
            2 * (tau * edge_words + header_words) + 8,
            math.ceil(4 * edge_total / edge_machines),
            2 * stats_range * record_words + 8,
            DIRECTORY_ENTRY_WORDS * mu + HISTORY_ENTRY_WORDS * history + 16,
            broadcast_words * (mu - 1),
        )
        return cls(
            capacity_N=N,
            machine_memory_S=S,
            machine_count_mu=mu,
            rng_seed=rng_seed,
            c_s=c_s,
            c_m=c_m,
            n=n,
            m_max=m_max,
            weight_scale=weight_scale,
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "capacity_N": self.capacity_N,
            "machine_memory_S": self.machine_memory_S,
            "machine_count_mu": self.machine_count_mu,
            "rng_seed": self.rng_seed,
            "c_s": self.c_s,
            "c_m": self.c_m,
            "n": self.n,
            "m_max": self.m_max,
            "weight_scale": self.weight_scale,
        }


class MessageEnvelope(NamedTuple):
    """
    One message of one round.

    The payload is a tuple of words, possibly nested; its word count is what
    the bandwidth caps and the communication metrics see. A message to
    oneself is a self-note: it is delivered but costs nothing.
    """

    sender: int
    receiver: int
    kind: str
    payload: Tuple[Any, ...]

    @property
    def words(self) -> int:
        return count_words(self.payload)

    @property
    def is_self_note(self) -> bool:
        return self.sender == self.receiver


@dataclass
class RoundMetrics:
    """Cost of one synchronous round."""

    round_index: int
    active_machines: int = 0
    messages: int = 0
    comm_words: int = 0
    per_pair_words: Dict[Tuple[int, int], int] = field(default_factory=dict)
    cap_words: int = 0


@dataclass
class UpdateMetrics:
    """
    Cost of one update, aggregated from its rounds.

    Attributes:
        update_index: 0 for preprocessing, 1.. for stream updates.
        op: "+", "-", "?" or "preprocess".
        rounds: Rounds the update took.
        max_active_per_round: Largest active-machine count of a round.
        max_comm_per_round: Largest communication of a round, in words.
        total_comm: Communication summed over the update's rounds.
        machines_ever_used: Distinct machines active since the run started.
    """

    update_index: int
    op: str = ""
    rounds: int = 0
    max_active_per_round: int = 0
    max_comm_per_round: int = 0
    total_comm: int = 0
    machines_ever_used: int = 0

    CSV_COLUMNS = (
        "update_idx",
        "op",
        "rounds",
        "active_max",
        "comm_max_round",
        "comm_total",
        "machines_used",
    )

    def to_row(self) -> Tuple[Any, ...]:
        return (
            self.update_index,
            self.op,
            self.rounds,
            self.max_active_per_round,
            self.max_comm_per_round,
            self.total_comm,
            self.machines_ever_used,
        )

    def to_dict(self) -> Dict[str, Any]:
        return dict(zip(self.CSV_COLUMNS, self.to_row()))

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> UpdateMetrics:
        return cls(
            update_index=int(data.get("update_idx", 0)),
            op=str(data.get("op", "")),
            rounds=int(data.get("rounds", 0)),
            max_active_per_round=int(data.get("active_max", 0)),
            max_comm_per_round=int(data.get("comm_max_round", 0)),
            total_comm=int(data.get("comm_total", 0)),
            machines_ever_used=int(data.get("machines_used", 0)),
        )


class VertexRecord(NamedTuple):
    """
    Statistics of one vertex, kept on its statistics machine.

    Only the fields an algorithm uses are set; the others stay None and cost
    nothing. ``matched`` and ``heavy`` are derived: heavy means
    degree > τ, which the partition module re-establishes at every refresh.
    ``size`` is kept only on the record of a component's label vertex.
    """

    degree: int = 0
    mate: Optional[int] = None
    alive: Optional[int] = None
    suspended: Optional[int] = None
    free_nbrs: Optional[int] = None
    comp: Optional[int] = None
    anchor: Optional[int] = None
    size: Optional[int] = None

    @property
    def matched(self) -> bool:
        return self.mate is not None

    def is_heavy(self, tau: int) -> bool:
        return self.degree > tau


class AdjEntry(NamedTuple):
    """
    One stored copy of an edge, kept in the adjacency block of its owner.

    Attributes:
        nbr: The other endpoint.
        seq: Sequence number of the insertion that created the copy; a copy
             is stale once the history holds a deletion of the edge with a
             larger sequence number.
        mate: Cached mate of ``nbr`` (FREE when unmatched), matching runs.
        weight: Fixed-point weight, MST runs.
        lo, hi: The owner's two tour indexes for this edge, 0 when the edge
                is not a tree edge (connectivity runs).
        far_comp, far_anchor: Cached component and anchor of ``nbr``.
    """

    nbr: int
    seq: int
    mate: Optional[int] = None
    weight: Optional[int] = None
    lo: Optional[int] = None
    hi: Optional[int] = None
    far_comp: Optional[int] = None
    far_anchor: Optional[int] = None

    @property
    def is_tree(self) -> bool:
        return bool(self.lo)


class DirEntry(NamedTuple):
    """
    Coordinator directory entry of one edge machine.

    ``refreshed`` is the last history sequence number the machine has
    applied (for a retired machine: the sequence at which it retired).
    ``owner``/``below`` chain the suspended machines of a heavy vertex as a
    stack; ``below`` of a retired machine is its forwarding target.
    """

    kind: int
    free: int
    refreshed: int
    owner: Optional[int] = None
    below: Optional[int] = None


class HistoryEntry(NamedTuple):
    """
    One buffered update and the matching changes it triggered.

    ``acks`` packs one bit per endpoint: bit 0 for the smaller endpoint,
    bit 1 for the larger, set once that endpoint's copy reflects the update.
    ``changes`` lists ``(vertex, mate)`` pairs, mate FREE for unmatched.
    """

    op: int
    u: int
    v: int
    acks: int = 0
    changes: Tuple[Tuple[int, int], ...] = ()

    ALL_ACKED = 0b11
