"""
dmpc/runtime.py - Synchronous MPC Substrate

This module simulates μ machines with hard word caps exchanging messages in
synchronous rounds, and measures every round: active machines, messages and
communicated words.

Round contract:
    1. Every participating machine runs its local step against its inbox and
       store; steps run in ascending machine ID (or concurrently on a thread
       pool, with results merged in machine-ID order).
    2. Inboxes are cleared; the emitted envelopes are checked against the
       send and receive caps (BandwidthExceeded).
    3. Envelopes are delivered sorted by sender ID, so the emission order of
       different machines never matters.
    4. Every store written during the round is checked against S
       (MemoryCapExceeded) and the RoundMetrics are recorded.

Helpers built on the contract:
    exchange       one round of precomputed envelopes
    exchange_bulk  the same envelopes split over as many rounds as the caps need
    rpc            request then reply (two rounds)
    relay          request, then receivers forward results to any machine
    cast           one-way request, handled on arrival
    broadcast      one payload to every other machine in one round
    collect        every machine may send one payload to a single machine
"""

from __future__ import annotations

import bisect
import logging
from collections import Counter, defaultdict
from collections.abc import MutableMapping
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import (
    Any,
    Callable,
    Dict,
    Hashable,
    Iterable,
    Iterator,
    List,
    Mapping,
    Optional,
    Sequence,
    Set,
    Tuple,
)

import numpy as np

from .errors import (
    BandwidthExceeded,
    EmptyPayload,
    InvariantViolation,
    MemoryCapExceeded,
    NoCommunication,
)
from .models import COORDINATOR, MessageEnvelope, RoundMetrics, SimConfig, UpdateMetrics
from .utils import count_words

logger = logging.getLogger(__name__)

Payload = Tuple[Any, ...]
Handler = Callable[["Machine", Payload], Optional[Payload]]


class Store(MutableMapping):
    """
    Word-addressable key/value region of one machine.

    Keys are addresses and cost nothing; values are immutable and their words
    are counted on every assignment, so ``words`` is always current. Every
    write reports the owning machine to ``on_write`` so the runtime only
    checks stores that changed.
    """

    __slots__ = ("machine_id", "_data", "_words", "_on_write")

    def __init__(self, machine_id: int, on_write: Optional[Callable[[int], None]] = None):
        self.machine_id = machine_id
        self._data: Dict[Hashable, Any] = {}
        self._words = 0
        self._on_write = on_write

    @property
    def words(self) -> int:
        return self._words

    def __getitem__(self, key: Hashable) -> Any:
        return self._data[key]

    def __setitem__(self, key: Hashable, value: Any) -> None:
        old = self._data.get(key)
        self._words += count_words(value) - count_words(old)
        self._data[key] = value
        if self._on_write is not None:
            self._on_write(self.machine_id)

    def __delitem__(self, key: Hashable) -> None:
        old = self._data.pop(key)
        self._words -= count_words(old)
        if self._on_write is not None:
            self._on_write(self.machine_id)

    def __iter__(self) -> Iterator[Hashable]:
        return iter(self._data)

    def __len__(self) -> int:
        return len(self._data)

    def __contains__(self, key: object) -> bool:
        return key in self._data


@dataclass
class Machine:
    """One simulated machine: its store and the inbox of the current round."""

    id: int
    store: Store
    inbox: List[MessageEnvelope] = field(default_factory=list)


class Runtime:
    """
    The simulated cluster.

    Args:
        config: Cluster parameters.
        workers: Run machine steps on a thread pool of this size when > 1.
        keep_rounds: Keep every RoundMetrics of the run (needed for
                     comm_entropy over the whole run).

    Example:
        >>> rt = Runtime(SimConfig(capacity_N=1024, machine_memory_S=1024, machine_count_mu=64))
        >>> rt.broadcast(0, (1, 2, 3, 4, 5, 6))
        63
        >>> rt.metrics_snapshot(1).total_comm
        378
    """

    def __init__(self, config: SimConfig, *, workers: int = 0, keep_rounds: bool = True):
        self.config = config
        self._dirty: Set[int] = set()
        self.machines: List[Machine] = [
            Machine(mid, Store(mid, self._dirty.add)) for mid in range(config.mu)
        ]
        self._inboxed: Set[int] = set()
        self._pending: List[RoundMetrics] = []
        self.rounds_log: List[RoundMetrics] = []
        self.updates_log: List[UpdateMetrics] = []
        self.round_count = 0
        self._ever_used: Set[int] = set()
        self._keep_rounds = keep_rounds
        self._executor = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None

    # -- lifecycle ---------------------------------------------------------

    def close(self) -> None:
        if self._executor is not None:
            self._executor.shutdown(wait=True)
            self._executor = None

    def __enter__(self) -> Runtime:
        return self

    def __exit__(self, *exc: Any) -> None:
        self.close()

    def machine(self, mid: int) -> Machine:
        return self.machines[mid]

    def store(self, mid: int) -> Store:
        return self.machines[mid].store

    # -- the round ---------------------------------------------------------

    def run_round(
        self,
        step: Callable[[Machine], Optional[Iterable[MessageEnvelope]]],
        machines: Optional[Iterable[int]] = None,
    ) -> RoundMetrics:
        """
        Execute one synchronous round.

        Args:
            step: Local procedure; receives the machine and returns the
                  envelopes it emits (sender must be that machine).
            machines: Machines whose step runs. Defaults to every machine.

        Returns:
            The RoundMetrics of the round (also appended to the current
            update's accumulator).

        Raises:
            BandwidthExceeded: A machine sends or receives more than S words.
            MemoryCapExceeded: A store exceeds S words at the round end.
        """
        ids = sorted(set(machines)) if machines is not None else range(self.config.mu)
        if self._executor is not None and len(ids) > 1:
            results = list(self._executor.map(lambda mid: step(self.machines[mid]), ids))
        else:
            results = [step(self.machines[mid]) for mid in ids]

        outgoing: List[MessageEnvelope] = []
        for mid, emitted in zip(ids, results):
            for env in emitted or ():
                if env.sender != mid:
                    raise InvariantViolation(f"step emitted an envelope for sender {env.sender}", mid)
                outgoing.append(env)

        for mid in self._inboxed:
            self.machines[mid].inbox.clear()
        self._inboxed.clear()
        return self._deliver(outgoing)

    def _deliver(self, outgoing: List[MessageEnvelope]) -> RoundMetrics:
        cap = self.config.S
        sent: Counter = Counter()
        received: Counter = Counter()
        per_pair: Dict[Tuple[int, int], int] = defaultdict(int)
        messages = 0
        for env in outgoing:
            words = env.words
            if words < 1:
                raise EmptyPayload(f"{env.kind} from machine {env.sender} carries no words")
            if env.is_self_note:
                continue
            sent[env.sender] += words
            received[env.receiver] += words
            per_pair[(env.sender, env.receiver)] += words
            messages += 1
        for mid in sorted(sent):
            if sent[mid] > cap:
                raise BandwidthExceeded(mid, sent[mid], cap, "sent")
        for mid in sorted(received):
            if received[mid] > cap:
                raise BandwidthExceeded(mid, received[mid], cap, "received")

        # Stable: each sender keeps its own emission order.
        for env in sorted(outgoing, key=lambda e: e.sender):
            self.machines[env.receiver].inbox.append(env)
            self._inboxed.add(env.receiver)

        self.check_memory()

        active = set(sent) | set(received)
        self._ever_used |= active
        metrics = RoundMetrics(
            round_index=self.round_count,
            active_machines=len(active),
            messages=messages,
            comm_words=sum(per_pair.values()),
            per_pair_words=dict(per_pair),
            cap_words=cap * self.config.mu,
        )
        self.round_count += 1
        self._pending.append(metrics)
        if self._keep_rounds:
            self.rounds_log.append(metrics)
        logger.debug(
            "round %d: active=%d messages=%d comm=%d",
            metrics.round_index, metrics.active_machines, metrics.messages, metrics.comm_words,
        )
        return metrics

    def check_memory(self) -> None:
        """Check every store written since the last check against S."""
        cap = self.config.S
        dirty = sorted(self._dirty)
        self._dirty.clear()
        for mid in dirty:
            words = self.machines[mid].store.words
            if words > cap:
                raise MemoryCapExceeded(mid, words, cap)

    # -- helpers -----------------------------------------------------------

    def exchange(self, envelopes: Sequence[MessageEnvelope]) -> Dict[int, List[MessageEnvelope]]:
        """
        Run one round delivering exactly ``envelopes``.

        Returns:
            The delivered messages per receiver. No round is run (and nothing
            is counted) when there is nothing to send.
        """
        if not envelopes:
            return {}
        by_sender: Dict[int, List[MessageEnvelope]] = defaultdict(list)
        for env in envelopes:
            by_sender[env.sender].append(env)
        self.run_round(lambda machine: by_sender.get(machine.id, ()), by_sender.keys())
        delivered: Dict[int, List[MessageEnvelope]] = defaultdict(list)
        for env in envelopes:
            delivered[env.receiver].append(env)
        return {mid: sorted(envs, key=lambda e: e.sender) for mid, envs in delivered.items()}

    def exchange_bulk(self, envelopes: Sequence[MessageEnvelope]) -> Dict[int, List[MessageEnvelope]]:
        """
        Deliver ``envelopes`` over as few rounds as the caps allow.

        Envelopes are packed greedily, in the given order, into rounds in
        which no machine sends or receives more than S words. A single
        envelope above S raises BandwidthExceeded.
        """
        cap = self.config.S
        delivered: Dict[int, List[MessageEnvelope]] = defaultdict(list)
        pending = list(envelopes)
        while pending:
            wave: List[MessageEnvelope] = []
            rest: List[MessageEnvelope] = []
            sent: Counter = Counter()
            received: Counter = Counter()
            for env in pending:
                if env.is_self_note:
                    wave.append(env)
                    continue
                words = env.words
                if words > cap:
                    raise BandwidthExceeded(env.sender, words, cap, "sent")
                if sent[env.sender] + words <= cap and received[env.receiver] + words <= cap:
                    sent[env.sender] += words
                    received[env.receiver] += words
                    wave.append(env)
                else:
                    rest.append(env)
            for mid, envs in self.exchange(wave).items():
                delivered[mid].extend(envs)
            pending = rest
        return dict(delivered)

    def _handle(
        self, delivered: Mapping[int, List[MessageEnvelope]], handler: Handler
    ) -> List[Tuple[MessageEnvelope, Optional[Payload]]]:
        """Run ``handler`` on every delivered envelope at its receiver."""
        jobs = [(mid, env) for mid in sorted(delivered) for env in delivered[mid]]
        if self._executor is not None and len(delivered) > 1:
            per_machine: Dict[int, List[MessageEnvelope]] = {
                mid: delivered[mid] for mid in sorted(delivered)
            }

            def run(mid: int) -> List[Optional[Payload]]:
                machine = self.machines[mid]
                return [handler(machine, env.payload) for env in per_machine[mid]]

            outputs = list(self._executor.map(run, per_machine.keys()))
            flat = [out for outs in outputs for out in outs]
            return [(env, out) for (_, env), out in zip(jobs, flat)]
        return [(env, handler(self.machines[mid], env.payload)) for mid, env in jobs]

    def rpc(
        self,
        source: int,
        calls: Sequence[Tuple[int, Payload]],
        handler: Handler,
        kind: str,
    ) -> Dict[int, Payload]:
        """
        Send each ``(receiver, payload)`` call and collect one reply per receiver.

        The handler runs at the receiver and returns the reply payload, or
        None for no reply. Calls to ``source`` itself are self-notes and cost
        nothing. Each receiver should get at most one call.

        Returns:
            Reply payload per receiver that answered.
        """

        def reply(machine: Machine, payload: Payload) -> List[Tuple[int, Payload]]:
            out = handler(machine, payload)
            return [] if out is None else [(source, out)]

        arrived = self.relay(source, calls, reply, kind)
        return dict(arrived.get(source, []))

    def relay(
        self,
        source: int,
        calls: Sequence[Tuple[int, Payload]],
        handler: Callable[[Machine, Payload], Iterable[Tuple[int, Payload]]],
        kind: str,
        on_arrival: Optional[Handler] = None,
    ) -> Dict[int, List[Tuple[int, Payload]]]:
        """
        Request, then let every receiver pass results on to any machine.

        Round one delivers the calls. The handler returns ``(destination,
        payload)`` pairs, which round two delivers; ``on_arrival`` then runs
        at every destination other than ``source``.

        Returns:
            For each destination, the ``(sender, payload)`` pairs it got.
        """
        requests = [MessageEnvelope(source, dst, kind, payload) for dst, payload in calls]
        delivered = self.exchange_bulk(requests)
        forwards = [
            MessageEnvelope(env.receiver, dst, kind + ":reply", payload)
            for env, out in self._handle(delivered, handler)
            for dst, payload in (out or ())
        ]
        arrived = self.exchange_bulk(forwards)
        if on_arrival is not None:
            self._handle({mid: envs for mid, envs in arrived.items() if mid != source}, on_arrival)
        return {mid: [(env.sender, env.payload) for env in envs] for mid, envs in arrived.items()}

    def cast(
        self,
        source: int,
        calls: Sequence[Tuple[int, Payload]],
        handler: Handler,
        kind: str,
    ) -> None:
        """One-way version of rpc: the handler runs on arrival, nothing returns."""
        requests = [MessageEnvelope(source, dst, kind, payload) for dst, payload in calls]
        delivered = self.exchange_bulk(requests)
        self._handle(delivered, handler)

    def broadcast(
        self,
        source: int,
        payload: Payload,
        handler: Optional[Handler] = None,
        kind: str = "broadcast",
    ) -> int:
        """
        Deliver ``payload`` to every other machine in one round.

        The handler, if given, then runs on every machine including the
        source (locally, at no cost).

        Returns:
            The number of receivers (μ − 1).

        Raises:
            EmptyPayload: The payload carries no words.
            BandwidthExceeded: |payload|·(μ−1) exceeds S.
        """
        if count_words(payload) < 1:
            raise EmptyPayload("broadcast payload carries no words")
        envelopes = [
            MessageEnvelope(source, dst, kind, payload)
            for dst in range(self.config.mu)
            if dst != source
        ]
        delivered = self.exchange(envelopes)
        if handler is not None:
            delivered[source] = [MessageEnvelope(source, source, kind, payload)]
            self._handle(delivered, handler)
        return len(envelopes)

    def collect(
        self,
        target: int,
        handler: Callable[[Machine], Optional[Payload]],
        kind: str,
        machines: Optional[Iterable[int]] = None,
    ) -> Dict[int, Payload]:
        """
        Let machines report to ``target``.

        Every machine in ``machines`` (default: all) evaluates the handler
        against its own store; non-None results are sent to ``target``. The
        target's own result is included at no cost.
        """
        ids = sorted(set(machines)) if machines is not None else range(self.config.mu)
        if self._executor is not None:
            results = list(self._executor.map(lambda mid: handler(self.machines[mid]), ids))
        else:
            results = [handler(self.machines[mid]) for mid in ids]
        envelopes = [
            MessageEnvelope(mid, target, kind, out)
            for mid, out in zip(ids, results)
            if out is not None
        ]
        answered = self.exchange_bulk(envelopes).get(target, [])
        return {env.sender: env.payload for env in answered}

    # -- sorting -----------------------------------------------------------

    def distributed_sort(
        self,
        key: Hashable,
        holders: Sequence[int],
        targets: Sequence[int],
        collector: int = COORDINATOR,
    ) -> Dict[int, Tuple[Tuple[int, ...], ...]]:
        """
        Sample sort of the key tuples stored under ``key`` on ``holders``.

        Afterwards target i (in the given order) stores under ``key`` a
        sorted block and every key of target i precedes every key of target
        i+1. The round count is fixed by the cluster shape, not by the data:
        one sampling round, the splitter dissemination (one round unless the
        splitter list must be relayed), and one scatter round.

        Returns:
            The block placed on each target.

        Raises:
            MemoryCapExceeded: A target block exceeds S words.
        """
        cap = self.config.S
        holders = sorted(set(holders))
        targets = list(targets)
        q = len(targets)
        local: Dict[int, List[Tuple[int, ...]]] = {
            mid: sorted(self.machines[mid].store.get(key, ())) for mid in holders
        }
        width = max((len(keys[0]) for keys in local.values() if keys), default=1)

        # Round 1: regular samples to the collector.
        per_holder = max(1, (cap // width) // max(1, len(holders)))
        samples: List[Tuple[Any, ...]] = []
        envelopes = []
        for mid in holders:
            keys = local[mid]
            if not keys:
                continue
            count = min(len(keys), per_holder)
            picks = np.linspace(0, len(keys) - 1, num=count).round().astype(int)
            envelopes.append(MessageEnvelope(mid, collector, "sort:sample", tuple(keys[i] for i in picks)))
        self.exchange(envelopes)
        for env in envelopes:
            samples.extend(env.payload)
        samples.sort()

        # Splitters: q - 1 evenly spaced samples.
        splitters: List[Tuple[int, ...]] = []
        if samples and q > 1:
            positions = [(i * len(samples)) // q for i in range(1, q)]
            splitters = [samples[p] for p in positions]
        self._disseminate(collector, tuple(splitters) or ((0,),), holders, "sort:splitters")

        # Scatter: each holder sends bucket i to target i.
        buckets: Dict[int, List[Tuple[int, ...]]] = defaultdict(list)
        envelopes = []
        for mid in holders:
            keys = local[mid]
            if key in self.machines[mid].store:
                del self.machines[mid].store[key]
            start = 0
            for index, dst in enumerate(targets):
                # Keys equal to a splitter go to the right-hand bucket.
                if index < len(splitters):
                    stop = bisect.bisect_left(keys, splitters[index], start)
                else:
                    stop = len(keys)
                chunk = tuple(keys[start:stop])
                start = stop
                if chunk:
                    envelopes.append(MessageEnvelope(mid, dst, "sort:bucket", chunk))
        for dst, envs in self.exchange(envelopes).items():
            for env in envs:
                buckets[dst].extend(env.payload)
        placed: Dict[int, Tuple[Tuple[int, ...], ...]] = {}
        for dst in targets:
            block = tuple(sorted(buckets.get(dst, ())))
            placed[dst] = block
            if block:
                self.machines[dst].store[key] = block
        self.check_memory()
        return placed

    def _disseminate(self, source: int, payload: Payload, receivers: Sequence[int], kind: str) -> int:
        """
        Spread ``payload`` from ``source`` to ``receivers``.

        Every machine that already holds the payload forwards it to as many
        new machines as its send cap allows, so the number of rounds grows
        with the logarithm of the receiver count in base (S / |payload|) + 1.
        """
        words = max(1, count_words(payload))
        fanout = max(1, self.config.S // words)
        holding = [source]
        waiting = [mid for mid in receivers if mid != source]
        rounds = 0
        while waiting:
            envelopes = []
            for sender in list(holding):
                take, waiting = waiting[:fanout], waiting[fanout:]
                envelopes.extend(MessageEnvelope(sender, dst, kind, payload) for dst in take)
                holding.extend(take)
                if not waiting:
                    break
            self.exchange(envelopes)
            rounds += 1
        return rounds

    # -- metrics -----------------------------------------------------------

    def metrics_snapshot(self, update_index: int, op: str = "") -> UpdateMetrics:
        """
        Close the current update: check memory, aggregate its rounds, reset.

        Returns:
            The UpdateMetrics of the update (also appended to updates_log).
        """
        self.check_memory()
        rounds = self._pending
        self._pending = []
        snapshot = UpdateMetrics(
            update_index=update_index,
            op=op,
            rounds=len(rounds),
            max_active_per_round=max((r.active_machines for r in rounds), default=0),
            max_comm_per_round=max((r.comm_words for r in rounds), default=0),
            total_comm=sum(r.comm_words for r in rounds),
            machines_ever_used=len(self._ever_used),
        )
        self.updates_log.append(snapshot)
        return snapshot

    @property
    def pending_rounds(self) -> List[RoundMetrics]:
        """Rounds of the update in progress."""
        return list(self._pending)


def comm_entropy(window: Sequence[RoundMetrics]) -> float:
    """
    Entropy, in bits, of the communication distribution over machine pairs.

    Words are summed per (sender, receiver) across the window and normalised;
    zero entries are skipped.

    Raises:
        NoCommunication: The window communicated nothing.

    Example:
        >>> round(comm_entropy([RoundMetrics(0, per_pair_words={(0, 1): 3, (0, 2): 1})]), 4)
        0.8113
    """
    totals: Dict[Tuple[int, int], int] = defaultdict(int)
    for metrics in window:
        for pair, words in metrics.per_pair_words.items():
            totals[pair] += words
    counts = np.array([w for w in totals.values() if w > 0], dtype=float)
    if counts.size == 0 or counts.sum() == 0:
        raise NoCommunication("no words were communicated in the window")
    probs = counts / counts.sum()
    return float(-(probs * np.log2(probs)).sum())
