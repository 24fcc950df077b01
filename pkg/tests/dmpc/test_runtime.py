# tests/dmpc/test_runtime.py
# Tests for the synchronous round substrate: caps, delivery, metrics, sorting

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dmpc.errors import BandwidthExceeded, ConfigError, EmptyPayload, MemoryCapExceeded, NoCommunication
from dmpc.models import MessageEnvelope, RoundMetrics, SimConfig
from dmpc.runtime import Runtime, Store, comm_entropy
from dmpc.utils import count_words


def envelope(sender, receiver, words, kind="t"):
    return MessageEnvelope(sender, receiver, kind, tuple(range(words)))


class TestSimConfig:
    def test_accepts_explicit_values(self):
        """Test explicit N = 1024, S = 1024, μ = 64 satisfy the √N rules."""
        cfg = SimConfig(capacity_N=1024, machine_memory_S=1024, machine_count_mu=64)
        assert cfg.S == 1024
        assert cfg.mu == 64
        assert cfg.history_cap == 32

    def test_rejects_small_memory(self):
        """Test S below ceil(c_s·√N) is refused."""
        with pytest.raises(ConfigError):
            SimConfig(capacity_N=1024, machine_memory_S=255, machine_count_mu=64)

    def test_rejects_few_machines(self):
        """Test μ below ceil(c_m·√N) is refused."""
        with pytest.raises(ConfigError):
            SimConfig(capacity_N=1024, machine_memory_S=1024, machine_count_mu=63)

    def test_for_graph_respects_rules(self):
        """Test derived sizing satisfies every invariant."""
        cfg = SimConfig.for_graph(200, 600)
        root = math.sqrt(cfg.capacity_N)
        assert cfg.capacity_N == 800
        assert cfg.S >= math.ceil(8 * root)
        assert cfg.mu >= math.ceil(2 * root)
        assert cfg.S * cfg.mu >= cfg.capacity_N
        assert cfg.first_pool_machine == 1 + cfg.stats_count

    def test_stats_machines_cover_all_vertices(self):
        """Test every vertex maps to a statistics machine in range."""
        cfg = SimConfig.for_graph(37, 50)
        owners = {cfg.stats_machine_of(v) for v in range(37)}
        assert owners == set(range(1, cfg.first_pool_machine))


class TestStore:
    def test_words_follow_writes(self):
        """Test the word count is updated on every write and delete."""
        store = Store(5)
        store["a"] = (1, 2, None)
        assert store.words == 2
        store["a"] = (1,)
        assert store.words == 1
        store["b"] = ((1, 2), 3)
        assert store.words == 4
        del store["a"]
        assert store.words == 3

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 5), st.one_of(st.none(), st.tuples(st.integers(), st.integers())))))
    def test_words_match_recount(self, writes):
        """Test incremental accounting equals a full recount."""
        store = Store(0)
        for key, value in writes:
            if value is None:
                store.pop(key, None)
            else:
                store[key] = value
        assert store.words == sum(count_words(v) for v in store.values())


class TestRunRound:
    def test_single_message(self, runtime):
        """Test one 3-word message activates two machines."""
        metrics = runtime.run_round(lambda m: [envelope(0, 1, 3)], machines=[0])
        assert metrics.active_machines == 2
        assert metrics.messages == 1
        assert metrics.comm_words == 3
        assert metrics.per_pair_words == {(0, 1): 3}

    def test_empty_round(self, runtime):
        """Test a round without messages."""
        metrics = runtime.run_round(lambda m: None)
        assert (metrics.active_machines, metrics.messages, metrics.comm_words) == (0, 0, 0)

    def test_inbox_sorted_by_sender(self, runtime):
        """Test delivery order does not depend on emission order."""
        runtime.run_round(lambda m: [envelope(m.id, 0, 1)], machines=[5, 3, 9])
        assert [env.sender for env in runtime.machine(0).inbox] == [3, 5, 9]

    def test_self_note_costs_nothing(self, runtime):
        """Test a message to oneself is delivered but not counted."""
        metrics = runtime.run_round(lambda m: [envelope(2, 2, 4)], machines=[2])
        assert metrics.comm_words == 0
        assert metrics.active_machines == 0
        assert len(runtime.machine(2).inbox) == 1

    def test_send_cap(self, runtime):
        """Test sending more than S words in a round fails."""
        with pytest.raises(BandwidthExceeded) as info:
            runtime.run_round(lambda m: [envelope(0, 1, 600), envelope(0, 2, 600)], machines=[0])
        assert info.value.machine_id == 0
        assert info.value.direction == "sent"

    def test_receive_cap(self, runtime):
        """Test receiving more than S words in a round fails."""
        with pytest.raises(BandwidthExceeded) as info:
            runtime.run_round(lambda m: [envelope(m.id, 7, 600)], machines=[1, 2])
        assert info.value.machine_id == 7
        assert info.value.direction == "received"

    def test_memory_cap(self, runtime):
        """Test a store above S words aborts at the round end."""
        runtime.store(4)["big"] = tuple(range(1025))
        with pytest.raises(MemoryCapExceeded) as info:
            runtime.run_round(lambda m: None)
        assert info.value.machine_id == 4

    def test_empty_payload(self, runtime):
        """Test a message must carry a word."""
        with pytest.raises(EmptyPayload):
            runtime.run_round(lambda m: [MessageEnvelope(0, 1, "t", ())], machines=[0])


class TestHelpers:
    def test_broadcast_counts(self, runtime):
        """Test a 6-word broadcast on μ = 64 costs 6·63 words."""
        assert runtime.broadcast(0, (1, 2, 3, 4, 5, 6)) == 63
        (metrics,) = runtime.pending_rounds
        assert metrics.comm_words == 378
        assert metrics.active_machines == 64

    def test_broadcast_32_machines(self):
        """Test a 5-word broadcast over 32 machines."""
        rt = Runtime(SimConfig(capacity_N=256, machine_memory_S=1024, machine_count_mu=32))
        rt.broadcast(3, (1, 2, 3, 4, 5))
        (metrics,) = rt.pending_rounds
        assert metrics.active_machines == 32
        assert metrics.comm_words == 5 * 31

    def test_broadcast_too_wide(self, runtime):
        """Test 20·63 > 1024 words is refused."""
        with pytest.raises(BandwidthExceeded):
            runtime.broadcast(0, tuple(range(20)))

    def test_broadcast_empty(self, runtime):
        """Test a broadcast needs at least one word."""
        with pytest.raises(EmptyPayload):
            runtime.broadcast(0, ())

    def test_broadcast_handler_runs_everywhere(self, runtime):
        """Test the handler runs on every machine, the source included."""
        seen = []
        runtime.broadcast(0, (9,), handler=lambda m, p: seen.append((m.id, p)))
        assert sorted(mid for mid, _ in seen) == list(range(64))

    def test_exchange_without_envelopes_runs_no_round(self, runtime):
        """Test nothing to send means no round."""
        assert runtime.exchange([]) == {}
        assert runtime.pending_rounds == []

    def test_exchange_bulk_splits_rounds(self, runtime):
        """Test envelopes over the send cap are spread over rounds."""
        delivered = runtime.exchange_bulk([envelope(0, r, 1000) for r in (1, 2, 3)])
        assert sorted(delivered) == [1, 2, 3]
        assert len(runtime.pending_rounds) == 3

    def test_exchange_bulk_single_oversized(self, runtime):
        """Test one envelope above S cannot be split."""
        with pytest.raises(BandwidthExceeded):
            runtime.exchange_bulk([envelope(0, 1, 1025)])

    def test_rpc_two_rounds(self, runtime):
        """Test request and reply take two rounds."""
        replies = runtime.rpc(0, [(1, (10,)), (2, (20,))], lambda m, p: (p[0] + m.id,), "ask")
        assert replies == {1: (11,), 2: (22,)}
        assert len(runtime.pending_rounds) == 2

    def test_collect(self, runtime):
        """Test only non-None answers travel."""
        found = runtime.collect(0, lambda m: (m.id,) if m.id % 20 == 1 else None, "report")
        assert found == {1: (1,), 21: (21,), 41: (41,), 61: (61,)}
        assert runtime.pending_rounds[0].active_machines == 5

    def test_parallel_executor_matches_sequential(self, cluster_config):
        """Test a thread pool gives the same results and metrics."""
        results = []
        for workers in (0, 4):
            with Runtime(cluster_config, workers=workers) as rt:
                found = rt.collect(0, lambda m: (m.id, m.id * 2) if m.id % 3 == 0 else None, "c")
                rt.broadcast(0, (1, 2), handler=lambda m, p: m.store.__setitem__("seen", p))
                snap = rt.metrics_snapshot(1)
                results.append((found, snap.to_row(), rt.store(17)["seen"]))
        assert results[0] == results[1]


class TestMetricsSnapshot:
    def test_aggregates_rounds(self, runtime):
        """Test rounds of 10, 40 and 10 words."""
        for words in (10, 40, 10):
            runtime.exchange([envelope(0, 1, words)])
        snap = runtime.metrics_snapshot(3, "+")
        assert snap.rounds == 3
        assert snap.total_comm == 60
        assert snap.max_comm_per_round == 40
        assert snap.max_active_per_round == 2
        assert snap.machines_ever_used == 2

    def test_active_maximum(self, runtime):
        """Test rounds with 2, 5 and 2 active machines."""
        runtime.exchange([envelope(0, 1, 1)])
        runtime.exchange([envelope(0, r, 1) for r in (1, 2, 3, 4)])
        runtime.exchange([envelope(0, 1, 1)])
        snap = runtime.metrics_snapshot(1)
        assert snap.rounds == 3
        assert snap.max_active_per_round == 5

    def test_empty_update(self, runtime):
        """Test an update without rounds."""
        snap = runtime.metrics_snapshot(1, "?")
        assert snap.rounds == 0
        assert snap.total_comm == 0

    def test_resets_accumulator(self, runtime):
        """Test the next update starts from zero."""
        runtime.exchange([envelope(0, 1, 2)])
        runtime.metrics_snapshot(1)
        assert runtime.metrics_snapshot(2).rounds == 0


class TestCommEntropy:
    def test_point_mass(self):
        """Test all words on one pair."""
        assert comm_entropy([RoundMetrics(0, per_pair_words={(0, 1): 7})]) == 0.0

    def test_uniform_over_four(self):
        """Test equal words on four pairs give two bits."""
        pairs = {(0, 1): 5, (0, 2): 5, (1, 2): 5, (2, 3): 5}
        assert comm_entropy([RoundMetrics(0, per_pair_words=pairs)]) == pytest.approx(2.0)

    def test_three_to_one(self):
        """Test words (3, 1) on two pairs."""
        window = [RoundMetrics(0, per_pair_words={(0, 1): 3}), RoundMetrics(1, per_pair_words={(1, 0): 1})]
        assert comm_entropy(window) == pytest.approx(0.8113, abs=1e-4)

    def test_sums_over_window(self):
        """Test the same pair in two rounds counts once."""
        window = [RoundMetrics(0, per_pair_words={(0, 1): 2}), RoundMetrics(1, per_pair_words={(0, 1): 2})]
        assert comm_entropy(window) == 0.0

    def test_no_communication(self):
        """Test an empty window has no entropy."""
        with pytest.raises(NoCommunication):
            comm_entropy([RoundMetrics(0)])


class TestDistributedSort:
    def test_small_sort(self, runtime):
        """Test keys {5, 1, 9, 3} on two machines."""
        runtime.store(1)["k"] = ((5,), (1,))
        runtime.store(2)["k"] = ((9,), (3,))
        placed = runtime.distributed_sort("k", holders=[1, 2], targets=[1, 2])
        assert placed == {1: ((1,), (3,)), 2: ((5,), (9,))}
        assert runtime.store(1)["k"] == ((1,), (3,))
        assert runtime.store(2)["k"] == ((5,), (9,))

    def test_sorted_input_same_rounds(self, cluster_config):
        """Test already-sorted input runs the same number of rounds."""
        counts = []
        for first, second in ((((5,), (1,)), ((9,), (3,))), (((1,), (3,)), ((5,), (9,)))):
            rt = Runtime(cluster_config)
            rt.store(1)["k"] = first
            rt.store(2)["k"] = second
            rt.distributed_sort("k", holders=[1, 2], targets=[1, 2])
            counts.append(len(rt.pending_rounds))
        assert counts[0] == counts[1]
        assert counts[0] <= 6

    def test_matches_sequential_sort(self, runtime):
        """Test 2,000 random 2-word keys against sorted()."""
        rng = np.random.default_rng(3)
        keys = [tuple(int(x) for x in row) for row in rng.integers(0, 500, size=(2000, 2))]
        holders = list(range(1, 17))
        for i, mid in enumerate(holders):
            runtime.store(mid)["k"] = tuple(keys[i::16])
        targets = list(range(20, 36))
        placed = runtime.distributed_sort("k", holders=holders, targets=targets)
        merged = [key for mid in targets for key in placed[mid]]
        assert merged == sorted(keys)
        assert all("k" not in runtime.store(mid) for mid in holders)
        assert len(runtime.pending_rounds) <= 6

    def test_equal_keys_share_a_target(self, runtime):
        """Test keys equal to a splitter all land on the same target."""
        runtime.store(1)["k"] = ((7,), (4,), (7,), (7,), (2,))
        runtime.store(2)["k"] = ((7,), (9,), (7,), (1,))
        targets = [3, 4, 5]
        placed = runtime.distributed_sort("k", holders=[1, 2], targets=targets)
        merged = [key for mid in targets for key in placed.get(mid, ())]
        assert merged == sorted(merged) and len(merged) == 9
        holding = [mid for mid in targets if (7,) in placed.get(mid, ())]
        assert len(holding) == 1
        assert placed[holding[0]].count((7,)) == 5
