# tests/dmpc/test_seqsim.py
# Tests for running a sequential algorithm against cluster memory

import pytest

from dmpc.errors import ConfigError, MachinePoolExhausted, SelfLoop, UnallocatedAddress
from dmpc.models import Op, SimConfig
from dmpc.oracle import check_maximal
from dmpc.runtime import Runtime
from dmpc.seqsim import SEQ_ROUND_SLACK, AbstractMemory, LocalMemory, ScanMatching, SequentialSimulator, direct_run


class TestLocalMemory:
    def test_fresh_words_read_zero(self):
        """Test allocated words start at zero and accesses are counted."""
        mem = LocalMemory(8)
        base = mem.allocate(4)
        assert mem.read(base + 3) == 0
        mem.write(base + 3, 9)
        assert mem.read(base + 3) == 9
        assert mem.accesses == 3
        assert mem.peek(base + 3) == 9
        assert mem.accesses == 3

    def test_unallocated_address(self):
        """Test touching a word past the allocation raises UnallocatedAddress."""
        mem = LocalMemory(8)
        mem.allocate(2)
        with pytest.raises(UnallocatedAddress):
            mem.read(2)

    def test_capacity(self):
        """Test allocating past the capacity is refused."""
        mem = LocalMemory(4)
        mem.allocate(3)
        with pytest.raises(MachinePoolExhausted):
            mem.allocate(2)


class TestAbstractMemory:
    def test_access_costs_two_rounds(self, runtime):
        """Test a read and a write each take two rounds with two active machines."""
        mem = AbstractMemory(runtime, 100)
        mem.allocate(100)
        mem.write(42, 7)
        assert mem.read(42) == 7
        rounds = runtime.pending_rounds
        assert len(rounds) == 4
        assert all(r.active_machines == 2 for r in rounds)

    def test_intervals_span_machines(self):
        """Test addresses map to consecutive storage machines in S-word intervals."""
        rt = Runtime(SimConfig(capacity_N=1024, machine_memory_S=256, machine_count_mu=64))
        mem = AbstractMemory(rt, 600)
        mem.allocate(600)
        assert [mem.machine_of(a) for a in (0, 255, 256, 599)] == [1, 1, 2, 3]
        mem.write(599, 5)
        assert rt.store(3)[("cell", 599)] == 5
        mem.write(599, 0)
        assert ("cell", 599) not in rt.store(3)
        rt.close()

    def test_too_large(self, runtime):
        """Test a memory larger than the storage machines can hold is refused."""
        with pytest.raises(ConfigError):
            AbstractMemory(runtime, 1024 * 64)


class TestSimulator:
    def test_rounds_twice_accesses(self, graph_runtime, seeded_stream):
        """Test each simulated update takes exactly two rounds per access."""
        stream = seeded_stream(20, 120, queries=0.1, seed=5)
        sim = SequentialSimulator(graph_runtime(stream.n, stream.peak_edges()), ScanMatching())
        sim.preprocess([])
        sim.rt.metrics_snapshot(0, "preprocess")
        for index, up in enumerate(stream.updates, start=1):
            step = sim.simulate_update(up.op, up.u, up.v, index)
            assert step.metrics.rounds == 2 * step.accesses
            assert step.metrics.max_active_per_round <= 2

    def test_query_reads_one_word(self, graph_runtime):
        """Test a query is a single access."""
        sim = SequentialSimulator(graph_runtime(4, 4), ScanMatching())
        sim.preprocess([])
        step = sim.simulate_update(Op.QUERY, 0, 1, 1)
        assert (step.changes, step.accesses, step.metrics.rounds) == ({}, 1, 2)

    def test_self_loop(self, graph_runtime):
        """Test the algorithm rejects a self loop."""
        sim = SequentialSimulator(graph_runtime(4, 4), ScanMatching())
        with pytest.raises(SelfLoop):
            sim.update(Op.INSERT, 1, 1)

    def test_matches_direct_run(self, graph_runtime, seeded_stream, replayer):
        """Test the cluster run and a local run give the same changes and a maximal matching."""
        stream = seeded_stream(16, 150, insert_prob=0.6, seed=8)
        algorithm = ScanMatching()
        sim = SequentialSimulator(graph_runtime(stream.n, stream.peak_edges()), algorithm)
        sim.preprocess([])
        simulated = []

        def after(graph, index):
            assert check_maximal(graph, algorithm.mates(sim.memory))

        replayer(
            stream,
            lambda up: simulated.append(sim.update(up.op, up.u, up.v)),
            lambda up: simulated.append(sim.update(up.op, up.u, up.v)),
            after,
        )
        local, memory = direct_run(
            ScanMatching(),
            stream.n,
            stream.peak_edges(),
            [(up.op, up.u, up.v) for up in stream.updates if up.op != Op.QUERY],
        )
        assert simulated == local
        assert memory.accesses == sim.memory.accesses

    def test_cost_over_long_stream(self, graph_runtime, seeded_stream):
        """Test five hundred updates stay within the round, machine and word bounds."""
        stream = seeded_stream(32, 500, insert_prob=0.6, seed=12, queries=0.05)
        sim = SequentialSimulator(graph_runtime(stream.n, stream.peak_edges()), ScanMatching())
        sim.preprocess([])
        sim.rt.metrics_snapshot(0, "preprocess")
        for index, up in enumerate(stream.updates, start=1):
            step = sim.simulate_update(up.op, up.u, up.v, index)
            assert step.metrics.rounds <= 2 * step.accesses + SEQ_ROUND_SLACK
            assert step.metrics.max_active_per_round <= 3
            assert step.metrics.max_comm_per_round <= 8
