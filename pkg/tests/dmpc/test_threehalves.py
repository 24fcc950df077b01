# tests/dmpc/test_threehalves.py
# Tests for the matching without length-3 augmenting paths

import networkx as nx
import pytest

from dmpc.errors import ConfigError
from dmpc.oracle import check_free_counters, check_no_short_augmenting, max_matching_exhaustive
from dmpc.threehalves import SIZING, ThreeHalvesMatching


@pytest.fixture
def three_halves(graph_runtime):
    def make(n, m_max):
        th = ThreeHalvesMatching(graph_runtime(n, m_max, SIZING))
        th.bootstrap([])
        return th

    return make


class TestThreeHalves:
    def test_rejects_initial_graph(self, graph_runtime):
        """Test a non-empty initial graph is refused."""
        th = ThreeHalvesMatching(graph_runtime(4, 4, SIZING))
        with pytest.raises(ConfigError):
            th.bootstrap([(0, 1)])

    def test_counter_of_matched_vertex(self, three_halves):
        """Test a matched vertex counts its free neighbour."""
        th = three_halves(4, 4)
        th.insert(0, 1)
        assert th.insert(1, 2) == {}
        assert th.counters() == {1: 1}

    def test_path_augments(self, three_halves):
        """Test closing a path of length three re-matches both ends."""
        th = three_halves(4, 4)
        th.insert(1, 2)
        th.insert(0, 1)
        changes = th.insert(2, 3)
        assert changes == {0: 1, 1: 0, 2: 3, 3: 2}
        assert th.matched_edges() == {(0, 1), (2, 3)}
        assert th.counters() == {}

    def test_delete_restores_counters(self, three_halves):
        """Test counters follow a deletion that frees both ends."""
        th = three_halves(4, 4)
        th.insert(0, 1)
        th.insert(1, 2)
        th.delete(0, 1)
        graph = nx.Graph([(1, 2)])
        assert check_no_short_augmenting(graph, th.mates())
        assert check_free_counters(graph, th.mates(), th.counters())

    @pytest.mark.parametrize("seed", [3, 4, 5, 6])
    def test_seeded_stream(self, graph_runtime, seeded_stream, replayer, seed):
        """Test every step has no short augmenting path, exact counters and size within 3/2."""
        stream = seeded_stream(9, 120, insert_prob=0.6, seed=seed)
        th = ThreeHalvesMatching(graph_runtime(stream.n, stream.peak_edges(), SIZING))
        th.bootstrap([])

        def after(graph, index):
            mates = th.mates()
            assert check_no_short_augmenting(graph, mates), f"augmenting path after update {index}"
            assert check_free_counters(graph, mates, th.counters())
            if graph.number_of_edges() <= 24:
                best = max_matching_exhaustive(graph)
            else:
                best = len(nx.max_weight_matching(graph, maxcardinality=True))
            assert 3 * len(th.matched_edges()) >= 2 * best

        replayer(stream, lambda up: th.insert(up.u, up.v), lambda up: th.delete(up.u, up.v), after)

    @pytest.mark.slow
    def test_long_stream(self, graph_runtime, seeded_stream, replayer):
        """Test five thousand updates on 64 vertices keep short augmenting paths away."""
        stream = seeded_stream(64, 5_000, insert_prob=0.6, seed=17)
        th = ThreeHalvesMatching(graph_runtime(stream.n, stream.peak_edges(), SIZING))
        th.bootstrap([])

        def after(graph, index):
            if index % 50 == 0:
                mates = th.mates()
                assert check_no_short_augmenting(graph, mates), f"augmenting path after update {index}"
                assert check_free_counters(graph, mates, th.counters())

        replayer(stream, lambda up: th.insert(up.u, up.v), lambda up: th.delete(up.u, up.v), after)
