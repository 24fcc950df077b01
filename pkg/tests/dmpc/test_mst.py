# tests/dmpc/test_mst.py
# Tests for the dynamic minimum spanning forest

import networkx as nx
import pytest

from dmpc.errors import NonPositiveEpsilon, NonPositiveWeight
from dmpc.mst import SIZING, DynamicMST, bucket_of
from dmpc.oracle import check_spanning_forest, mst_oracle, prim_weight


@pytest.fixture
def forest(graph_runtime):
    def make(n, m_max):
        mst = DynamicMST(graph_runtime(n, m_max, SIZING))
        mst.preprocess([])
        return mst

    return make


class TestBuckets:
    def test_bucket_edges(self):
        """Test bucket boundaries are (1+ε)^k apart from the lightest weight."""
        assert bucket_of(1000, 1000, 0.1) == 0
        assert bucket_of(1099, 1000, 0.1) == 0
        assert bucket_of(1100, 1000, 0.1) == 1
        assert bucket_of(4000, 1000, 1.0) == 2


class TestUpdates:
    def test_lighter_edge_swaps_path_maximum(self, forest):
        """Test a cycle-closing edge replaces the heaviest path edge."""
        mst = forest(3, 3)
        assert mst.insert(0, 1, 5)
        assert mst.insert(1, 2, 2)
        assert mst.insert(0, 2, 1)
        assert mst.last_swap == (0, 1)
        assert mst.forest_edges() == {(1, 2): 2, (0, 2): 1}
        assert mst.forest_weight() == 3

    def test_heavier_edge_stays_out(self, forest):
        """Test a cycle-closing edge heavier than the path maximum is not a tree edge."""
        mst = forest(3, 3)
        mst.insert(0, 1, 1)
        mst.insert(1, 2, 2)
        assert not mst.insert(0, 2, 5)
        assert mst.last_swap is None
        assert mst.forest_weight() == 3

    def test_equal_weight_keeps_tree(self, forest):
        """Test a tie does not swap."""
        mst = forest(3, 3)
        mst.insert(0, 1, 2)
        mst.insert(1, 2, 2)
        assert not mst.insert(0, 2, 2)
        assert set(mst.forest_edges()) == {(0, 1), (1, 2)}

    def test_delete_promotes_lightest(self, forest):
        """Test deleting a tree edge promotes the lightest crossing edge."""
        mst = forest(4, 5)
        for u, v, w in [(0, 1, 1), (1, 2, 1), (2, 3, 1), (0, 3, 9), (0, 2, 4)]:
            mst.insert(u, v, w)
        mst.delete(1, 2)
        assert mst.forest_weight() == 6
        assert (0, 2) in mst.forest_edges()

    def test_invalid_weights(self, forest, graph_runtime):
        """Test missing or non-positive weights and epsilon are refused."""
        mst = forest(3, 3)
        with pytest.raises(NonPositiveWeight):
            mst.insert(0, 1, 0)
        with pytest.raises(NonPositiveWeight):
            mst.insert(0, 1)
        fresh = DynamicMST(graph_runtime(3, 3, SIZING))
        with pytest.raises(NonPositiveEpsilon):
            fresh.preprocess([(0, 1, 5)], epsilon=0)

    @pytest.mark.parametrize("seed", [1, 2, 3])
    def test_exact_under_updates(self, graph_runtime, seeded_stream, replayer, seed):
        """Test the forest weight equals Kruskal's after every update."""
        stream = seeded_stream(16, 120, insert_prob=0.6, seed=seed, weighted=True)
        mst = DynamicMST(graph_runtime(stream.n, stream.peak_edges(), SIZING))
        mst.preprocess([])

        def after(graph, index):
            assert mst.forest_weight() == mst_oracle(graph), f"weight differs after update {index}"
            assert check_spanning_forest(graph, mst.forest_edges(), stream.n)

        replayer(
            stream,
            lambda up: mst.insert(up.u, up.v, up.weight),
            lambda up: mst.delete(up.u, up.v),
            after,
        )


class TestPreprocess:
    @pytest.mark.parametrize("epsilon", [0.1, 0.5])
    def test_within_epsilon(self, graph_runtime, epsilon):
        """Test the preprocessed forest is within 1+ε of the minimum."""
        graph = nx.gnp_random_graph(40, 0.15, seed=4)
        for i, (u, v) in enumerate(sorted(graph.edges())):
            graph[u][v]["weight"] = 1000 + (i * 7919) % 9000
        edges = [(u, v, d["weight"]) for u, v, d in graph.edges(data=True)]
        mst = DynamicMST(graph_runtime(40, len(edges), SIZING))
        mst.preprocess(edges, epsilon=epsilon)
        best = mst_oracle(graph)
        assert best == prim_weight(graph)
        assert best <= mst.forest_weight() <= (1 + epsilon) * best
        assert check_spanning_forest(graph, mst.forest_edges(), 40)

    @pytest.mark.slow
    def test_preprocess_large_graph(self, graph_runtime):
        """Test the (1+ε) bound at 512 vertices."""
        graph = nx.gnp_random_graph(512, 6 / 512, seed=9)
        for i, (u, v) in enumerate(sorted(graph.edges())):
            graph[u][v]["weight"] = 1000 + (i * 104729) % 49_000
        edges = [(u, v, d["weight"]) for u, v, d in graph.edges(data=True)]
        mst = DynamicMST(graph_runtime(512, len(edges), SIZING))
        mst.preprocess(edges, epsilon=0.1)
        assert mst.forest_weight() <= 1.1 * mst_oracle(graph)


class TestLongStreams:
    @pytest.mark.slow
    def test_exact_over_weighted_stream(self, graph_runtime, seeded_stream, replayer):
        """Test two thousand weighted updates on 64 vertices match Kruskal throughout."""
        stream = seeded_stream(64, 2_000, insert_prob=0.6, seed=13, weighted=True)
        mst = DynamicMST(graph_runtime(stream.n, stream.peak_edges(), SIZING))
        mst.preprocess([])

        def after(graph, index):
            assert mst.forest_weight() == mst_oracle(graph), f"weight differs after update {index}"

        replayer(
            stream,
            lambda up: mst.insert(up.u, up.v, up.weight),
            lambda up: mst.delete(up.u, up.v),
            after,
        )
