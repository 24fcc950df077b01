# tests/dmpc/test_connectivity.py
# Tests for connected components over distributed Euler tours

import math

import networkx as nx
import pytest

from dmpc.connectivity import PRE_ITERATION_FACTOR, R_CC, SIZING, DynamicConnectivity
from dmpc.errors import DifferentComponents, DuplicateEdge, SelfLoop, SingletonComponent, UnknownEdge
from dmpc.oracle import check_spanning_forest, check_tours, components_oracle, same_partition
from dmpc.utils import canonical_edge


@pytest.fixture
def connectivity(graph_runtime):
    def make(n, m_max, edges=()):
        cc = DynamicConnectivity(graph_runtime(n, m_max, SIZING))
        cc.preprocess(edges)
        return cc

    return make


def assert_consistent(cc, graph):
    labels = cc.components()
    forest = list(cc.forest_edges())
    assert same_partition(labels, components_oracle(graph, cc.cfg.n))
    assert check_spanning_forest(graph, forest, cc.cfg.n)
    assert check_tours(cc.tours(), forest, labels)
    assert cc.stale_caches() == []


class TestQueries:
    def test_path_tour(self, connectivity):
        """Test a path 0-1-2 gets the tour 0 1 1 2 2 1 1 0."""
        cc = connectivity(3, 2)
        assert cc.insert(0, 1)
        assert cc.insert(1, 2)
        assert cc.tours() == {0: [0, 1, 1, 2, 2, 1, 1, 0]}
        assert cc.sizes() == {0: 3}

    def test_connected(self, connectivity):
        """Test connectivity answers and their two-round cost."""
        cc = connectivity(4, 3)
        cc.insert(0, 1)
        cc.rt.metrics_snapshot(1)
        assert cc.connected(0, 1)
        assert len(cc.rt.pending_rounds) == 2
        assert not cc.connected(0, 3)

    def test_is_ancestor(self, connectivity):
        """Test the root is an ancestor of the leaf and not the other way round."""
        cc = connectivity(3, 2)
        cc.insert(0, 1)
        cc.insert(1, 2)
        assert cc.is_ancestor(0, 2)
        assert cc.is_ancestor(1, 2)
        assert not cc.is_ancestor(2, 0)
        assert not cc.is_ancestor(1, 1)

    def test_reroot(self, connectivity):
        """Test rerooting at the leaf makes it everyone's ancestor."""
        cc = connectivity(3, 2)
        cc.insert(0, 1)
        cc.insert(1, 2)
        cc.reroot(2)
        (tour,) = cc.tours().values()
        assert tour[0] == 2 and tour[-1] == 2
        assert cc.is_ancestor(2, 0)
        assert not cc.is_ancestor(0, 2)
        assert_consistent(cc, nx.Graph([(0, 1), (1, 2)]))

    def test_query_errors(self, connectivity):
        """Test singleton reroot and cross-component ancestry are refused."""
        cc = connectivity(4, 3)
        cc.insert(0, 1)
        with pytest.raises(SingletonComponent):
            cc.reroot(3)
        with pytest.raises(DifferentComponents):
            cc.is_ancestor(0, 3)


class TestUpdates:
    def test_cycle_edge_is_not_a_tree_edge(self, connectivity):
        """Test an edge inside a component is stored as a non-tree edge."""
        cc = connectivity(3, 3)
        cc.insert(0, 1)
        cc.insert(1, 2)
        assert not cc.insert(0, 2)
        assert set(cc.forest_edges()) == {(0, 1), (1, 2)}

    def test_tree_edge_replaced(self, connectivity):
        """Test deleting a tree edge of a triangle promotes the third edge."""
        cc = connectivity(3, 3)
        cc.insert(0, 1)
        cc.insert(1, 2)
        cc.insert(0, 2)
        replacement = cc.delete(0, 1)
        assert canonical_edge(*replacement) == (0, 2)
        assert cc.connected(0, 1)
        assert_consistent(cc, nx.Graph([(1, 2), (0, 2)]))

    def test_bridge_splits(self, connectivity):
        """Test deleting a bridge splits the component."""
        cc = connectivity(4, 3)
        for u, v in [(0, 1), (1, 2), (2, 3)]:
            cc.insert(u, v)
        assert cc.delete(1, 2) is None
        assert not cc.connected(0, 3)
        assert sorted(cc.sizes().values()) == [2, 2]
        assert_consistent(cc, nx.Graph([(0, 1), (2, 3)]))

    def test_non_tree_delete(self, connectivity):
        """Test deleting a non-tree edge keeps the forest."""
        cc = connectivity(3, 3)
        cc.insert(0, 1)
        cc.insert(1, 2)
        cc.insert(0, 2)
        assert cc.delete(0, 2) is None
        assert set(cc.forest_edges()) == {(0, 1), (1, 2)}

    def test_graph_errors(self, connectivity):
        """Test invalid updates raise graph errors."""
        cc = connectivity(4, 3)
        cc.insert(0, 1)
        with pytest.raises(SelfLoop):
            cc.insert(2, 2)
        with pytest.raises(DuplicateEdge):
            cc.insert(1, 0)
        with pytest.raises(UnknownEdge):
            cc.delete(2, 3)


class TestPreprocess:
    @pytest.mark.parametrize("seed", [1, 2])
    def test_sparse_random_graph(self, graph_runtime, seed):
        """Test contraction on G(n, 3/n) builds a spanning forest in O(log n) iterations."""
        n = 64
        graph = nx.gnp_random_graph(n, 3 / n, seed=seed)
        cc = DynamicConnectivity(graph_runtime(n, graph.number_of_edges(), SIZING, rng_seed=seed))
        iterations = cc.preprocess(graph.edges())
        assert iterations <= PRE_ITERATION_FACTOR * math.log2(n)
        graph.add_nodes_from(range(n))
        assert_consistent(cc, graph)

    def test_updates_after_preprocess(self, graph_runtime, seeded_stream, replayer):
        """Test a preloaded stream stays consistent through its updates."""
        stream = seeded_stream(24, 80, insert_prob=0.5, seed=9, preload=30)
        cc = DynamicConnectivity(graph_runtime(stream.n, stream.peak_edges(), SIZING))
        cc.preprocess([(u, v) for u, v, _ in stream.preload])

        def after(graph, index):
            assert_consistent(cc, graph)

        replayer(stream, lambda up: cc.insert(up.u, up.v), lambda up: cc.delete(up.u, up.v), after)


class TestStreams:
    @pytest.mark.parametrize("seed", [1, 2, 3])
    def test_seeded_stream(self, graph_runtime, seeded_stream, replayer, seed):
        """Test labels, forest, tours and caches after every update."""
        stream = seeded_stream(20, 150, insert_prob=0.55, seed=seed)
        rt = graph_runtime(stream.n, stream.peak_edges(), SIZING)
        cc = DynamicConnectivity(rt)
        cc.preprocess([])
        rt.metrics_snapshot(0, "preprocess")

        def after(graph, index):
            assert rt.metrics_snapshot(index).rounds <= R_CC
            assert_consistent(cc, graph)

        replayer(stream, lambda up: cc.insert(up.u, up.v), lambda up: cc.delete(up.u, up.v), after)

    @pytest.mark.slow
    def test_long_stream_with_tree_deletions(self, graph_runtime, seeded_stream, replayer):
        """Test ten thousand updates on 200 vertices, most deletions cutting the forest."""
        stream = seeded_stream(200, 10_000, insert_prob=0.55, seed=21, tree_bias=1.0)
        rt = graph_runtime(stream.n, stream.peak_edges(), SIZING)
        cc = DynamicConnectivity(rt)
        cc.preprocess([])
        rt.metrics_snapshot(0, "preprocess")
        cuts = []

        def delete(up):
            cuts.append(canonical_edge(up.u, up.v) in cc.forest_edges())
            cc.delete(up.u, up.v)

        def after(graph, index):
            assert rt.metrics_snapshot(index).rounds <= R_CC
            assert_consistent(cc, graph)

        replayer(stream, lambda up: cc.insert(up.u, up.v), delete, after)
        assert cuts
        assert sum(cuts) >= 0.3 * len(cuts)

    @pytest.mark.slow
    def test_rounds_bounded_across_sizes(self, graph_runtime, seeded_stream, replayer):
        """Test the per-update round bound holds at 64, 256 and 1024 vertices."""
        for n in (64, 256, 1024):
            stream = seeded_stream(n, 2 * n, insert_prob=0.6, seed=n, tree_bias=0.5)
            rt = graph_runtime(stream.n, stream.peak_edges(), SIZING)
            cc = DynamicConnectivity(rt)
            cc.preprocess([])
            rt.metrics_snapshot(0, "preprocess")
            rounds = []
            replayer(
                stream,
                lambda up: cc.insert(up.u, up.v),
                lambda up: cc.delete(up.u, up.v),
                lambda graph, index: rounds.append(rt.metrics_snapshot(index).rounds),
            )
            assert max(rounds) <= R_CC, f"n={n}"

    @pytest.mark.slow
    def test_preprocess_large_sparse_graph(self, graph_runtime):
        """Test contraction on G(1024, 3/1024) stays within 4·log2 n iterations."""
        n = 1024
        graph = nx.gnp_random_graph(n, 3 / n, seed=5)
        cc = DynamicConnectivity(graph_runtime(n, graph.number_of_edges(), SIZING, rng_seed=5))
        assert cc.preprocess(graph.edges()) <= PRE_ITERATION_FACTOR * math.log2(n)
        assert same_partition(cc.components(), components_oracle(graph, n))
