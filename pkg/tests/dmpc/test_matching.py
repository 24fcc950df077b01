# tests/dmpc/test_matching.py
# Tests for the fully dynamic maximal matching

import math

import networkx as nx
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from dmpc.errors import DuplicateEdge, SelfLoop, UnknownEdge, UnknownVertex
from dmpc.matching import A_MM, R_MM, SIZING, DynamicMatching
from dmpc.models import FREE
from dmpc.oracle import check_maximal
from dmpc.utils import canonical_edge

# Hub edges 0-1..0-10, a mate for each spoke, and a few tails.
HUB_CANDIDATES = (
    [(0, i) for i in range(1, 11)]
    + [(i, 10 + i) for i in range(1, 11)]
    + [(10 + i, 20 + i) for i in range(1, 5)]
)


@pytest.fixture
def matching(graph_runtime):
    """Factory: an empty-graph matching on n vertices sized for m_max edges."""

    def make(n, m_max, edges=()):
        mm = DynamicMatching(graph_runtime(n, m_max, SIZING))
        mm.bootstrap(edges)
        mm.rt.metrics_snapshot(0, "preprocess")
        return mm

    return make


def assert_heavy_matched(mm):
    mates = mm.mates()
    for v in mm.heavy_vertices():
        assert v in mates, f"heavy vertex {v} is free"


class TestBootstrap:
    def test_empty_graph(self, matching):
        """Test bootstrapping nothing leaves every vertex free."""
        mm = matching(4, 4)
        assert mm.mates() == {}

    def test_single_edge(self, matching):
        """Test one edge is matched."""
        mm = matching(4, 4, [(0, 1)])
        assert mm.mates() == {0: 1, 1: 0}

    def test_triangle(self, matching):
        """Test a triangle ends with exactly one matched edge."""
        mm = matching(3, 3, [(0, 1), (1, 2), (0, 2)])
        assert len(mm.matched_edges()) == 1
        assert check_maximal([(0, 1), (1, 2), (0, 2)], mm.mates())

    def test_random_graph_is_maximal(self, graph_runtime):
        """Test the proposal rounds give a maximal matching on G(60, 0.1)."""
        graph = nx.gnp_random_graph(60, 0.1, seed=3)
        mm = DynamicMatching(graph_runtime(60, graph.number_of_edges(), SIZING, rng_seed=5))
        iterations = mm.bootstrap(graph.edges())
        assert iterations >= 1
        assert check_maximal(graph, mm.mates())
        assert mm.degrees() == {v: d for v, d in graph.degree() if d}

    @pytest.mark.parametrize("seed", [0, 1, 2, 3])
    def test_star_centre_accepts_smallest_leaf(self, graph_runtime, seed):
        """Test every leaf proposes to the centre and the centre accepts leaf 1."""
        mm = DynamicMatching(graph_runtime(6, 5, SIZING, rng_seed=seed))
        assert mm.bootstrap([(0, leaf) for leaf in range(1, 6)]) == 1
        assert mm.mates() == {0: 1, 1: 0}

    def test_mutual_proposals_match(self, graph_runtime):
        """Test two vertices proposing to each other are matched in one iteration."""
        mm = DynamicMatching(graph_runtime(4, 2, SIZING))
        assert mm.bootstrap([(0, 1), (2, 3)]) == 1
        assert mm.mates() == {0: 1, 1: 0, 2: 3, 3: 2}

    def test_self_loop_rejected(self, graph_runtime):
        """Test a self loop in the initial graph raises SelfLoop."""
        mm = DynamicMatching(graph_runtime(4, 4, SIZING))
        with pytest.raises(SelfLoop):
            mm.bootstrap([(2, 2)])


class TestUpdates:
    def test_insert_between_free_vertices(self, matching):
        """Test an edge between two free vertices is matched."""
        mm = matching(6, 6)
        assert mm.insert(0, 1) == {0: 1, 1: 0}
        assert mm.matched(0, 1)
        assert mm.matched(1, 0)

    def test_insert_next_to_matched_vertex(self, matching):
        """Test an edge from a matched light vertex to a free one changes nothing."""
        mm = matching(6, 6)
        mm.insert(0, 1)
        assert mm.insert(0, 2) == {}
        assert mm.mates() == {0: 1, 1: 0}
        assert not mm.matched(0, 2)

    def test_delete_matched_edge_rematches(self, matching):
        """Test a freed endpoint takes its smallest free neighbour."""
        mm = matching(6, 6)
        mm.insert(0, 1)
        mm.insert(0, 2)
        assert mm.delete(0, 1) == {0: 2, 1: FREE, 2: 0}
        assert mm.mates() == {0: 2, 2: 0}

    def test_delete_unmatched_edge(self, matching):
        """Test deleting an unmatched edge leaves the matching alone."""
        mm = matching(6, 6)
        mm.insert(0, 1)
        mm.insert(1, 2)
        mm.rt.metrics_snapshot(2)
        assert mm.delete(1, 2) == {}
        metrics = mm.rt.metrics_snapshot(3, "-")
        assert metrics.rounds <= R_MM
        assert mm.mates() == {0: 1, 1: 0}

    def test_reinsert_after_delete(self, matching):
        """Test an edge can come back after its deletion."""
        mm = matching(6, 6)
        mm.insert(3, 4)
        mm.delete(3, 4)
        assert mm.mates() == {}
        assert mm.insert(3, 4) == {3: 4, 4: 3}

    def test_graph_errors(self, matching):
        """Test invalid updates raise the matching graph error."""
        mm = matching(6, 6)
        mm.insert(0, 1)
        with pytest.raises(SelfLoop):
            mm.insert(2, 2)
        with pytest.raises(DuplicateEdge):
            mm.insert(1, 0)
        with pytest.raises(UnknownEdge):
            mm.delete(2, 3)
        with pytest.raises(UnknownVertex):
            mm.insert(0, 6)


class TestHeavyVertices:
    def test_heavy_vertex_steals_from_light_mate(self, matching):
        """Test a free vertex turning heavy takes a neighbour whose mate re-matches."""
        mm = matching(21, 18)
        assert mm.tau == 6
        for i in range(1, 8):
            mm.insert(i, 10 + i)
        mm.insert(11, 20)
        for i in range(1, 7):
            assert mm.insert(0, i) == {}
        changes = mm.insert(0, 7)
        assert changes == {0: 1, 1: 0, 11: 20, 20: 11}
        assert 0 in mm.heavy_vertices()
        expected = {canonical_edge(0, 1), (11, 20)} | {(i, 10 + i) for i in range(2, 8)}
        assert mm.matched_edges() == expected

    def test_hub_losing_its_mate(self, matching):
        """Test deleting the hub's matched edge leaves a maximal matching."""
        mm = matching(21, 18)
        for i in range(1, 8):
            mm.insert(i, 10 + i)
        mm.insert(11, 20)
        for i in range(1, 8):
            mm.insert(0, i)
        graph = nx.Graph([(i, 10 + i) for i in range(1, 8)] + [(11, 20)] + [(0, i) for i in range(1, 8)])
        mate = mm.mates()[0]
        mm.delete(0, mate)
        graph.remove_edge(0, mate)
        assert check_maximal(graph, mm.mates())
        assert_heavy_matched(mm)

    @settings(max_examples=30, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
    @given(toggles=st.lists(st.integers(0, len(HUB_CANDIDATES) - 1), min_size=1, max_size=60))
    def test_hub_toggles_stay_maximal(self, graph_runtime, toggles):
        """Test random toggles around a hub keep the matching maximal and heavy vertices matched."""
        mm = DynamicMatching(graph_runtime(25, len(HUB_CANDIDATES), SIZING))
        mm.bootstrap([])
        graph = nx.Graph()
        for index in toggles:
            u, v = HUB_CANDIDATES[index]
            if graph.has_edge(u, v):
                mm.delete(u, v)
                graph.remove_edge(u, v)
            else:
                mm.insert(u, v)
                graph.add_edge(u, v)
            assert check_maximal(graph, mm.mates())
            assert_heavy_matched(mm)
        assert mm.degrees() == {v: d for v, d in graph.degree() if d}


class TestStreams:
    @pytest.mark.parametrize("seed", [1, 2, 3])
    def test_seeded_stream_stays_maximal(self, graph_runtime, seeded_stream, replayer, seed):
        """Test the matching is maximal after every update of a seeded stream."""
        stream = seeded_stream(30, 250, seed=seed)
        mm = DynamicMatching(graph_runtime(stream.n, stream.peak_edges(), SIZING))
        mm.bootstrap([])

        def after(graph, index):
            assert check_maximal(graph, mm.mates()), f"not maximal after update {index}"
            assert len(mm.placement.history()) <= mm.cfg.history_cap

        replayer(
            stream,
            lambda up: mm.insert(up.u, up.v),
            lambda up: mm.delete(up.u, up.v),
            after,
        )

    @pytest.mark.parametrize("n", [64, 256])
    def test_per_update_cost(self, graph_runtime, seeded_stream, replayer, n):
        """Test every update stays under the round and active machine bounds."""
        stream = seeded_stream(n, 400, insert_prob=0.7, seed=n)
        rt = graph_runtime(stream.n, stream.peak_edges(), SIZING)
        mm = DynamicMatching(rt)
        mm.bootstrap([])
        rt.metrics_snapshot(0, "preprocess")
        rows = []

        def record(graph, index):
            rows.append(rt.metrics_snapshot(index))

        replayer(stream, lambda up: mm.insert(up.u, up.v), lambda up: mm.delete(up.u, up.v), record)
        assert rows
        assert max(row.rounds for row in rows) <= R_MM
        assert max(row.max_active_per_round for row in rows) <= A_MM
        in_use, bound = mm.placement.check_machine_bound()
        assert in_use <= bound

    @pytest.mark.slow
    def test_long_stream(self, graph_runtime, seeded_stream, replayer):
        """Test ten thousand updates on 128 vertices stay maximal."""
        stream = seeded_stream(128, 10_000, insert_prob=0.6, seed=11)
        mm = DynamicMatching(graph_runtime(stream.n, stream.peak_edges(), SIZING))
        mm.bootstrap([])

        def after(graph, index):
            if index % 500 == 0:
                assert check_maximal(graph, mm.mates())

        graph = replayer(stream, lambda up: mm.insert(up.u, up.v), lambda up: mm.delete(up.u, up.v), after)
        assert check_maximal(graph, mm.mates())

    @pytest.mark.slow
    def test_cost_flat_across_sizes(self, graph_runtime, seeded_stream, replayer):
        """Test rounds and active machines barely grow from 64 to 1024 vertices."""
        peaks = {}
        for n in (64, 256, 1024):
            stream = seeded_stream(n, 2 * n, insert_prob=0.6, seed=n)
            rt = graph_runtime(stream.n, stream.peak_edges(), SIZING)
            mm = DynamicMatching(rt)
            mm.bootstrap([])
            rt.metrics_snapshot(0, "preprocess")
            rows = []
            replayer(
                stream,
                lambda up: mm.insert(up.u, up.v),
                lambda up: mm.delete(up.u, up.v),
                lambda graph, index: rows.append(rt.metrics_snapshot(index)),
            )
            assert max(row.max_comm_per_round for row in rows) <= 16 * math.sqrt(rt.config.capacity_N)
            peaks[n] = (max(row.rounds for row in rows), max(row.max_active_per_round for row in rows))
        assert peaks[1024][0] <= peaks[64][0] + 2
        assert peaks[1024][1] <= peaks[64][1] + 2
