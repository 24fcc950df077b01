# tests/conftest.py
# Shared pytest fixtures for the DMPC simulator tests

import sys
import pytest
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent/"src"))

import networkx as nx  # noqa: E402

from dmpc.models import Op, SimConfig  # noqa: E402
from dmpc.runtime import Runtime  # noqa: E402
from dmpc.streams import generate_stream  # noqa: E402


@pytest.fixture
def cluster_config():
    """N = 1024, S = 1024, μ = 64."""
    return SimConfig(capacity_N=1024, machine_memory_S=1024, machine_count_mu=64)


@pytest.fixture
def runtime(cluster_config):
    rt = Runtime(cluster_config)
    yield rt
    rt.close()


@pytest.fixture
def graph_runtime():
    """Factory: a runtime sized for a graph run with the given sizing."""
    made = []

    def make(n, m_max, sizing=None, **kwargs):
        rt = Runtime(SimConfig.for_graph(n, m_max, **(sizing or {}), **kwargs))
        made.append(rt)
        return rt

    yield make
    for rt in made:
        rt.close()


@pytest.fixture
def seeded_stream():
    """Factory over generate_stream with test-friendly defaults."""

    def make(n, updates, insert_prob=0.6, seed=7, **kwargs):
        return generate_stream(n, updates, insert_prob, seed=seed, **kwargs)

    return make


def replay(stream, insert, delete, after=None):
    """
    Feed a stream's insertions and deletions to callbacks, keeping a
    networkx shadow graph; ``after(graph, index)`` runs after each update.
    """
    graph = nx.Graph()
    graph.add_nodes_from(range(stream.n))
    for u, v, w in stream.preload:
        graph.add_edge(u, v, weight=w)
    for index, up in enumerate(stream.updates, start=1):
        if up.op == Op.INSERT:
            insert(up)
            graph.add_edge(up.u, up.v, weight=up.weight)
        elif up.op == Op.DELETE:
            delete(up)
            graph.remove_edge(up.u, up.v)
        else:
            continue
        if after is not None:
            after(graph, index)
    return graph


@pytest.fixture
def replayer():
    return replay
