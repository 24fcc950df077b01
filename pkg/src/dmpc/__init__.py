"""
dmpc - Dynamic Massively Parallel Computation Simulator

A deterministic simulator of machines with sublinear memory exchanging
messages in synchronous rounds, and the fully-dynamic graph algorithms that
run on it. Every update is measured in rounds, active machines per round
and words communicated.

Modules:
    runtime: Machines, rounds, bandwidth and memory caps, metrics
    partition: Edge placement, directory, update-history and refresh
    matching: Maximal matching
    threehalves: 3/2-approximate matching
    connectivity: Connected components over Euler tours
    mst: Minimum spanning forest
    seqsim: Running a sequential algorithm on distributed memory
    oracle: Brute-force checks of every maintained solution
    streams: Update stream files
    storage: Metrics CSV, solution dumps and summaries

Typical Usage:
    >>> from dmpc.models import SimConfig
    >>> from dmpc.runtime import Runtime
    >>> from dmpc.matching import DynamicMatching
    >>> mm = DynamicMatching(Runtime(SimConfig.for_graph(4, 4)))
    >>> mm.bootstrap([])
    0
    >>> mm.insert(0, 1)
    {0: 1, 1: 0}
"""

from __future__ import annotations

import logging

from .errors import DmpcError, GraphError, SimulatorFault, VerificationFailed
from .models import Op, SimConfig, UpdateMetrics
from .runtime import Runtime, comm_entropy

logging.getLogger(__name__).addHandler(logging.NullHandler())

__all__ = [
    "DmpcError",
    "GraphError",
    "Op",
    "Runtime",
    "SimConfig",
    "SimulatorFault",
    "UpdateMetrics",
    "VerificationFailed",
    "comm_entropy",
]
