"""
dmpc/errors.py - Exception Hierarchy

All errors raised by the simulator derive from DmpcError. Two families are
distinguished because the command line maps them to different exit codes:

    SimulatorFault  - the simulated model was violated or an internal
                      invariant broke (memory cap, bandwidth, history).
    GraphError      - the update stream asked for something the current
                      graph does not allow (duplicate edge, unknown edge).

Input problems (StreamParseError, ConfigError) and oracle failures
(VerificationFailed) have their own classes.
"""

from __future__ import annotations

from typing import Any, Optional


class DmpcError(Exception):
    """Base class for every error raised by the dmpc package."""


# ---------------------------------------------------------------------------
# Simulator faults
# ---------------------------------------------------------------------------

class SimulatorFault(DmpcError):
    """
    A violation of the simulated model or of an internal invariant.

    Attributes:
        machine_id: The offending machine, when one can be named.
        update_index: Filled in by the harness once the fault has propagated
                      to the update loop.
    """

    def __init__(self, message: str, machine_id: Optional[int] = None):
        if machine_id is not None:
            message = f"{message} (machine {machine_id})"
        super().__init__(message)
        self.machine_id = machine_id
        self.update_index: Optional[int] = None


class MemoryCapExceeded(SimulatorFault):
    def __init__(self, machine_id: int, words: int, cap: int):
        super().__init__(f"store holds {words} words, cap is {cap}", machine_id)
        self.words = words
        self.cap = cap


class BandwidthExceeded(SimulatorFault):
    def __init__(self, machine_id: int, words: int, cap: int, direction: str):
        super().__init__(f"{direction} {words} words in one round, cap is {cap}", machine_id)
        self.words = words
        self.cap = cap
        self.direction = direction


class HistoryOverflow(SimulatorFault):
    """Eviction would discard an entry that some machine has not processed."""


class MachinePoolExhausted(SimulatorFault):
    """Every one of the μ machines is in use."""


class HeavyStatusFlip(SimulatorFault):
    """A heavy vertex changed its matching status."""


class InvariantViolation(SimulatorFault):
    """An algorithmic invariant that the analysis guarantees did not hold."""


# ---------------------------------------------------------------------------
# Placement signals, resolved inside the partition module
# ---------------------------------------------------------------------------

class NoMachineFits(DmpcError):
    def __init__(self, words: int):
        super().__init__(f"no light machine has {words} free words")
        self.words = words


class DestinationFull(DmpcError):
    def __init__(self, machine_id: int, words: int):
        super().__init__(f"machine {machine_id} cannot take {words} more words")
        self.machine_id = machine_id
        self.words = words


# ---------------------------------------------------------------------------
# Graph errors
# ---------------------------------------------------------------------------

class GraphError(DmpcError):
    """The requested update is not valid for the current graph."""


class UnknownVertex(GraphError):
    def __init__(self, vertex: int):
        super().__init__(f"unknown vertex {vertex}")
        self.vertex = vertex


class UnknownEdge(GraphError):
    def __init__(self, u: int, v: int):
        super().__init__(f"edge ({u}, {v}) is not in the graph")
        self.edge = (u, v)


class DuplicateEdge(GraphError):
    def __init__(self, u: int, v: int):
        super().__init__(f"edge ({u}, {v}) is already in the graph")
        self.edge = (u, v)


class SelfLoop(GraphError):
    def __init__(self, vertex: int):
        super().__init__(f"self loop on vertex {vertex}")
        self.vertex = vertex


class DifferentComponents(GraphError):
    pass


class SingletonComponent(GraphError):
    pass


# ---------------------------------------------------------------------------
# Plain errors
# ---------------------------------------------------------------------------

class EmptyPayload(DmpcError):
    """A message must carry at least one word."""


class NoCommunication(DmpcError):
    """Entropy is undefined for a window without communication."""


class UnallocatedAddress(DmpcError):
    def __init__(self, address: int):
        super().__init__(f"address {address} is not allocated")
        self.address = address


class TooLarge(DmpcError):
    pass


class NonPositiveWeight(DmpcError):
    pass


class NonPositiveEpsilon(DmpcError):
    pass


class ConfigError(DmpcError):
    pass


class StreamParseError(DmpcError):
    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class VerificationFailed(DmpcError):
    """
    An oracle rejected the maintained solution.

    Attributes:
        update_index: Index of the update after which the check failed.
        witness: The oracle's counterexample (edge, path or vertex).
    """

    def __init__(self, update_index: int, check: str, witness: Any = None):
        super().__init__(f"{check} failed after update {update_index}: witness {witness!r}")
        self.update_index = update_index
        self.check = check
        self.witness = witness
