"""
cli.py - Command Line Harness for the DMPC Simulator

Generates update streams, runs an algorithm on the simulated cluster, and
optionally checks the maintained solution against brute-force oracles.

Commands:
    gen      write a seeded random update stream
    run      preprocess the preload section, apply every update, write the
             metrics CSV, the solution dump and a JSON summary
    verify   as run, checking the oracles every k updates

Algorithms:
    mm      maximal matching
    mm32    3/2-approximate matching (empty start only)
    cc      connected components
    mst     minimum spanning forest
    seqsim  a sequential matching algorithm run on distributed memory

Exit codes:
    0   success
    2   invalid input (stream, config, an update the graph does not allow)
    3   simulator fault (memory cap, bandwidth, history, machine pool)
    4   verification failure

Usage:
    cd src && python cli.py gen --n 64 --updates 1000 --seed 1 --out stream.txt
    cd src && python cli.py run --algo cc --stream stream.txt --out-metrics m.csv
    cd src && python cli.py verify --algo mm --stream stream.txt --verify-every 10
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Any, ClassVar, Dict, Iterable, List, Optional, Sequence, Set, Tuple

import networkx as nx

from dmpc.connectivity import SIZING as CC_SIZING
from dmpc.connectivity import DynamicConnectivity
from dmpc.errors import (
    DmpcError,
    DuplicateEdge,
    NoCommunication,
    SelfLoop,
    SimulatorFault,
    UnknownEdge,
    VerificationFailed,
)
from dmpc.matching import SIZING as MM_SIZING
from dmpc.matching import DynamicMatching
from dmpc.models import Op, SimConfig, UpdateMetrics
from dmpc.mst import SIZING as MST_SIZING
from dmpc.mst import DynamicMST
from dmpc.oracle import (
    Verdict,
    check_free_counters,
    check_maximal,
    check_no_short_augmenting,
    check_placement,
    check_spanning_forest,
    check_tours,
    components_oracle,
    mst_oracle,
    same_partition,
)
from dmpc.runtime import Runtime, comm_entropy
from dmpc.seqsim import SEQ_ROUND_SLACK, ScanMatching, SequentialSimulator
from dmpc.storage import atomic_write, format_components, format_forest, format_matching, write_json, write_metrics
from dmpc.streams import Stream, Update, format_stream, generate_stream, read_stream
from dmpc.threehalves import SIZING as MM32_SIZING
from dmpc.threehalves import ThreeHalvesMatching

from config import LOG_LEVELS, Config, load_config_file

logger = logging.getLogger("dmpc.cli")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_FAULT = 3
EXIT_VERIFY = 4

# Per-round bounds of a simulated sequential access.
SEQ_ACTIVE_LIMIT = 3
SEQ_COMM_LIMIT = 8

Edge = Tuple[int, int, Optional[int]]


def _require(verdict: Verdict, update_index: int, check: str) -> None:
    if not verdict:
        raise VerificationFailed(update_index, check, verdict.witness)


# ---------------------------------------------------------------------------
# Drivers: one adapter per algorithm
# ---------------------------------------------------------------------------

class Driver:
    """Uniform face of an algorithm for the harness."""

    sizing: ClassVar[Dict[str, int]] = {}

    def __init__(self, runtime: Runtime, settings: Dict[str, Any]):
        self.rt = runtime
        self.settings = settings

    def preprocess(self, edges: Sequence[Edge]) -> int:
        raise NotImplementedError

    def insert(self, u: int, v: int, weight: Optional[int]) -> None:
        raise NotImplementedError

    def delete(self, u: int, v: int) -> None:
        raise NotImplementedError

    def query(self, u: int, v: int) -> bool:
        raise NotImplementedError

    def dump(self) -> str:
        raise NotImplementedError

    def before_check(self) -> None:
        """Snapshot state an upcoming check compares against."""

    def check(self, graph: nx.Graph, update_index: int, metrics: UpdateMetrics) -> None:
        raise NotImplementedError


class MatchingDriver(Driver):
    sizing = MM_SIZING
    algorithm = DynamicMatching

    def __init__(self, runtime: Runtime, settings: Dict[str, Any]):
        super().__init__(runtime, settings)
        self.algo = self.algorithm(runtime)
        self._heavy_matched: Set[int] = set()

    def preprocess(self, edges: Sequence[Edge]) -> int:
        return self.algo.bootstrap([(u, v) for u, v, _ in edges])

    def insert(self, u: int, v: int, weight: Optional[int]) -> None:
        self.algo.insert(u, v)

    def delete(self, u: int, v: int) -> None:
        self.algo.delete(u, v)

    def query(self, u: int, v: int) -> bool:
        return self.algo.matched(u, v)

    def dump(self) -> str:
        return format_matching(self.algo.matched_edges())

    def before_check(self) -> None:
        self._heavy_matched = self.algo.heavy_vertices() & set(self.algo.mates())

    def check(self, graph: nx.Graph, update_index: int, metrics: UpdateMetrics) -> None:
        mates = self.algo.mates()
        _require(check_maximal(graph, mates), update_index, "maximal matching")
        copies = self.algo.placement.stored_copies()
        _require(check_placement(graph, copies), update_index, "placement soundness")
        if update_index:
            dropped = sorted((self._heavy_matched & self.algo.heavy_vertices()) - set(mates))
            _require(Verdict(not dropped, dropped[:1] or None), update_index, "heavy vertex stays matched")


class ThreeHalvesDriver(MatchingDriver):
    sizing = MM32_SIZING
    algorithm = ThreeHalvesMatching

    def check(self, graph: nx.Graph, update_index: int, metrics: UpdateMetrics) -> None:
        super().check(graph, update_index, metrics)
        mates = self.algo.mates()
        _require(check_no_short_augmenting(graph, mates), update_index, "no augmenting path of length 3")
        _require(check_free_counters(graph, mates, self.algo.counters()), update_index, "free-neighbour counters")


class ConnectivityDriver(Driver):
    sizing = CC_SIZING

    def __init__(self, runtime: Runtime, settings: Dict[str, Any]):
        super().__init__(runtime, settings)
        self.algo = self._build(runtime)

    def _build(self, runtime: Runtime) -> DynamicConnectivity:
        return DynamicConnectivity(runtime)

    def preprocess(self, edges: Sequence[Edge]) -> int:
        return self.algo.preprocess([(u, v) for u, v, _ in edges])

    def insert(self, u: int, v: int, weight: Optional[int]) -> None:
        self.algo.insert(u, v)

    def delete(self, u: int, v: int) -> None:
        self.algo.delete(u, v)

    def query(self, u: int, v: int) -> bool:
        return self.algo.connected(u, v)

    def dump(self) -> str:
        return format_components(self.algo.components())

    def check(self, graph: nx.Graph, update_index: int, metrics: UpdateMetrics) -> None:
        labels = self.algo.components()
        _require(same_partition(labels, components_oracle(graph)), update_index, "component partition")
        forest = self.algo.forest_edges()
        _require(check_spanning_forest(graph, forest), update_index, "spanning forest")
        _require(check_tours(self.algo.tours(), forest, labels), update_index, "euler tours")


class MSTDriver(ConnectivityDriver):
    sizing = MST_SIZING
    preloaded = False

    def _build(self, runtime: Runtime) -> DynamicMST:
        return DynamicMST(runtime)

    def preprocess(self, edges: Sequence[Edge]) -> int:
        self.preloaded = bool(edges)
        return self.algo.preprocess(edges, epsilon=self.settings["epsilon"])

    def insert(self, u: int, v: int, weight: Optional[int]) -> None:
        self.algo.insert(u, v, weight)

    def dump(self) -> str:
        return format_forest(self.algo.forest_edges(), self.settings["weight_scale"])

    def check(self, graph: nx.Graph, update_index: int, metrics: UpdateMetrics) -> None:
        super().check(graph, update_index, metrics)
        weight, best = self.algo.forest_weight(), mst_oracle(graph)
        if not self.preloaded:
            _require(Verdict(weight == best, (weight, best)), update_index, "minimum forest weight")
        elif update_index == 0:
            bound = (1 + self.settings["epsilon"]) * best
            _require(Verdict(weight <= bound, (weight, best)), update_index, "approximate forest weight")


class SeqsimDriver(Driver):
    def __init__(self, runtime: Runtime, settings: Dict[str, Any]):
        super().__init__(runtime, settings)
        self.algorithm = ScanMatching()
        self.sim = SequentialSimulator(runtime, self.algorithm)
        self.accesses = 0

    def preprocess(self, edges: Sequence[Edge]) -> int:
        return self.sim.preprocess([(u, v) for u, v, _ in edges])

    def _step(self, op: Op, u: int, v: int) -> None:
        before = self.sim.memory.accesses
        self.sim.update(op, u, v)
        self.accesses = self.sim.memory.accesses - before

    def insert(self, u: int, v: int, weight: Optional[int]) -> None:
        self._step(Op.INSERT, u, v)

    def delete(self, u: int, v: int) -> None:
        self._step(Op.DELETE, u, v)

    def query(self, u: int, v: int) -> bool:
        self._step(Op.QUERY, u, v)
        return self.algorithm.mates(self.sim.memory).get(u) == v

    def dump(self) -> str:
        mates = self.algorithm.mates(self.sim.memory)
        return format_matching((v, w) for v, w in mates.items() if v < w)

    def check(self, graph: nx.Graph, update_index: int, metrics: UpdateMetrics) -> None:
        _require(check_maximal(graph, self.algorithm.mates(self.sim.memory)), update_index, "maximal matching")
        if not update_index:
            return
        limit = 2 * self.accesses + SEQ_ROUND_SLACK
        _require(Verdict(metrics.rounds <= limit, (metrics.rounds, limit)), update_index, "rounds per access")
        _require(
            Verdict(metrics.max_active_per_round <= SEQ_ACTIVE_LIMIT, metrics.max_active_per_round),
            update_index,
            "active machines per access",
        )
        _require(
            Verdict(metrics.max_comm_per_round <= SEQ_COMM_LIMIT, metrics.max_comm_per_round),
            update_index,
            "communication per access",
        )


ALGORITHMS: Dict[str, type[Driver]] = {
    "mm": MatchingDriver,
    "mm32": ThreeHalvesDriver,
    "cc": ConnectivityDriver,
    "mst": MSTDriver,
    "seqsim": SeqsimDriver,
}


# ---------------------------------------------------------------------------
# Harness
# ---------------------------------------------------------------------------

class Harness:
    """
    One run of one algorithm over one stream.

    A networkx shadow graph follows every update; it rejects updates the
    graph does not allow before they reach the algorithm and is what the
    oracles check against.

    Attributes:
        rows: Metrics of preprocessing (update_idx 0) and of every update.
        position: Index of the update being processed.
        checks: Oracle checkpoints passed.
    """

    def __init__(self, algo: str, stream: Stream, settings: Dict[str, Any], *, verify_every: int = 0):
        driver_cls = ALGORITHMS[algo]
        self.algo = algo
        self.stream = stream
        self.settings = settings
        self.verify_every = verify_every
        n = max(stream.n, 1)
        m_max = settings["m_max"] or stream.peak_edges()
        self.config = SimConfig.for_graph(
            n,
            m_max,
            **driver_cls.sizing,
            c_s=settings["cs"],
            c_m=settings["cm"],
            rng_seed=settings["seed"],
            weight_scale=settings["weight_scale"],
        )
        logger.info(
            "%s on n=%d m_max=%d: S=%d, mu=%d",
            algo, n, self.config.m_max, self.config.S, self.config.mu,
        )
        self.rt = Runtime(self.config, workers=settings["workers"])
        self.driver = driver_cls(self.rt, settings)
        self.graph = nx.Graph()
        self.graph.add_nodes_from(range(n))
        self.rows: List[UpdateMetrics] = []
        self.position = 0
        self.checks = 0
        self.preprocess_steps = 0

    def close(self) -> None:
        self.rt.close()

    def _due(self, index: int) -> bool:
        return bool(self.verify_every) and index % self.verify_every == 0

    def _add_to_shadow(self, u: int, v: int, weight: Optional[int]) -> None:
        if weight is None:
            self.graph.add_edge(u, v)
        else:
            self.graph.add_edge(u, v, weight=weight)

    def _verify(self, index: int, row: UpdateMetrics) -> None:
        if self._due(index):
            self.driver.check(self.graph, index, row)
            self.checks += 1

    def run(self) -> List[UpdateMetrics]:
        self.position = 0
        for u, v, weight in self.stream.preload:
            self._add_to_shadow(u, v, weight)
        if self._due(0):
            self.driver.before_check()
        self.preprocess_steps = self.driver.preprocess(self.stream.preload)
        row = self.rt.metrics_snapshot(0, "preprocess")
        self.rows.append(row)
        logger.info("preprocessing: %d steps, %d rounds", self.preprocess_steps, row.rounds)
        self._verify(0, row)

        for index, update in enumerate(self.stream.updates, start=1):
            self.position = index
            if self._due(index):
                self.driver.before_check()
            try:
                self._apply(update)
            except SimulatorFault as exc:
                exc.update_index = index
                raise
            row = self.rt.metrics_snapshot(index, update.op.symbol)
            self.rows.append(row)
            logger.debug(
                "update %d %s (%d, %d): %d rounds, %d active, %d words",
                index, update.op.symbol, update.u, update.v,
                row.rounds, row.max_active_per_round, row.total_comm,
            )
            self._verify(index, row)
        logger.info("%d updates processed, %d checks passed", len(self.stream.updates), self.checks)
        return self.rows

    def _apply(self, update: Update) -> None:
        op, u, v = update.op, update.u, update.v
        if op == Op.QUERY:
            self.driver.query(u, v)
        elif op == Op.INSERT:
            if u == v:
                raise SelfLoop(u)
            if self.graph.has_edge(u, v):
                raise DuplicateEdge(u, v)
            self.driver.insert(u, v, update.weight)
            self._add_to_shadow(u, v, update.weight)
        else:
            if not self.graph.has_edge(u, v):
                raise UnknownEdge(u, v)
            self.driver.delete(u, v)
            self.graph.remove_edge(u, v)

    def summary(self) -> Dict[str, Any]:
        updates = self.rows[1:]
        try:
            entropy: Optional[float] = round(comm_entropy(self.rt.rounds_log), 6)
        except NoCommunication:
            entropy = None
        return {
            "algorithm": self.algo,
            "config": self.config.to_dict(),
            "updates": len(updates),
            "preprocess_steps": self.preprocess_steps,
            "preprocess_rounds": self.rows[0].rounds if self.rows else 0,
            "max_rounds": max((r.rounds for r in updates), default=0),
            "max_active_per_round": max((r.max_active_per_round for r in updates), default=0),
            "max_comm_per_round": max((r.max_comm_per_round for r in updates), default=0),
            "total_comm": sum(r.total_comm for r in self.rows),
            "machines_used": self.rows[-1].machines_ever_used if self.rows else 0,
            "round_comm_cap": self.config.S * self.config.mu,
            "comm_entropy": entropy,
            "checks": self.checks,
        }


# ---------------------------------------------------------------------------
# Command line
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dmpc", description="DMPC simulator harness")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="flat key=value settings file")
    common.add_argument("--seed", type=int)
    common.add_argument("--log-level", choices=LOG_LEVELS)
    common.add_argument("--weight-scale", type=int)

    gen = sub.add_parser("gen", parents=[common], help="write a random update stream")
    gen.add_argument("--n", type=int, required=True)
    gen.add_argument("--updates", type=int, required=True)
    gen.add_argument("--insert-prob", type=float, default=0.7)
    gen.add_argument("--weighted", action="store_true")
    gen.add_argument("--queries", type=float, default=0.0, help="probability of a query line")
    gen.add_argument("--preload", type=int, default=0, help="number of preload edges")
    gen.add_argument("--tree-bias", type=float, default=0.0, help="share of deletions aimed at forest edges")
    gen.add_argument("--out", type=Path, required=True)

    for name, text in (("run", "run an algorithm over a stream"), ("verify", "run and check oracles")):
        cmd = sub.add_parser(name, parents=[common], help=text)
        cmd.add_argument("--algo", choices=sorted(ALGORITHMS), required=True)
        cmd.add_argument("--stream", type=Path, required=True)
        cmd.add_argument("--out-metrics", type=Path)
        cmd.add_argument("--out-dump", type=Path)
        cmd.add_argument("--out-summary", type=Path)
        cmd.add_argument("--epsilon", type=float)
        cmd.add_argument("--m-max", type=int)
        cmd.add_argument("--cs", type=float)
        cmd.add_argument("--cm", type=float)
        cmd.add_argument("--workers", type=int)
        if name == "verify":
            cmd.add_argument("--verify-every", type=int)
    return parser


def resolve_settings(args: argparse.Namespace) -> Dict[str, Any]:
    """Defaults and environment, then the config file, then flags."""
    settings = Config.as_dict()
    if args.config is not None:
        settings.update(load_config_file(args.config))
    for key in settings:
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = value
    return settings


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, VerificationFailed):
        return EXIT_VERIFY
    if isinstance(exc, SimulatorFault):
        return EXIT_FAULT
    return EXIT_INPUT


def _gen(args: argparse.Namespace, settings: Dict[str, Any]) -> int:
    stream = generate_stream(
        args.n,
        args.updates,
        args.insert_prob,
        seed=settings["seed"],
        weighted=args.weighted,
        queries=args.queries,
        preload=args.preload,
        scale=settings["weight_scale"],
        tree_bias=args.tree_bias,
    )
    atomic_write(args.out, format_stream(stream, settings["weight_scale"]))
    logger.info("wrote %d updates to %s", len(stream.updates), args.out)
    return EXIT_OK


def _run(args: argparse.Namespace, settings: Dict[str, Any]) -> int:
    stream = read_stream(args.stream, settings["weight_scale"])
    verify_every = settings["verify_every"] if args.command == "verify" else 0
    harness = Harness(args.algo, stream, settings, verify_every=verify_every)
    try:
        harness.run()
    except DmpcError:
        logger.error("%s stopped at update %d", args.algo, harness.position)
        raise
    finally:
        harness.close()
    if args.out_metrics:
        write_metrics(args.out_metrics, harness.rows)
    if args.out_dump:
        atomic_write(args.out_dump, harness.driver.dump())
    if args.out_summary:
        write_json(args.out_summary, harness.summary())
    if verify_every:
        print(f"verified: {harness.checks} checks passed over {len(stream.updates)} updates")
    return EXIT_OK


def main(argv: Optional[Iterable[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(None if argv is None else list(argv))
    try:
        settings = resolve_settings(args)
    except DmpcError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    logging.basicConfig(
        level=getattr(logging, settings["log_level"]),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "gen":
            return _gen(args, settings)
        return _run(args, settings)
    except DmpcError as exc:
        logger.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return exit_code(exc)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
