"""Desk-scale experiment runs: topologies, random requests, iterative embedding.

Default magnitudes: each virtual node asks for one slot and each virtual
link for one bandwidth unit; substrate nodes offer 15 slots and links 15
bandwidth units per interface. Substrate nodes forward traffic, so they also
carry bandwidth capacity equal to the sum of their incident links.
"""
from __future__ import annotations

import csv
import io as _io
import logging
import math
import statistics
import time
from dataclasses import asdict, dataclass, field
from enum import Enum
from importlib import resources as _res
from typing import Sequence

import numpy as np

from .engine import MigrationInputs, Rejection, apply_plan, commit, embed, reembed
from .io import ParseError
from .model import (
    Kind,
    Layer,
    ModelError,
    NetworkElement,
    ObjectiveConfig,
    ObjectiveKind,
    PolicyMatrices,
    Request,
    ResourceType,
    SubstrateGraph,
    ValueType,
    _ID_RE,
)
from .solver import SolverConfig
from .state import SubstrateState

log = logging.getLogger("cloudnet")

SLOT, BW, VSLOT, VBW = "slot", "bw", "vslot", "vbw"


class Scenario(str, Enum):
    VPN = "vpn"
    OC = "oc"
    DC = "dc"


class GenerationError(ModelError):
    pass


def standard_resources() -> dict[str, ResourceType]:
    return {
        SLOT: ResourceType(SLOT, "/node/slot", Layer.SUBSTRATE),
        BW: ResourceType(BW, "/link/symmetric/bandwidth", Layer.SUBSTRATE),
        VSLOT: ResourceType(VSLOT, "/node/slot", Layer.VIRTUAL),
        VBW: ResourceType(VBW, "/link/symmetric/bandwidth", Layer.VIRTUAL),
    }


STANDARD_PROP = {(VSLOT, SLOT): 1.0, (VBW, BW): 1.0}


@dataclass(frozen=True)
class Topology:
    nodes: tuple[str, ...]
    edges: tuple[tuple[str, str, float | None], ...]  # (a, b, bandwidth or None)
    slots: dict[str, float] = field(default_factory=dict)

    def adjacency(self) -> dict[str, list[str]]:
        adj: dict[str, set[str]] = {n: set() for n in self.nodes}
        for a, b, _ in self.edges:
            adj[a].add(b)
            adj[b].add(a)
        return {n: sorted(v) for n, v in adj.items()}


def parse_edge_list(document: str, warnings: list[str] | None = None) -> Topology:
    """Undirected edge list ``a b [bw=x]`` with ``@node a slots=n`` lines.

    ``#`` starts a comment. Duplicate edges are dropped with a warning.
    """
    warnings = warnings if warnings is not None else []
    nodes: dict[str, None] = {}
    edges: dict[frozenset, tuple[str, str, float | None]] = {}
    slots: dict[str, float] = {}

    def node_id(tok, ln):
        if not _ID_RE.match(tok):
            raise ParseError(f"bad node id {tok!r}", ln)
        return tok

    def attrs(tokens, ln, allowed):
        out = {}
        for t in tokens:
            key, sep, val = t.partition("=")
            if not sep or key not in allowed:
                raise ParseError(f"unexpected token {t!r}", ln)
            try:
                out[key] = float(val)
            except ValueError:
                raise ParseError(f"bad number in {t!r}", ln) from None
            if not out[key] >= 0 or math.isinf(out[key]):
                raise ParseError(f"{key} must be a finite nonnegative number", ln)
        return out

    for ln, raw in enumerate(document.splitlines(), 1):
        toks = raw.split("#", 1)[0].split()
        if not toks:
            continue
        if toks[0] == "@node":
            if len(toks) < 2:
                raise ParseError("@node needs a node id", ln)
            n = node_id(toks[1], ln)
            nodes.setdefault(n)
            a = attrs(toks[2:], ln, {"slots"})
            if "slots" in a:
                slots[n] = a["slots"]
            continue
        if len(toks) < 2:
            raise ParseError("expected 'nodeA nodeB'", ln)
        a, b = node_id(toks[0], ln), node_id(toks[1], ln)
        if a == b:
            raise ParseError(f"self loop on {a!r}", ln)
        bw = attrs(toks[2:], ln, {"bw"}).get("bw")
        key = frozenset((a, b))
        nodes.setdefault(a)
        nodes.setdefault(b)
        if key in edges:
            warnings.append(f"line {ln}: duplicate edge {a} {b} ignored")
            continue
        edges[key] = (min(a, b), max(a, b), bw)
    topo = Topology(tuple(sorted(nodes)), tuple(sorted(edges.values())), slots)
    if topo.nodes and len(_component(topo.adjacency(), topo.nodes[0])) < len(topo.nodes):
        warnings.append("topology is not connected")
    for w in warnings:
        log.warning(w)
    return topo


def _component(adj, start) -> set[str]:
    seen = {start}
    stack = [start]
    while stack:
        v = stack.pop()
        for w in adj[v]:
            if w not in seen:
                seen.add(w)
                stack.append(w)
    return seen


def link_id(a: str, b: str) -> str:
    return f"{a}--{b}"


def topology_substrate(topo: Topology, slots: float = 15, bandwidth: float = 15) -> SubstrateGraph:
    """Substrate with a slot resource on nodes and bandwidth on links."""
    elements = {}
    interfaces = {}
    forward: dict[str, float] = {n: 0.0 for n in topo.nodes}
    for a, b, bw in topo.edges:
        cap = float(bandwidth if bw is None else bw)
        lid = link_id(a, b)
        if lid in topo.nodes:
            raise ParseError(f"link id {lid!r} clashes with a node id")
        elements[lid] = NetworkElement(lid, Kind.LINK, Layer.SUBSTRATE, (a, b), {BW: cap})
        for p in (a, b):
            interfaces[(lid, p, BW)] = cap
            interfaces[(p, lid, BW)] = cap
            forward[p] += cap
    for n in topo.nodes:
        elements[n] = NetworkElement(n, Kind.NODE, Layer.SUBSTRATE, (),
                                     {SLOT: float(topo.slots.get(n, slots)), BW: forward[n]})
    return SubstrateGraph(standard_resources(), dict(sorted(elements.items())), interfaces,
                          dict(STANDARD_PROP))


def load_topology(document: str, slots: float = 15, bandwidth: float = 15,
                  warnings: list[str] | None = None) -> SubstrateGraph:
    return topology_substrate(parse_edge_list(document, warnings), slots, bandwidth)


def random_walk(adj: dict[str, list[str]], size: int, rng: np.random.Generator,
                start: str | None = None, max_steps: int | None = None):
    """Visit ``size`` distinct nodes by a random walk.

    Returns the nodes in visiting order and the distinct edges walked. Raises
    :class:`GenerationError` when the step budget (100 per node) runs out.
    """
    names = sorted(adj)
    if size > len(names):
        raise GenerationError(f"cannot sample {size} nodes from a graph with {len(names)}")
    if size <= 0:
        raise GenerationError("sample size must be positive")
    cur = start if start is not None else names[int(rng.integers(len(names)))]
    order = [cur]
    seen = {cur}
    walked: dict[frozenset, tuple[str, str]] = {}
    budget = max_steps if max_steps is not None else 100 * size
    steps = 0
    while len(order) < size:
        if steps >= budget or not adj[cur]:
            raise GenerationError(f"random walk found only {len(order)} of {size} nodes")
        nxt = adj[cur][int(rng.integers(len(adj[cur])))]
        walked.setdefault(frozenset((cur, nxt)), (min(cur, nxt), max(cur, nxt)))
        if nxt not in seen:
            seen.add(nxt)
            order.append(nxt)
        cur = nxt
        steps += 1
    return order, sorted(walked.values())


def connected_subset(topo: Topology, size: int, rng: np.random.Generator, retries: int = 20) -> Topology:
    """Induced subgraph on ``size`` nodes found by a random walk."""
    adj = topo.adjacency()
    last = None
    for _ in range(retries):
        try:
            order, _ = random_walk(adj, size, rng)
            break
        except GenerationError as exc:
            last = exc
    else:
        raise last
    chosen = set(order)
    return Topology(tuple(sorted(chosen)),
                    tuple(e for e in topo.edges if e[0] in chosen and e[1] in chosen),
                    {k: v for k, v in topo.slots.items() if k in chosen})


def synthetic_edge_list(n: int, seed: int, m: int = 2) -> str:
    """Preferential-attachment graph as an edge list (always connected)."""
    rng = np.random.default_rng(seed)
    names = [f"s{i:02d}" for i in range(n)]
    edges = set()
    degree = np.zeros(n)
    for i in range(1, n):
        k = min(m, i)
        weights = degree[:i] + 1.0
        targets = rng.choice(i, size=k, replace=False, p=weights / weights.sum())
        for t in targets:
            edges.add((int(t), i))
            degree[t] += 1
            degree[i] += 1
    lines = [f"{names[a]} {names[b]}" for a, b in sorted(edges)]
    return "\n".join(lines) + "\n"


def default_topology_text() -> str:
    return _res.files("cloudnet").joinpath("data/topology.txt").read_text()


@dataclass(frozen=True)
class ScenarioConfig:
    scenario: Scenario = Scenario.OC
    freedom: float | None = None
    cr_range: tuple[int, int] = (1, 3)
    ap_range: tuple[int, int] = (1, 7)
    substrate_size: int = 10
    element_capacity_slots: int = 15
    link_bandwidth: float = 15.0
    repetitions: int = 10
    seed: int = 0
    migration: bool = False
    objective: ObjectiveConfig = field(default_factory=ObjectiveConfig)
    max_requests: int = 20
    node_demand: float = 1.0
    link_demand: float = 1.0
    topology: str | None = None  # edge-list path; None uses the bundled topology
    time_limit: float = math.inf

    def __post_init__(self):
        object.__setattr__(self, "scenario", Scenario(self.scenario))
        if self.scenario is Scenario.VPN and self.freedom not in (None, 0, 0.0):
            raise ValueError("the VPN scenario has freedom 0")
        if self.scenario is Scenario.DC and self.freedom not in (None, 1, 1.0):
            raise ValueError("the DC scenario has freedom 1")
        if self.freedom is not None and not 0 <= self.freedom <= 1:
            raise ValueError("freedom must lie in [0,1]")
        for name in ("cr_range", "ap_range"):
            lo, hi = getattr(self, name)
            if not 0 <= lo <= hi:
                raise ValueError(f"{name} must satisfy 0 <= low <= high")
            object.__setattr__(self, name, (int(lo), int(hi)))
        if self.cr_range[1] + self.ap_range[1] < 1:
            raise ValueError("requests need at least one node")
        for name in ("substrate_size", "element_capacity_slots", "repetitions", "max_requests"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")

    @property
    def effective_freedom(self) -> float | None:
        if self.scenario is Scenario.VPN:
            return 0.0
        if self.scenario is Scenario.DC:
            return 1.0
        return self.freedom

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        d = dict(d)
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
        if "objective" in d:
            o = d["objective"]
            if isinstance(o, str):
                o = {"kind": o}
            d["objective"] = ObjectiveConfig(ObjectiveKind(o.get("kind", "resource")), o.get("c"))
        for k in ("cr_range", "ap_range"):
            if k in d:
                d[k] = tuple(d[k])
        if d.get("time_limit") is None:
            d.pop("time_limit", None)
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["scenario"] = self.scenario.value
        d["objective"] = {"kind": self.objective.kind.value, "c": self.objective.c}
        d["cr_range"] = list(self.cr_range)
        d["ap_range"] = list(self.ap_range)
        d["time_limit"] = None if math.isinf(self.time_limit) else self.time_limit
        return d


def _range_draw(rng, lo_hi) -> int:
    lo, hi = lo_hi
    return int(rng.integers(lo, hi + 1))


def generate_request(config: ScenarioConfig, substrate: SubstrateGraph, rng: np.random.Generator,
                     index: int = 0) -> tuple[Request, PolicyMatrices]:
    """Random connected request shaped like a piece of the substrate.

    Access points (fixed nodes) may only sit on the substrate node they were
    sampled at; cloud resources (flexible nodes) may use any substrate node.
    """
    nodes = substrate.node_ids()
    adj: dict[str, set[str]] = {n: set() for n in nodes}
    for lid in substrate.link_ids():
        ends = substrate.elements[lid].endpoints
        for a in ends:
            for b in ends:
                if a != b:
                    adj[a].add(b)
    adj_sorted = {n: sorted(v) for n, v in adj.items()}

    cr = _range_draw(rng, config.cr_range)
    ap = _range_draw(rng, config.ap_range)
    size = max(1, cr + ap)
    if size > len(nodes):
        raise GenerationError(f"request of {size} nodes exceeds substrate of {len(nodes)}")
    freedom = config.effective_freedom
    flexible = cr if freedom is None else int(round(freedom * size))
    order, walked = random_walk(adj_sorted, size, rng)
    picks = rng.permutation(size)
    flexible_set = {int(i) for i in picks[:flexible]}

    rid = f"r{index}"
    vid = {s: f"n{i}" for i, s in enumerate(order)}
    elements = [NetworkElement(vid[s], Kind.NODE, Layer.VIRTUAL, (), {},
                               {(VSLOT, ValueType.MINIMUM): config.node_demand})
                for s in order]
    for k, (a, b) in enumerate(walked):
        elements.append(NetworkElement(f"e{k}", Kind.LINK, Layer.VIRTUAL, (vid[a], vid[b]), {},
                                       {(VBW, ValueType.MINIMUM): config.link_demand}))
    suit = {}
    for i, s in enumerate(order):
        u = vid[s]
        for v in substrate.elements:
            if i in flexible_set:
                suit[(u, v)] = 0 if substrate.elements[v].is_link else 1
            else:
                suit[(u, v)] = 1 if v == s else 0
    return Request.create(rid, elements), PolicyMatrices(suit)


@dataclass(frozen=True)
class RunRecord:
    run: int
    request_index: int
    accepted: bool
    wall_ms: float
    nodes_explored: int
    objective: float | None
    migrations: int
    lp_iterations: int = 0


METRIC_COLUMNS = ("run", "request_index", "accepted", "wall_ms", "nodes_explored", "objective", "migrations")
TIME_COLUMNS = ("wall_ms",)


def experiment_substrate(config: ScenarioConfig) -> SubstrateGraph:
    text = default_topology_text() if config.topology is None else open(config.topology).read()
    topo = parse_edge_list(text)
    rng = np.random.default_rng([config.seed, 0x5B])
    if config.substrate_size < len(topo.nodes):
        topo = connected_subset(topo, config.substrate_size, rng)
    elif config.substrate_size > len(topo.nodes):
        raise GenerationError(f"topology has only {len(topo.nodes)} nodes")
    return topology_substrate(topo, config.element_capacity_slots, config.link_bandwidth)


def run_repetition(config: ScenarioConfig, run: int, substrate: SubstrateGraph,
                   solver: SolverConfig) -> list[RunRecord]:
    rng = np.random.default_rng([config.seed, run + 1])
    state = SubstrateState(substrate)
    records = []
    for idx in range(config.max_requests):
        request, policies = generate_request(config, substrate, rng, idx)
        t0 = time.perf_counter()
        result = embed(state, request, policies, config.objective, solver)
        migrations = 0
        if not isinstance(result, Rejection):
            state = commit(state, result)
            if config.migration:
                plan = reembed(state, config.objective, MigrationInputs(), solver)
                if plan.improvement > 1e-9:
                    state = apply_plan(state, plan)
                    migrations = plan.migrations
        wall = (time.perf_counter() - t0) * 1e3
        accepted = not isinstance(result, Rejection)
        records.append(RunRecord(run, idx, accepted, wall, int(result.stats.get("nodes", 0)),
                                 result.objective if accepted else None, migrations,
                                 int(result.stats.get("lp_iterations", 0))))
        if not accepted:
            break
    return records


@dataclass
class ExperimentResult:
    config: ScenarioConfig
    records: list[RunRecord]

    def summary(self) -> dict:
        return summarize(self.records)


def run_experiment(config: ScenarioConfig, solver: SolverConfig | None = None) -> ExperimentResult:
    """Embed requests until the first rejection or the request budget, per run."""
    solver = solver or SolverConfig(time_limit=config.time_limit)
    substrate = experiment_substrate(config)
    records = []
    for run in range(config.repetitions):
        records.extend(run_repetition(config, run, substrate, solver))
    return ExperimentResult(config, records)


def summarize(records: Sequence[RunRecord]) -> dict:
    runs = sorted({r.run for r in records})
    times = [r.wall_ms for r in records if r.accepted]
    per_run = {str(k): sum(1 for r in records if r.run == k and r.accepted) for k in runs}
    return {
        "runs": len(runs),
        "accepted_total": sum(per_run.values()),
        "accepted_per_run": per_run,
        "wall_ms_mean": statistics.fmean(times) if times else None,
        "wall_ms_median": statistics.median(times) if times else None,
        "wall_ms_max": max(times) if times else None,
        "nodes_median": statistics.median([r.nodes_explored for r in records]) if records else None,
    }


def _fmt(col: str, rec: RunRecord, json_mode: bool) -> str:
    v = getattr(rec, col)
    if col == "accepted":
        return ("true" if v else "false") if json_mode else ("1" if v else "0")
    if col == "wall_ms":
        return f"{v:.3f}"
    if col == "objective":
        if v is None:
            return "null" if json_mode else ""
        return f"{v:.6f}"
    return str(int(v))


def emit_metrics(records: Sequence[RunRecord], fmt: str = "csv") -> str:
    """CSV table or JSON lines with fixed column order and decimal places."""
    if fmt == "csv":
        lines = [",".join(METRIC_COLUMNS)]
        lines += [",".join(_fmt(c, r, False) for c in METRIC_COLUMNS) for r in records]
        return "\n".join(lines) + "\n"
    if fmt in ("jsonl", "json-lines", "jsonlines"):
        return "".join("{" + ", ".join(f'"{c}": {_fmt(c, r, True)}' for c in METRIC_COLUMNS) + "}\n"
                       for r in records)
    raise ValueError(f"unknown metrics format {fmt!r}")


def parse_metrics_csv(text: str) -> list[dict]:
    rows = list(csv.DictReader(_io.StringIO(text)))
    out = []
    for row in rows:
        out.append({
            "run": int(row["run"]), "request_index": int(row["request_index"]),
            "accepted": row["accepted"] == "1", "wall_ms": float(row["wall_ms"]),
            "nodes_explored": int(row["nodes_explored"]),
            "objective": float(row["objective"]) if row["objective"] else None,
            "migrations": int(row["migrations"]),
        })
    return out
