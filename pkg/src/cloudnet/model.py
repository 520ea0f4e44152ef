"""Domain types for substrate and virtual networks.

Nodes and links are both *network elements*. Links may have any number of
endpoints (shared channels); :func:`expand_links` turns every link into a
vertex so that the whole network becomes an ordinary graph whose edges are
the interfaces between elements.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from enum import Enum
from itertools import combinations
from typing import Iterable, Mapping

UNBOUNDED = math.inf

_ID_RE = re.compile(r"^[^\s,()]+$")


class ModelError(ValueError):
    """Raised for structurally broken network descriptions."""


class Layer(str, Enum):
    VIRTUAL = "virtual"
    SUBSTRATE = "substrate"


class Kind(str, Enum):
    NODE = "node"
    LINK = "link"


class ValueType(str, Enum):
    MINIMUM = "min"
    MAXIMUM = "max"
    CONSTANT = "const"


class ObjectiveKind(str, Enum):
    RESOURCE_MIN = "resource"
    LOAD_BALANCE = "load"


@dataclass(frozen=True)
class ResourceType:
    """A resource attribute such as ``/node/cpu`` or ``/link/upstream/bandwidth``.

    ``layer`` is the resource class. ``shared_capacity`` is the global capacity
    of a substrate resource (``UNBOUNDED`` when the resource is not shared),
    ``load_weight`` its weight in the load objective and ``min_alloc`` the
    smallest allocation unit of a virtual resource.
    """

    id: str
    attribute_path: str
    layer: Layer
    shared_capacity: float = UNBOUNDED
    load_weight: float = 1.0
    min_alloc: float = 0.0

    @property
    def is_half_duplex(self) -> bool:
        return "/symmetric/" in self.attribute_path and self.attribute_path.startswith("/link")


@dataclass(frozen=True)
class NetworkElement:
    id: str
    kind: Kind
    layer: Layer
    endpoints: tuple[str, ...] = ()
    # substrate only: resource id -> capacity
    capacities: Mapping[str, float] = field(default_factory=dict)
    # virtual only: (resource id, value type) -> amount
    requests: Mapping[tuple[str, ValueType], float] = field(default_factory=dict)

    @property
    def is_link(self) -> bool:
        return self.kind is Kind.LINK

    def capacity(self, resource: str) -> float:
        return self.capacities.get(resource, 0.0)

    def requested_resources(self) -> tuple[str, ...]:
        return tuple(sorted({r for r, _ in self.requests}))


@dataclass(frozen=True)
class ExpandedGraph:
    """Elements plus the interface edges created by link expansion."""

    elements: Mapping[str, NetworkElement]
    vertices: tuple[str, ...]
    edges: tuple[tuple[str, str], ...]  # (link, endpoint node)
    neighbors: Mapping[str, tuple[str, ...]]

    @property
    def arcs(self) -> tuple[tuple[str, str], ...]:
        """Ordered adjacent pairs, deterministic."""
        out = []
        for v in self.vertices:
            for w in self.neighbors[v]:
                out.append((v, w))
        return tuple(out)

    def distance(self, a: str, b: str) -> int | None:
        """Hop distance by breadth-first search, ``None`` if disconnected."""
        if a == b:
            return 0
        seen = {a}
        frontier = [a]
        depth = 0
        while frontier:
            depth += 1
            nxt = []
            for v in frontier:
                for w in self.neighbors[v]:
                    if w == b:
                        return depth
                    if w not in seen:
                        seen.add(w)
                        nxt.append(w)
            frontier = nxt
        return None


def expand_links(elements: Iterable[NetworkElement] | ExpandedGraph) -> ExpandedGraph:
    """Replace each link by a vertex joined to each of its endpoints.

    Node-node edges never exist. Applying the function to an already expanded
    graph returns an equal graph.
    """
    if isinstance(elements, ExpandedGraph):
        elements = elements.elements.values()
    by_id: dict[str, NetworkElement] = {}
    for e in elements:
        if e.id in by_id:
            raise ModelError(f"duplicate element id {e.id!r}")
        by_id[e.id] = e
    by_id = {k: by_id[k] for k in sorted(by_id)}

    nbrs: dict[str, set[str]] = {k: set() for k in by_id}
    edges = []
    for e in by_id.values():
        if not e.is_link:
            continue
        for p in e.endpoints:
            node = by_id.get(p)
            if node is None:
                raise ModelError(f"link {e.id!r} references missing node {p!r}")
            if node.is_link:
                raise ModelError(f"link {e.id!r} endpoint {p!r} is a link, not a node")
            if node.layer is not e.layer:
                raise ModelError(f"link {e.id!r} endpoint {p!r} is in another layer")
            if p not in nbrs[e.id]:
                edges.append((e.id, p))
            nbrs[e.id].add(p)
            nbrs[p].add(e.id)
    return ExpandedGraph(
        elements=by_id,
        vertices=tuple(by_id),
        edges=tuple(sorted(edges)),
        neighbors={k: tuple(sorted(v)) for k, v in nbrs.items()},
    )


def expand_flows(link: NetworkElement) -> tuple[tuple[str, str], ...]:
    """All endpoint pairs of a link, smaller id as source."""
    if len(set(link.endpoints)) < 2:
        raise ModelError(f"link {link.id!r} needs at least two endpoints")
    return tuple(combinations(sorted(set(link.endpoints)), 2))


@dataclass(frozen=True)
class SubstrateGraph:
    resources: Mapping[str, ResourceType]
    elements: Mapping[str, NetworkElement]
    # (v, w, substrate resource) -> capacity; missing means 0
    interface_capacities: Mapping[tuple[str, str, str], float] = field(default_factory=dict)
    # (virtual resource, substrate resource) -> scaling factor; missing means 0
    prop: Mapping[tuple[str, str], float] = field(default_factory=dict)

    def expanded(self) -> ExpandedGraph:
        return expand_links(self.elements.values())

    def substrate_resources(self) -> tuple[str, ...]:
        return tuple(sorted(r.id for r in self.resources.values() if r.layer is Layer.SUBSTRATE))

    def hosts_of(self, rv: str) -> tuple[str, ...]:
        """Substrate resources with a positive scaling factor for ``rv``."""
        return tuple(rs for rs in self.substrate_resources() if self.prop.get((rv, rs), 0.0) > 0)

    def interface_capacity(self, v: str, w: str, rs: str) -> float:
        return self.interface_capacities.get((v, w, rs), 0.0)

    def node_ids(self) -> tuple[str, ...]:
        return tuple(k for k, e in self.elements.items() if not e.is_link)

    def link_ids(self) -> tuple[str, ...]:
        return tuple(k for k, e in self.elements.items() if e.is_link)

    def with_capacities(self, element_caps, interface_caps, shared_caps=None) -> "SubstrateGraph":
        """Copy with replaced capacity tables (used for residual views)."""
        elements = {
            k: NetworkElement(e.id, e.kind, e.layer, e.endpoints,
                              {r: element_caps.get((k, r), 0.0) for r in e.capacities})
            for k, e in self.elements.items()
        }
        resources = dict(self.resources)
        if shared_caps:
            for rid, cap in shared_caps.items():
                r = resources[rid]
                resources[rid] = ResourceType(r.id, r.attribute_path, r.layer, cap, r.load_weight, r.min_alloc)
        return SubstrateGraph(resources, elements, dict(interface_caps), self.prop)


@dataclass(frozen=True)
class Request:
    """A CloudNet request: virtual elements plus the flow set of every link."""

    id: str
    elements: Mapping[str, NetworkElement]
    flows: Mapping[str, tuple[tuple[str, str], ...]] = field(default_factory=dict)

    @classmethod
    def create(cls, id: str, elements: Iterable[NetworkElement],
               flows: Mapping[str, Iterable[tuple[str, str]]] | None = None) -> "Request":
        els = {e.id: e for e in elements}
        fl = {}
        for k in sorted(els):
            e = els[k]
            if not e.is_link:
                continue
            if flows and k in flows:
                fl[k] = tuple(tuple(p) for p in flows[k])
            else:
                fl[k] = expand_flows(e)
        return cls(id, els, fl)

    def node_ids(self) -> tuple[str, ...]:
        return tuple(sorted(k for k, e in self.elements.items() if not e.is_link))

    def link_ids(self) -> tuple[str, ...]:
        return tuple(sorted(k for k, e in self.elements.items() if e.is_link))

    def element_ids(self) -> tuple[str, ...]:
        return self.node_ids() + self.link_ids()


@dataclass(frozen=True)
class PolicyMatrices:
    suit: Mapping[tuple[str, str], int] = field(default_factory=dict)
    weight: Mapping[tuple[str, str], float] = field(default_factory=dict)

    def suit_of(self, u: str, v: str) -> int:
        return self.suit.get((u, v), 1)

    def weight_of(self, u: str, v: str) -> float:
        return self.weight.get((u, v), 1.0)


DEFAULT_NODE_PENALTY = 1.0
LINK_PENALTY_SCALE = 1e-6


@dataclass(frozen=True)
class MigrationContext:
    old: frozenset[tuple[str, str]] = frozenset()
    penalty: Mapping[str, float] = field(default_factory=dict)
    transit: Mapping[tuple[str, str], float] = field(default_factory=dict)
    # transit charged for leaving towards any element without an explicit entry
    default_transit: float = 0.0

    def old_locations(self, u: str) -> tuple[str, ...]:
        return tuple(sorted(v for (x, v) in self.old if x == u))

    @property
    def is_fresh(self) -> bool:
        return not self.old

    def epsilon(self) -> float:
        largest = max(self.penalty.values(), default=0.0)
        return LINK_PENALTY_SCALE * (largest if largest > 0 else 1.0)

    def penalty_of(self, u: str, is_link: bool) -> float:
        if u in self.penalty:
            return self.penalty[u]
        return self.epsilon() if is_link else DEFAULT_NODE_PENALTY

    def transit_of(self, u: str, v: str) -> float:
        if (u, v) in self.transit:
            return self.transit[(u, v)]
        olds = self.old_locations(u)
        if olds and v not in olds:
            return self.default_transit
        return 0.0


@dataclass(frozen=True)
class ObjectiveConfig:
    """Which objective to minimise.

    ``c`` weights the peak load in the load-balancing objective; ``None``
    means the smallest admissible value, the sum of substrate load weights.
    """

    kind: ObjectiveKind = ObjectiveKind.RESOURCE_MIN
    c: float | None = None

    def priority(self, substrate: SubstrateGraph) -> float:
        lower = sum(substrate.resources[r].load_weight for r in substrate.substrate_resources())
        if self.c is None:
            return lower
        if self.c < lower - 1e-12:
            raise ModelError(f"load priority c={self.c} below sum of load weights {lower}")
        return self.c


@dataclass(frozen=True)
class EmbeddingProblem:
    substrate: SubstrateGraph
    request: Request
    policies: PolicyMatrices = field(default_factory=PolicyMatrices)
    migration: MigrationContext = field(default_factory=MigrationContext)
    objective: ObjectiveConfig = field(default_factory=ObjectiveConfig)


def validate_problem(problem: EmbeddingProblem) -> list[str]:
    """Every structural defect of ``problem``; empty means buildable."""
    report: list[str] = []
    sub = problem.substrate
    req = problem.request

    paths: dict[tuple[Layer, str], str] = {}
    for rid, r in sub.resources.items():
        if rid != r.id:
            report.append(f"resource key {rid!r} does not match id {r.id!r}")
        if not r.attribute_path:
            report.append(f"resource {rid!r} has an empty attribute path")
        elif (r.layer, r.attribute_path) in paths:
            report.append(f"resource {rid!r} repeats attribute path {r.attribute_path!r} "
                          f"of {paths[(r.layer, r.attribute_path)]!r}")
        else:
            paths[(r.layer, r.attribute_path)] = rid
        if r.shared_capacity < 0:
            report.append(f"resource {rid!r} has negative shared capacity")
        if not 0 <= r.load_weight <= 1:
            report.append(f"resource {rid!r} load weight {r.load_weight} outside [0,1]")
        if r.min_alloc < 0:
            report.append(f"resource {rid!r} has negative minimum allocation")

    def check_id(i: str, what: str) -> None:
        if not isinstance(i, str) or not _ID_RE.match(i):
            report.append(f"{what} id {i!r} is empty or contains whitespace, ',' or parentheses")

    def check_layer(elements: Mapping[str, NetworkElement], layer: Layer, what: str) -> None:
        for k, e in elements.items():
            check_id(k, what)
            if e.layer is not layer:
                report.append(f"{what} element {k!r} is in the {e.layer.value} layer")
            if e.is_link:
                if len(set(e.endpoints)) < 2:
                    report.append(f"{what} link {k!r} needs at least two endpoints")
                for p in e.endpoints:
                    target = elements.get(p)
                    if target is None:
                        report.append(f"{what} link {k!r} references missing node {p!r}")
                    elif target.is_link:
                        report.append(f"{what} link {k!r} endpoint {p!r} is a link")
            elif e.endpoints:
                report.append(f"{what} node {k!r} has endpoints")

    check_layer(sub.elements, Layer.SUBSTRATE, "substrate")
    check_layer(req.elements, Layer.VIRTUAL, "virtual")

    for k, e in sub.elements.items():
        if e.requests:
            report.append(f"substrate element {k!r} carries requests")
        for rid, cap in e.capacities.items():
            r = sub.resources.get(rid)
            if r is None or r.layer is not Layer.SUBSTRATE:
                report.append(f"substrate element {k!r} has capacity for unknown substrate resource {rid!r}")
            if not cap >= 0 or math.isinf(cap):
                report.append(f"substrate element {k!r} capacity {cap} for {rid!r} is negative or not finite")

    try:
        adjacent = set(sub.expanded().arcs)
    except ModelError:
        adjacent = set()
    for (v, w, rid), cap in sub.interface_capacities.items():
        if (v, w) not in adjacent:
            report.append(f"interface capacity ({v!r},{w!r}) does not join adjacent elements")
        r = sub.resources.get(rid)
        if r is None or r.layer is not Layer.SUBSTRATE:
            report.append(f"interface capacity ({v!r},{w!r}) uses unknown substrate resource {rid!r}")
        if not cap >= 0 or math.isinf(cap):
            report.append(f"interface capacity ({v!r},{w!r},{rid!r}) is negative or not finite")

    for (rv, rs), val in sub.prop.items():
        a, b = sub.resources.get(rv), sub.resources.get(rs)
        if a is None or a.layer is not Layer.VIRTUAL:
            report.append(f"prop entry uses unknown virtual resource {rv!r}")
        if b is None or b.layer is not Layer.SUBSTRATE:
            report.append(f"prop entry uses unknown substrate resource {rs!r}")
        if not val >= 0:
            report.append(f"prop({rv!r},{rs!r}) is negative")

    used: set[str] = set()
    for k, e in req.elements.items():
        if e.capacities:
            report.append(f"virtual element {k!r} carries capacities")
        per_res: dict[str, set[ValueType]] = {}
        for (rid, vt), amount in e.requests.items():
            r = sub.resources.get(rid)
            if r is None or r.layer is not Layer.VIRTUAL:
                report.append(f"virtual element {k!r} requests unknown virtual resource {rid!r}")
                continue
            used.add(rid)
            if not amount >= 0 or math.isinf(amount):
                report.append(f"virtual element {k!r} request {rid!r}/{vt.value} is negative or not finite")
            per_res.setdefault(rid, set()).add(vt)
        for rid, vts in per_res.items():
            if ValueType.CONSTANT in vts and len(vts) > 1:
                report.append(f"virtual element {k!r} mixes constant and min/max requests for {rid!r}")
        if e.is_link:
            flows = req.flows.get(k)
            if not flows:
                report.append(f"virtual link {k!r} has no flows")
                continue
            for a, b in flows:
                if a == b:
                    report.append(f"virtual link {k!r} flow ({a!r},{b!r}) has identical endpoints")
                for p in (a, b):
                    if p not in e.endpoints:
                        report.append(f"virtual link {k!r} flow endpoint {p!r} is not a link endpoint")
    for k in req.flows:
        if k not in req.elements or not req.elements[k].is_link:
            report.append(f"flow set given for unknown virtual link {k!r}")

    for rid in sorted(used):
        if not sub.hosts_of(rid):
            report.append(f"no substrate resource can host r_V {rid!r} (all prop entries are zero)")

    def check_pair(u: str, v: str, what: str) -> bool:
        ok = True
        if u not in req.elements:
            report.append(f"{what} entry references unknown virtual element {u!r}")
            ok = False
        if v not in sub.elements:
            report.append(f"{what} entry references unknown substrate element {v!r}")
            ok = False
        return ok

    for (u, v), s in problem.policies.suit.items():
        if check_pair(u, v, "suit") and s not in (0, 1):
            report.append(f"suit({u!r},{v!r})={s} is not binary")
    for (u, v), w in problem.policies.weight.items():
        if check_pair(u, v, "weight") and not 0 <= w <= 1:
            report.append(f"weight({u!r},{v!r})={w} outside [0,1]")

    mig = problem.migration
    for u, v in sorted(mig.old):
        check_pair(u, v, "old")
    for u in req.node_ids():
        olds = mig.old_locations(u)
        if olds and len(olds) != 1:
            report.append(f"virtual node {u!r} has {len(olds)} old locations, expected one")
    for u, p in mig.penalty.items():
        if u not in req.elements:
            report.append(f"penalty entry references unknown virtual element {u!r}")
        if not p > 0:
            report.append(f"penalty({u!r})={p} must be positive")
    for (u, v), t in mig.transit.items():
        if check_pair(u, v, "transit") and not t >= 0:
            report.append(f"transit({u!r},{v!r})={t} is negative")
    if mig.default_transit < 0:
        report.append("default transit cost is negative")

    if problem.objective.kind is ObjectiveKind.LOAD_BALANCE:
        try:
            problem.objective.priority(sub)
        except ModelError as exc:
            report.append(str(exc))
    return report
