"""Translate an :class:`EmbeddingProblem` into a solver-agnostic linear MIP.

Variable families (key tag in parentheses):

* ``new(u,v)`` element mapping, ``newf(l,q,d,v)`` flow mapping, ``mig(u)``
* ``alloc_v(u,v,rV)`` hosted and ``alloc_s(u,v,rV,rS)`` allocated resources
* ``flow_v(l,q,d,v,w,rV)`` and ``flow_s(l,q,d,v,w,rV,rS)`` per-flow interface use
* ``load(rS)`` and ``max_load()``

Allocations only exist for resources an element requests, and substrate
allocations only for substrate resources with a positive scaling factor.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping

from .model import (
    EmbeddingProblem,
    ModelError,
    ObjectiveConfig,
    ObjectiveKind,
    ValueType,
    validate_problem,
)

__all__ = [
    "Integrality", "Relation", "Variable", "LinearConstraint", "MipModel",
    "ObjectiveConfig", "ObjectiveKind", "FAMILIES", "build", "build_node_family",
    "build_mapping_family", "build_resource_relation_family", "build_link_family",
    "build_link_allocation_family", "build_migration_family", "build_objective",
    "evaluate_constraints", "evaluate_objective",
]

FAMILIES = (
    "map_node", "set_new", "req_min", "req_max", "req_con",
    "relate_V", "allowed", "ne_capacity", "capacity", "load", "max_load",
    "resource", "flow_res",
    "map_link", "map_src", "map_sink", "map_flow", "req_fmin", "req_fmax", "req_fconst",
    "exp_out", "exp_in", "direction", "relate_f",
    "new", "migrated",
)


class Integrality(str, Enum):
    BINARY = "binary"
    CONTINUOUS = "continuous"


class Relation(str, Enum):
    LE = "<="
    EQ = "="
    GE = ">="


def key_name(key: tuple[str, ...]) -> str:
    return f"{key[0]}({','.join(key[1:])})"


@dataclass(frozen=True)
class Variable:
    key: tuple[str, ...]
    lower: float = 0.0
    upper: float = math.inf
    integrality: Integrality = Integrality.CONTINUOUS

    def __post_init__(self):
        if self.integrality is Integrality.BINARY and (self.lower < 0 or self.upper > 1):
            raise ValueError(f"binary variable {self.name} must have bounds within [0,1]")

    @property
    def name(self) -> str:
        return key_name(self.key)

    @property
    def family(self) -> str:
        return self.key[0]


@dataclass(frozen=True)
class LinearConstraint:
    terms: tuple[tuple[str, float], ...]
    relation: Relation
    rhs: float
    family: str
    origin: tuple[str, ...]

    @property
    def name(self) -> str:
        return key_name((self.family,) + self.origin)

    def activity(self, values: Mapping[str, float]) -> float:
        return sum(c * values.get(n, 0.0) for n, c in self.terms)

    def violation(self, values: Mapping[str, float]) -> float:
        lhs = self.activity(values)
        if self.relation is Relation.LE:
            return max(0.0, lhs - self.rhs)
        if self.relation is Relation.GE:
            return max(0.0, self.rhs - lhs)
        return abs(lhs - self.rhs)


@dataclass
class MipModel:
    variables: dict[str, Variable]
    constraints: list[LinearConstraint]
    objective: dict[str, float]
    sense: str = "min"
    symbol_table: dict[str, tuple[str, ...]] = field(default_factory=dict)
    annotations: dict[str, str] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    def family_counts(self) -> dict[str, int]:
        counts = {f: 0 for f in FAMILIES}
        for c in self.constraints:
            counts[c.family] = counts.get(c.family, 0) + 1
        return counts

    def by_family(self, family: str) -> list[LinearConstraint]:
        return [c for c in self.constraints if c.family == family]

    def binaries(self) -> list[str]:
        return [n for n, v in self.variables.items() if v.integrality is Integrality.BINARY]


def evaluate_constraints(model: MipModel, values: Mapping[str, float], tol: float = 1e-6):
    """Constraints and variable bounds violated by ``values`` beyond ``tol``.

    Plain re-evaluation of the stored rows; shares nothing with the simplex.
    """
    bad = []
    for c in model.constraints:
        viol = c.violation(values)
        if viol > tol:
            bad.append((c.name, viol))
    for n, var in model.variables.items():
        x = values.get(n, 0.0)
        if x < var.lower - tol or x > var.upper + tol:
            bad.append((n, max(var.lower - x, x - var.upper)))
        if var.integrality is Integrality.BINARY and min(abs(x), abs(1 - x)) > tol:
            bad.append((n, min(abs(x), abs(1 - x))))
    return bad


def evaluate_objective(model: MipModel, values: Mapping[str, float]) -> float:
    return sum(c * values.get(n, 0.0) for n, c in model.objective.items())


def _lin(*pairs) -> tuple[tuple[str, float], ...]:
    """Merge (name, coef) pairs, keeping first-seen order, dropping zeros."""
    acc: dict[str, float] = {}
    for n, c in pairs:
        acc[n] = acc.get(n, 0.0) + c
    return tuple((n, c) for n, c in acc.items() if c != 0.0)


class ModelBuilder:
    """Declares every variable up front; each family method emits its rows."""

    def __init__(self, problem: EmbeddingProblem):
        self.p = problem
        self.sub = problem.substrate
        self.req = problem.request
        self.graph = self.sub.expanded()
        self.S = self.graph.vertices
        self.arcs = self.graph.arcs
        self.RS = self.sub.substrate_resources()
        self.nodes = self.req.node_ids()
        self.links = self.req.link_ids()
        self.elements = self.nodes + self.links
        self.res = {u: self.req.elements[u].requested_resources() for u in self.elements}
        self.hosts = {rv: self.sub.hosts_of(rv) for u in self.elements for rv in self.res[u]}
        self.flows = [(l, q, d) for l in self.links for (q, d) in self.req.flows[l]]
        self.variables: dict[str, Variable] = {}
        self.annotations: dict[str, str] = {}
        self.warnings: list[str] = []
        self._declare()

    # -- names ---------------------------------------------------------------
    @staticmethod
    def new(u, v):
        return f"new({u},{v})"

    @staticmethod
    def newf(f, v):
        return f"newf({f[0]},{f[1]},{f[2]},{v})"

    @staticmethod
    def mig(u):
        return f"mig({u})"

    @staticmethod
    def alloc_v(u, v, rv):
        return f"alloc_v({u},{v},{rv})"

    @staticmethod
    def alloc_s(u, v, rv, rs):
        return f"alloc_s({u},{v},{rv},{rs})"

    @staticmethod
    def flow_v(f, v, w, rv):
        return f"flow_v({f[0]},{f[1]},{f[2]},{v},{w},{rv})"

    @staticmethod
    def flow_s(f, v, w, rv, rs):
        return f"flow_s({f[0]},{f[1]},{f[2]},{v},{w},{rv},{rs})"

    @staticmethod
    def load(rs):
        return f"load({rs})"

    MAX_LOAD = "max_load()"

    def _var(self, key, integrality=Integrality.CONTINUOUS, upper=math.inf):
        var = Variable(tuple(key), 0.0, 1.0 if integrality is Integrality.BINARY else upper, integrality)
        if var.name in self.variables:
            raise ModelError(f"duplicate variable {var.name}")
        self.variables[var.name] = var

    def _declare(self):
        B = Integrality.BINARY
        for u in self.elements:
            self._var(("mig", u), B)
            for v in self.S:
                self._var(("new", u, v), B)
                for rv in self.res[u]:
                    self._var(("alloc_v", u, v, rv))
                    for rs in self.hosts[rv]:
                        self._var(("alloc_s", u, v, rv, rs))
        for f in self.flows:
            for v in self.S:
                self._var(("newf",) + f + (v,), B)
            for rv in self.res[f[0]]:
                for v, w in self.arcs:
                    self._var(("flow_v",) + f + (v, w, rv))
                    for rs in self.hosts[rv]:
                        self._var(("flow_s",) + f + (v, w, rv, rs))
        for rs in self.RS:
            self._var(("load", rs))
        self._var(("max_load",))

    def _row(self, out, terms, rel, rhs, family, *origin):
        out.append(LinearConstraint(_lin(*terms), rel, float(rhs), family, tuple(origin)))

    def _cap(self, v, rs):
        return self.sub.elements[v].capacity(rs)

    def _request(self, u, rv, vt):
        return self.req.elements[u].requests.get((rv, vt))

    # -- families ------------------------------------------------------------
    def node_family(self) -> list[LinearConstraint]:
        out: list[LinearConstraint] = []
        LE, EQ, GE = Relation.LE, Relation.EQ, Relation.GE
        for u in self.nodes:
            self._row(out, [(self.new(u, v), 1.0) for v in self.S], EQ, 1, "map_node", u)
        # set_new also gates link allocations so allocation implies mapping
        for u in self.elements:
            for v in self.S:
                for rv in self.res[u]:
                    for rs in self.hosts[rv]:
                        self._row(out, [(self.alloc_s(u, v, rv, rs), 1.0),
                                        (self.new(u, v), -self._cap(v, rs))],
                                  LE, 0, "set_new", u, v, rv, rs)
        for u in self.nodes:
            for rv in self.res[u]:
                for vt, rel, fam in ((ValueType.MINIMUM, GE, "req_min"),
                                     (ValueType.MAXIMUM, LE, "req_max"),
                                     (ValueType.CONSTANT, EQ, "req_con")):
                    amount = self._request(u, rv, vt)
                    if amount is None:
                        continue
                    for v in self.S:
                        self._row(out, [(self.alloc_v(u, v, rv), 1.0), (self.new(u, v), -amount)],
                                  rel, 0, fam, u, v, rv)
        return out

    def _load_scale(self, rs) -> float:
        r = self.sub.resources[rs]
        cap = r.shared_capacity
        if math.isinf(cap):
            cap = sum(self._cap(v, rs) for v in self.S)
        return r.load_weight / cap if cap > 0 else 0.0

    def _alloc_terms(self, rs, v=None):
        terms = []
        for u in self.elements:
            for vv in (self.S if v is None else (v,)):
                for rv in self.res[u]:
                    if rs in self.hosts[rv]:
                        terms.append(self.alloc_s(u, vv, rv, rs))
        return terms

    def mapping_family(self) -> list[LinearConstraint]:
        out: list[LinearConstraint] = []
        LE, GE = Relation.LE, Relation.GE
        for u in self.elements:
            for v in self.S:
                for rv in self.res[u]:
                    m = self.sub.resources[rv].min_alloc
                    if m > 0:
                        self._row(out, [(self.alloc_v(u, v, rv), 1.0), (self.new(u, v), -m)],
                                  GE, 0, "relate_V", u, v, rv)
        for u in self.elements:
            for v in self.S:
                self._row(out, [(self.new(u, v), 1.0)], LE, self.p.policies.suit_of(u, v),
                          "allowed", u, v)
        for v in self.S:
            for rs in self.RS:
                terms = self._alloc_terms(rs, v)
                if terms:
                    self._row(out, [(t, 1.0) for t in terms], LE, self._cap(v, rs),
                              "ne_capacity", v, rs)
        for rs in self.RS:
            shared = self.sub.resources[rs].shared_capacity
            terms = self._alloc_terms(rs)
            if terms and not math.isinf(shared):
                self._row(out, [(t, 1.0) for t in terms], LE, shared, "capacity", rs)
        for rs in self.RS:
            scale = self._load_scale(rs)
            terms = self._alloc_terms(rs)
            if terms and scale > 0:
                self._row(out, [(t, scale) for t in terms] + [(self.load(rs), -1.0)],
                          LE, 0, "load", rs)
        for rs in self.RS:
            self._row(out, [(self.load(rs), 1.0), (self.MAX_LOAD, -1.0)], LE, 0, "max_load", rs)
        return out

    def resource_relation_family(self) -> list[LinearConstraint]:
        out: list[LinearConstraint] = []
        prop = self.sub.prop
        for u in self.elements:
            for v in self.S:
                for rv in self.res[u]:
                    terms = [(self.alloc_s(u, v, rv, rs), prop[(rv, rs)]) for rs in self.hosts[rv]]
                    self._row(out, terms + [(self.alloc_v(u, v, rv), -1.0)], Relation.EQ, 0,
                              "resource", u, v, rv)
        for f in self.flows:
            for v, w in self.arcs:
                for rv in self.res[f[0]]:
                    terms = [(self.flow_s(f, v, w, rv, rs), prop[(rv, rs)]) for rs in self.hosts[rv]]
                    self._row(out, terms + [(self.flow_v(f, v, w, rv), -1.0)], Relation.EQ, 0,
                              "flow_res", *f, v, w, rv)
        return out

    def big_m(self, rv, amount: float = 0.0) -> float:
        """1 + ``amount`` + total scaled interface capacity reachable by ``rv``.

        The sink's net outflow is at least minus that capacity; adding the
        request amount keeps the row slack when source and sink share a host.
        """
        total = amount
        for v, w in self.arcs:
            for rs in self.hosts[rv]:
                total += self.sub.prop[(rv, rs)] * self.sub.interface_capacity(v, w, rs)
        return 1.0 + total

    def _net(self, f, v, rv):
        terms = []
        for w in self.graph.neighbors[v]:
            terms.append((self.flow_v(f, v, w, rv), 1.0))
            terms.append((self.flow_v(f, w, v, rv), -1.0))
        return terms

    def link_family(self) -> list[LinearConstraint]:
        out: list[LinearConstraint] = []
        LE, EQ, GE = Relation.LE, Relation.EQ, Relation.GE
        for u in self.links:
            self._row(out, [(self.new(u, v), 1.0) for v in self.S], GE, 1, "map_link", u)
        for f in self.flows:
            u, q, d = f
            for v in self.S:
                self._row(out, [(self.new(u, v), 1.0), (self.new(q, v), -1.0)], GE, 0,
                          "map_src", *f, v)
            for v in self.S:
                self._row(out, [(self.new(u, v), 1.0), (self.new(d, v), -1.0)], GE, 0,
                          "map_sink", *f, v)
        for f in self.flows:
            u, q, d = f
            for v in self.S:
                nf = self.newf(f, v)
                self._row(out, [(self.new(u, v), 1.0), (nf, -1.0)], GE, 0, "map_flow", *f, v, "in_link")
                self._row(out, [(nf, 1.0), (self.new(q, v), -1.0)], GE, 0, "map_flow", *f, v, "source")
                self._row(out, [(nf, 1.0), (self.new(d, v), -1.0)], GE, 0, "map_flow", *f, v, "sink")
        for f in self.flows:
            u, q, d = f
            for rv in self.res[u]:
                lo = self._request(u, rv, ValueType.MINIMUM)
                hi = self._request(u, rv, ValueType.MAXIMUM)
                M = self.big_m(rv, max(lo or 0.0, hi or 0.0))
                const = self._request(u, rv, ValueType.CONSTANT)
                for v in self.S:
                    net = self._net(f, v, rv)
                    if lo is not None:
                        self._row(out, net + [(self.new(q, v), -lo), (self.new(d, v), M)],
                                  GE, 0, "req_fmin", *f, v, rv)
                        self.annotations[out[-1].name] = f"big-M={M!r}"
                    if hi is not None:
                        self._row(out, net + [(self.new(q, v), -hi), (self.new(d, v), -M)],
                                  LE, 0, "req_fmax", *f, v, rv)
                        self.annotations[out[-1].name] = f"big-M={M!r}"
                    if const is not None:
                        self._row(out, net + [(self.new(q, v), -const), (self.new(d, v), const)],
                                  EQ, 0, "req_fconst", *f, v, rv)
                if (hi is not None or const is not None) and any(
                        self.sub.resources[rs].is_half_duplex for rs in self.hosts[rv]):
                    self.warnings.append(
                        f"link {u!r}: maximum/constant request on {rv!r} over a half-duplex "
                        "substrate resource is not strictly enforceable")
        return out

    def flow_epsilon(self, u) -> float:
        mins = [self.sub.resources[rv].min_alloc for rv in self.res[u]]
        return min(min(mins, default=0.0), 1.0)

    def link_allocation_family(self) -> list[LinearConstraint]:
        out: list[LinearConstraint] = []
        LE, GE = Relation.LE, Relation.GE
        nb = self.graph.neighbors
        for f in self.flows:
            u = f[0]
            for v in self.S:
                for rv in self.res[u]:
                    for rs in self.hosts[rv]:
                        a = self.alloc_s(u, v, rv, rs)
                        self._row(out, [(self.flow_s(f, v, w, rv, rs), 1.0) for w in nb[v]] + [(a, -1.0)],
                                  LE, 0, "exp_out", *f, v, rv, rs)
                        self._row(out, [(self.flow_s(f, w, v, rv, rs), 1.0) for w in nb[v]] + [(a, -1.0)],
                                  LE, 0, "exp_in", *f, v, rv, rs)
        for f in self.flows:
            u = f[0]
            for v, w in self.arcs:
                for rv in self.res[u]:
                    for rs in self.hosts[rv]:
                        self._row(out, [(self.flow_s(f, v, w, rv, rs), 1.0),
                                        (self.new(u, v), -self.sub.interface_capacity(v, w, rs))],
                                  LE, 0, "direction", *f, v, w, rv, rs)
        for f in self.flows:
            u = f[0]
            eps = self.flow_epsilon(u)
            if eps <= 0:
                continue
            for v in self.S:
                for rv in self.res[u]:
                    terms = []
                    for w in nb[v]:
                        terms += [(self.flow_v(f, v, w, rv), 1.0), (self.flow_v(f, w, v, rv), 1.0)]
                    self._row(out, terms + [(self.new(u, v), -eps)], GE, 0, "relate_f", *f, v, rv)
        return out

    def migration_family(self) -> list[LinearConstraint]:
        out: list[LinearConstraint] = []
        mig = self.p.migration
        for u in self.elements:
            olds = mig.old_locations(u)
            self._row(out, [(self.mig(u), 1.0)], Relation.LE, len(olds), "new", u)
        for u in self.elements:
            for v in mig.old_locations(u):
                # old(u,v) - new(u,v) <= mig(u) with old(u,v) = 1
                self._row(out, [(self.new(u, v), 1.0), (self.mig(u), 1.0)], Relation.GE, 1,
                          "migrated", u, v)
        return out

    def objective(self, config: ObjectiveConfig | None = None) -> dict[str, float]:
        config = config or self.p.objective
        obj: dict[str, float] = {}

        def add(n, c):
            if c != 0.0:
                obj[n] = obj.get(n, 0.0) + c

        if config.kind is ObjectiveKind.RESOURCE_MIN:
            for u in self.elements:
                for v in self.S:
                    w = self.p.policies.weight_of(u, v)
                    for rv in self.res[u]:
                        for rs in self.hosts[rv]:
                            add(self.alloc_s(u, v, rv, rs), w)
        else:
            add(self.MAX_LOAD, config.priority(self.sub))
            for rs in self.RS:
                add(self.load(rs), 1.0)
        mig = self.p.migration
        for u in self.elements:
            add(self.mig(u), mig.penalty_of(u, u in self.links))
            for v in self.S:
                add(self.new(u, v), mig.transit_of(u, v))
        return obj

    def model(self) -> MipModel:
        constraints = (self.node_family() + self.mapping_family() + self.resource_relation_family()
                       + self.link_family() + self.link_allocation_family() + self.migration_family())
        return MipModel(
            variables=dict(self.variables),
            constraints=constraints,
            objective=self.objective(),
            symbol_table={n: v.key for n, v in self.variables.items()},
            annotations=dict(self.annotations),
            warnings=list(self.warnings),
        )


def _checked(problem: EmbeddingProblem) -> ModelBuilder:
    report = validate_problem(problem)
    if report:
        raise ModelError("problem is not buildable:\n  " + "\n  ".join(report))
    return ModelBuilder(problem)


def build(problem: EmbeddingProblem) -> MipModel:
    """Complete model for ``problem`` with its configured objective."""
    return _checked(problem).model()


def build_node_family(problem: EmbeddingProblem) -> list[LinearConstraint]:
    return _checked(problem).node_family()


def build_mapping_family(problem: EmbeddingProblem) -> list[LinearConstraint]:
    return _checked(problem).mapping_family()


def build_resource_relation_family(problem: EmbeddingProblem) -> list[LinearConstraint]:
    return _checked(problem).resource_relation_family()


def build_link_family(problem: EmbeddingProblem) -> list[LinearConstraint]:
    return _checked(problem).link_family()


def build_link_allocation_family(problem: EmbeddingProblem) -> list[LinearConstraint]:
    return _checked(problem).link_allocation_family()


def build_migration_family(problem: EmbeddingProblem) -> list[LinearConstraint]:
    return _checked(problem).migration_family()


def build_objective(problem: EmbeddingProblem, config: ObjectiveConfig | None = None) -> dict[str, float]:
    return _checked(problem).objective(config)


def constraint_families(constraints: Iterable[LinearConstraint]) -> set[str]:
    return {c.family for c in constraints}
