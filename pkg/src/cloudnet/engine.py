"""Embedding lifecycle: embed, verify, commit, withdraw, re-embed, what-if."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping

from .builder import ModelBuilder, build
from .checker import Violation, verify_embedding
from .model import (
    EmbeddingProblem,
    MigrationContext,
    ModelError,
    NetworkElement,
    ObjectiveConfig,
    ObjectiveKind,
    PolicyMatrices,
    Request,
    SubstrateGraph,
)
from .solver import MilpSolution, MilpStatus, SolverConfig, solve_milp
from .state import CommitError, Embedding, SubstrateState

ZERO = 1e-9


@dataclass(frozen=True)
class Rejection:
    request_id: str
    status: str
    note: str = ""
    infeasible_families: tuple[str, ...] = ()
    stats: Mapping[str, float] = field(default_factory=dict)


@dataclass(frozen=True)
class MigrationInputs:
    """Cost inputs for re-embedding; unspecified entries use the defaults of
    :class:`MigrationContext`."""

    penalty: Mapping[str, float] = field(default_factory=dict)
    transit: Mapping[tuple[str, str], float] = field(default_factory=dict)
    default_transit: float = 0.0

    def context(self, old: Iterable[tuple[str, str]], elements: Iterable[str]) -> MigrationContext:
        names = set(elements)
        return MigrationContext(
            frozenset(old),
            {u: p for u, p in self.penalty.items() if u in names},
            {k: t for k, t in self.transit.items() if k[0] in names},
            self.default_transit,
        )


def _stats(sol: MilpSolution) -> dict[str, float]:
    return {"nodes": sol.stats.nodes, "lp_iterations": sol.stats.lp_iterations,
            "wall_time": sol.stats.wall_time}


def decode(problem: EmbeddingProblem, sol: MilpSolution) -> Embedding:
    """Turn solver values into an :class:`Embedding`."""
    req = problem.request
    mig = problem.migration
    sub = problem.substrate
    S = sorted(sub.elements)
    x = sol.values
    mapping = {u: tuple(v for v in S if x.get(ModelBuilder.new(u, v), 0.0) > 0.5)
               for u in req.element_ids()}
    allocations = {}
    flows = {}
    for name, val in x.items():
        if val <= ZERO:
            continue
        tag, _, rest = name.partition("(")
        ids = tuple(rest[:-1].split(","))
        if tag == "alloc_s":
            allocations[ids] = val
        elif tag == "flow_s":
            flows[ids] = val
    migrations = frozenset(u for u in req.element_ids() if x.get(ModelBuilder.mig(u), 0.0) > 0.5)
    cost = math.fsum([mig.penalty_of(u, req.elements[u].is_link) for u in migrations]
                     + [mig.transit_of(u, v) for u, vs in mapping.items() for v in vs])
    return Embedding(req, problem.policies, mig, problem.objective, mapping,
                     dict(sorted(allocations.items())), dict(sorted(flows.items())),
                     migrations, sol.objective, cost, _stats(sol))


def _solve(problem: EmbeddingProblem, config: SolverConfig) -> MilpSolution:
    return solve_milp(build(problem), config)


def _attempt(state: SubstrateState, problem: EmbeddingProblem,
             config: SolverConfig) -> Embedding | Rejection:
    sol = _solve(problem, config)
    rid = problem.request.id
    if not sol.has_solution:
        note = "; ".join(sol.warnings)
        if sol.status is MilpStatus.INFEASIBLE and sol.infeasible_families:
            note = ("root LP infeasible; families in the proof: "
                    + ", ".join(sol.infeasible_families) + (f"; {note}" if note else ""))
        return Rejection(rid, sol.status.value, note, sol.infeasible_families, _stats(sol))
    emb = decode(problem, sol)
    report = verify_embedding(state, emb)
    if report:
        return Rejection(rid, "unverified", "; ".join(map(str, report[:5])), (), _stats(sol))
    return emb


def embed(state: SubstrateState, request: Request, policies: PolicyMatrices | None = None,
          objective: ObjectiveConfig | None = None,
          solver: SolverConfig | None = None) -> Embedding | Rejection:
    """Embed a fresh request against the residual capacities of ``state``."""
    if request.id in state.committed:
        raise ModelError(f"request {request.id!r} is already committed")
    problem = EmbeddingProblem(state.residual_substrate(), request, policies or PolicyMatrices(),
                               MigrationContext(), objective or ObjectiveConfig())
    _require_valid(problem)
    return _attempt(state, problem, solver or SolverConfig())


def _require_valid(problem: EmbeddingProblem) -> None:
    from .model import validate_problem
    report = validate_problem(problem)
    if report:
        raise ModelError("invalid problem:\n  " + "\n  ".join(report))


def commit(state: SubstrateState, embedding: Embedding) -> SubstrateState:
    if embedding.request_id in state.committed:
        raise CommitError(f"request {embedding.request_id!r} is already committed")
    report = verify_embedding(state, embedding)
    if report:
        raise CommitError("embedding does not fit the current state:\n  "
                          + "\n  ".join(map(str, report)))
    return state.with_embedding(embedding)


def withdraw(state: SubstrateState, request_id: str) -> SubstrateState:
    return state.without(request_id)


def old_pairs(embedding: Embedding) -> frozenset[tuple[str, str]]:
    return frozenset((u, v) for u, vs in embedding.mapping.items() for v in vs)


def objective_value(embedding: Embedding, substrate: SubstrateGraph,
                    config: ObjectiveConfig, migration: MigrationContext) -> float:
    """Objective of keeping ``embedding`` unchanged inside ``substrate``'s view."""
    pol = embedding.policies
    if config.kind is ObjectiveKind.RESOURCE_MIN:
        body = math.fsum(pol.weight_of(u, v) * a for (u, v, _, _), a in embedding.allocations.items())
    else:
        loads = []
        for rs in substrate.substrate_resources():
            r = substrate.resources[rs]
            cap = r.shared_capacity
            if math.isinf(cap):
                cap = math.fsum(e.capacity(rs) for e in substrate.elements.values())
            scale = r.load_weight / cap if cap > 0 else 0.0
            loads.append(scale * math.fsum(a for k, a in embedding.allocations.items() if k[3] == rs))
        body = config.priority(substrate) * max(loads, default=0.0) + math.fsum(loads)
    transit = math.fsum(migration.transit_of(u, v) for u, vs in embedding.mapping.items() for v in vs)
    return body + transit


@dataclass(frozen=True)
class RequestPlan:
    request_id: str
    current: Embedding
    proposed: Embedding | None
    status_quo_objective: float
    note: str = ""

    @property
    def moved(self) -> frozenset[str]:
        return self.proposed.migrations if self.proposed else frozenset()

    @property
    def migration_cost(self) -> float:
        return self.proposed.migration_cost if self.proposed else 0.0

    @property
    def improvement(self) -> float:
        return self.status_quo_objective - self.proposed.objective if self.proposed else 0.0


@dataclass(frozen=True)
class ReembedPlan:
    entries: tuple[RequestPlan, ...] = ()

    @property
    def migration_cost(self) -> float:
        return math.fsum(e.migration_cost for e in self.entries)

    @property
    def improvement(self) -> float:
        return math.fsum(e.improvement for e in self.entries)

    @property
    def migrations(self) -> int:
        return sum(len(e.moved) for e in self.entries)


def _retarget(embedding: Embedding, migration: MigrationContext, policies: PolicyMatrices,
              objective: ObjectiveConfig) -> Embedding:
    return replace(embedding, migration=migration, policies=policies, objective_config=objective)


def reembed(state: SubstrateState, objective: ObjectiveConfig | None = None,
            migration: MigrationInputs | None = None, solver: SolverConfig | None = None,
            joint: bool = False) -> ReembedPlan:
    """Propose migrations for every committed request; nothing is committed.

    Requests are handled one at a time in id order, each against the
    residuals left after applying the proposals made before it. ``joint``
    solves all requests in one model instead.
    """
    migration = migration or MigrationInputs()
    solver = solver or SolverConfig()
    if not state.committed:
        return ReembedPlan()
    if joint:
        return _reembed_joint(state, objective, migration, solver)
    scratch = state
    entries = []
    for rid in sorted(state.committed):
        current = state.committed[rid]
        cfg = objective or current.objective_config
        base = scratch.without(rid)
        view = base.residual_substrate()
        ctx = migration.context(old_pairs(current), current.request.element_ids())
        problem = EmbeddingProblem(view, current.request, current.policies, ctx, cfg)
        quo = objective_value(current, view, cfg, ctx)
        result = _attempt(base, problem, solver)
        if isinstance(result, Rejection):
            entries.append(RequestPlan(rid, current, None, quo, f"{result.status}: {result.note}"))
            continue
        entries.append(RequestPlan(rid, current, result, quo))
        scratch = base.with_embedding(result)
    return ReembedPlan(tuple(entries))


SEP = "/"


def merge_requests(embeddings: Iterable[Embedding], suit_extra: Mapping[tuple[str, str], int] | None = None):
    """One request holding every element of ``embeddings`` with ids prefixed
    by their request id; returns (request, policies, old pairs, splitter)."""
    elements = []
    flows = {}
    suit = {}
    weight = {}
    old = set()
    for emb in embeddings:
        p = emb.request_id + SEP
        for e in emb.request.elements.values():
            elements.append(NetworkElement(p + e.id, e.kind, e.layer,
                                           tuple(p + x for x in e.endpoints), {}, dict(e.requests)))
        for l, fl in emb.request.flows.items():
            flows[p + l] = tuple((p + a, p + b) for a, b in fl)
        suit.update({(p + u, v): s for (u, v), s in emb.policies.suit.items()})
        weight.update({(p + u, v): w for (u, v), w in emb.policies.weight.items()})
        old.update((p + u, v) for u, v in old_pairs(emb))
    if suit_extra:
        for (u, v), s in suit_extra.items():
            suit[(u, v)] = min(suit.get((u, v), 1), s)
    return Request.create("joint", elements, flows), PolicyMatrices(suit, weight), frozenset(old)


def split_joint(joint: Embedding, originals: Mapping[str, Embedding],
                migration: MigrationInputs) -> dict[str, Embedding]:
    """Cut a joint embedding back into per-request embeddings (objective
    fields hold each request's share)."""
    out = {}
    for rid, emb in originals.items():
        p = rid + SEP
        strip = lambda s: s[len(p):]
        mapping = {strip(u): vs for u, vs in joint.mapping.items() if u.startswith(p)}
        allocs = {(strip(k[0]),) + k[1:]: a for k, a in joint.allocations.items() if k[0].startswith(p)}
        flows = {(strip(k[0]), strip(k[1]), strip(k[2])) + k[3:]: a
                 for k, a in joint.flows.items() if k[0].startswith(p)}
        migs = frozenset(strip(u) for u in joint.migrations if u.startswith(p))
        ctx = migration.context(old_pairs(emb), emb.request.element_ids())
        cost = math.fsum([ctx.penalty_of(u, emb.request.elements[u].is_link) for u in migs]
                         + [ctx.transit_of(u, v) for u, vs in mapping.items() for v in vs])
        body = math.fsum(emb.policies.weight_of(k[0], k[1]) * a for k, a in allocs.items())
        out[rid] = Embedding(emb.request, emb.policies, ctx, joint.objective_config, mapping,
                             allocs, flows, migs, body + cost, cost, dict(joint.stats))
    return out


def _reembed_joint(state, objective, migration, solver) -> ReembedPlan:
    originals = dict(state.committed)
    cfg = objective or ObjectiveConfig()
    if cfg.kind is not ObjectiveKind.RESOURCE_MIN:
        raise ModelError("joint re-embedding supports the resource objective only")
    request, policies, old = merge_requests(originals.values())
    empty = SubstrateState(state.substrate)
    ctx = MigrationInputs(
        {f"{r}{SEP}{u}": p for r in originals for u, p in migration.penalty.items()},
        {(f"{r}{SEP}{u}", v): t for r in originals for (u, v), t in migration.transit.items()},
        migration.default_transit).context(old, request.element_ids())
    problem = EmbeddingProblem(empty.residual_substrate(), request, policies, ctx, cfg)
    _require_valid(problem)
    sol = _solve(problem, solver)
    if not sol.has_solution:
        return ReembedPlan(tuple(RequestPlan(rid, emb, None, emb.objective, sol.status.value)
                                 for rid, emb in sorted(originals.items())))
    parts = split_joint(decode(problem, sol), originals, migration)
    view = empty.residual_substrate()
    entries = []
    for rid in sorted(originals):
        cur = originals[rid]
        ctx_r = migration.context(old_pairs(cur), cur.request.element_ids())
        entries.append(RequestPlan(rid, cur, parts[rid], objective_value(cur, view, cfg, ctx_r)))
    return ReembedPlan(tuple(entries))


def apply_plan(state: SubstrateState, plan: ReembedPlan) -> SubstrateState:
    """Replace every committed embedding that has a proposal."""
    out = state
    for e in plan.entries:
        if e.proposed is not None:
            out = out.without(e.request_id)
    for e in plan.entries:
        if e.proposed is not None:
            out = commit(out, e.proposed)
    return out


@dataclass(frozen=True)
class WhatIfResult:
    feasible: bool
    migration_cost: float
    objective: float
    embeddings: Mapping[str, Embedding] = field(default_factory=dict)
    note: str = ""


def subset_closure(substrate: SubstrateGraph, subset: Iterable[str]) -> frozenset[str]:
    """``subset`` plus every substrate link whose endpoints all lie in it."""
    chosen = set(subset)
    unknown = chosen - set(substrate.elements)
    if unknown:
        raise ModelError(f"unknown substrate elements in subset: {', '.join(sorted(unknown))}")
    for k, e in substrate.elements.items():
        if e.is_link and set(e.endpoints) <= chosen:
            chosen.add(k)
    return frozenset(chosen)


def whatif_subset(state: SubstrateState, subset: Iterable[str], solver: SolverConfig | None = None,
                  migration: MigrationInputs | None = None, joint: bool = False) -> WhatIfResult:
    """Could all committed requests live inside ``subset``, and at what cost?

    Every request is re-solved with suit zeroed outside the subset and its
    current mapping as the old one. Sequential mode empties the substrate and
    re-adds the requests in commit order; ``joint`` uses one model.
    """
    allowed = subset_closure(state.substrate, subset)
    if not allowed:
        raise ModelError("subset is empty")
    solver = solver or SolverConfig()
    migration = migration or MigrationInputs()
    outside = [v for v in state.substrate.elements if v not in allowed]

    def restricted(emb: Embedding) -> PolicyMatrices:
        suit = dict(emb.policies.suit)
        for u in emb.request.element_ids():
            for v in outside:
                suit[(u, v)] = 0
        return PolicyMatrices(suit, emb.policies.weight)

    if not state.committed:
        return WhatIfResult(True, 0.0, 0.0)
    if joint:
        originals = dict(state.committed)
        extra = {(f"{rid}{SEP}{u}", v): 0 for rid, emb in originals.items()
                 for u in emb.request.element_ids() for v in outside}
        request, policies, old = merge_requests(originals.values(), extra)
        ctx = MigrationInputs(default_transit=migration.default_transit).context(old, request.element_ids())
        problem = EmbeddingProblem(SubstrateState(state.substrate).residual_substrate(), request,
                                   policies, ctx, ObjectiveConfig())
        _require_valid(problem)
        sol = _solve(problem, solver)
        if not sol.has_solution:
            return WhatIfResult(False, math.inf, math.inf, note=sol.status.value)
        parts = split_joint(decode(problem, sol), originals, migration)
        return WhatIfResult(True, math.fsum(p.migration_cost for p in parts.values()),
                            sol.objective, parts)

    scratch = SubstrateState(state.substrate)
    results = {}
    for rid, emb in state.committed.items():
        ctx = migration.context(old_pairs(emb), emb.request.element_ids())
        problem = EmbeddingProblem(scratch.residual_substrate(), emb.request, restricted(emb), ctx,
                                   emb.objective_config)
        _require_valid(problem)
        res = _attempt(scratch, problem, solver)
        if isinstance(res, Rejection):
            return WhatIfResult(False, math.inf, math.inf, results, f"{rid}: {res.status} {res.note}".strip())
        results[rid] = res
        scratch = scratch.with_embedding(res)
    return WhatIfResult(True, math.fsum(e.migration_cost for e in results.values()),
                        math.fsum(e.objective for e in results.values()), results)


__all__ = [
    "Embedding", "Rejection", "MigrationInputs", "RequestPlan", "ReembedPlan", "WhatIfResult",
    "SubstrateState", "CommitError", "Violation", "decode", "embed", "commit", "withdraw",
    "reembed", "apply_plan", "whatif_subset", "subset_closure", "verify_embedding",
    "objective_value", "merge_requests", "split_joint",
]
