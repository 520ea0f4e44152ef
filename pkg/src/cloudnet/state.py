"""Embeddings and the substrate state they are committed to.

Residual capacities are always ``capacity - fsum(deltas)`` over the
committed embeddings, so committing and withdrawing the same embedding
restores every residual bit for bit and commits commute.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

from .model import (
    MigrationContext,
    ModelError,
    ObjectiveConfig,
    PolicyMatrices,
    Request,
    SubstrateGraph,
)

AllocKey = tuple[str, str, str, str]  # (u, v, rV, rS)
FlowKey = tuple[str, str, str, str, str, str, str]  # (link, src, dst, v, w, rV, rS)


@dataclass(frozen=True)
class Embedding:
    """A decoded solution for one request.

    ``mapping`` holds the substrate elements used by each virtual element
    (one for nodes). Only nonzero allocations are stored.
    """

    request: Request
    policies: PolicyMatrices
    migration: MigrationContext
    objective_config: ObjectiveConfig
    mapping: Mapping[str, tuple[str, ...]]
    allocations: Mapping[AllocKey, float]
    flows: Mapping[FlowKey, float]
    migrations: frozenset[str]
    objective: float
    migration_cost: float
    stats: Mapping[str, float] = field(default_factory=dict)

    @property
    def request_id(self) -> str:
        return self.request.id

    def virtual_amount(self, u: str, v: str, rv: str, prop: Mapping[tuple[str, str], float]) -> float:
        return math.fsum(prop.get((rv, rs), 0.0) * a for (x, y, r, rs), a in self.allocations.items()
                         if x == u and y == v and r == rv)


@dataclass(frozen=True)
class Consumption:
    """What an embedding takes out of the substrate.

    Interfaces are charged the largest single flow term crossing them, since
    interface capacity bounds every flow individually.
    """

    elements: Mapping[tuple[str, str], float]
    interfaces: Mapping[tuple[str, str, str], float]
    shared: Mapping[str, float]


def consumption(embedding: Embedding) -> Consumption:
    elements: dict[tuple[str, str], list[float]] = {}
    shared: dict[str, list[float]] = {}
    for (u, v, rv, rs), a in sorted(embedding.allocations.items()):
        elements.setdefault((v, rs), []).append(a)
        shared.setdefault(rs, []).append(a)
    interfaces: dict[tuple[str, str, str], float] = {}
    for (l, q, d, v, w, rv, rs), a in embedding.flows.items():
        key = (v, w, rs)
        interfaces[key] = max(interfaces.get(key, 0.0), a)
    return Consumption(
        {k: math.fsum(v) for k, v in sorted(elements.items())},
        dict(sorted(interfaces.items())),
        {k: math.fsum(v) for k, v in sorted(shared.items())},
    )


class CommitError(ModelError):
    pass


@dataclass(frozen=True)
class SubstrateState:
    substrate: SubstrateGraph
    # commit order is preserved
    committed: Mapping[str, Embedding] = field(default_factory=dict)
    deltas: Mapping[str, Consumption] = field(default_factory=dict)

    def _residual(self, base: float, pick) -> float:
        used = [pick(d) for d in self.deltas.values()]
        return base - math.fsum(x for x in used if x)

    def element_residual(self, v: str, rs: str) -> float:
        return self._residual(self.substrate.elements[v].capacity(rs),
                              lambda d: d.elements.get((v, rs), 0.0))

    def interface_residual(self, v: str, w: str, rs: str) -> float:
        return self._residual(self.substrate.interface_capacity(v, w, rs),
                              lambda d: d.interfaces.get((v, w, rs), 0.0))

    def shared_residual(self, rs: str) -> float:
        cap = self.substrate.resources[rs].shared_capacity
        if math.isinf(cap):
            return cap
        return self._residual(cap, lambda d: d.shared.get(rs, 0.0))

    def residuals(self):
        """(element, interface, shared) residual tables."""
        sub = self.substrate
        el = {(k, r): self.element_residual(k, r) for k, e in sub.elements.items() for r in e.capacities}
        it = {k: self.interface_residual(*k) for k in sub.interface_capacities}
        sh = {r: self.shared_residual(r) for r in sub.substrate_resources()}
        return el, it, sh

    def residual_substrate(self) -> SubstrateGraph:
        """Substrate whose capacities are the (nonnegative) residuals."""
        el, it, sh = self.residuals()
        clip = lambda x: max(0.0, x)
        return self.substrate.with_capacities(
            {k: clip(v) for k, v in el.items()},
            {k: clip(v) for k, v in it.items()},
            {k: clip(v) for k, v in sh.items() if not math.isinf(v)},
        )

    def with_embedding(self, embedding: Embedding) -> "SubstrateState":
        rid = embedding.request_id
        if rid in self.committed:
            raise CommitError(f"request {rid!r} is already committed")
        committed = dict(self.committed)
        committed[rid] = embedding
        deltas = dict(self.deltas)
        deltas[rid] = consumption(embedding)
        return SubstrateState(self.substrate, committed, deltas)

    def without(self, request_id: str) -> "SubstrateState":
        if request_id not in self.committed:
            raise CommitError(f"request {request_id!r} is not committed")
        committed = {k: v for k, v in self.committed.items() if k != request_id}
        deltas = {k: v for k, v in self.deltas.items() if k != request_id}
        return SubstrateState(self.substrate, committed, deltas)


def empty_state(substrate: SubstrateGraph) -> SubstrateState:
    return SubstrateState(substrate)
