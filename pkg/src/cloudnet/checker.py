"""Independent validity check for embeddings.

Works straight from the problem data and the decoded embedding; nothing here
touches the MIP builder or the solvers.
"""
from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass

from .model import Layer, ObjectiveKind, ValueType
from .state import Embedding, SubstrateState

TOL = 1e-6


@dataclass(frozen=True)
class Violation:
    check: str
    where: tuple[str, ...]
    message: str

    def __str__(self) -> str:
        return f"{self.check}({','.join(self.where)}): {self.message}"


def _slack(bound: float) -> float:
    return TOL * max(1.0, abs(bound))


def verify_embedding(state: SubstrateState, embedding: Embedding, tol: float = TOL) -> list[Violation]:
    """All violated conditions; an empty list means the embedding is valid.

    ``embedding`` is checked against the residual capacities left by every
    other committed request (its own committed version, if any, is ignored).
    """
    rid = embedding.request_id
    base = state.without(rid) if rid in state.committed else state
    sub = state.substrate
    res_sub = base.residual_substrate()
    req = embedding.request
    pol = embedding.policies
    mig = embedding.migration
    prop = sub.prop
    graph = sub.expanded()
    out: list[Violation] = []

    def bad(check, where, msg):
        out.append(Violation(check, tuple(where), msg))

    mapping = {u: tuple(vs) for u, vs in embedding.mapping.items()}
    resources = {u: e.requested_resources() for u, e in req.elements.items()}

    # -- keys and mappings ---------------------------------------------------
    for u in mapping:
        if u not in req.elements:
            bad("unknown_key", (u,), "mapping for unknown virtual element")
    for u, e in req.elements.items():
        vs = mapping.get(u, ())
        for v in vs:
            if v not in sub.elements:
                bad("unknown_key", (u, v), "mapped to unknown substrate element")
        if len(set(vs)) != len(vs):
            bad("uniqueness", (u,), "substrate element listed twice")
        if e.is_link:
            if not vs:
                bad("link_mapping", (u,), "virtual link is not mapped")
        elif len(vs) != 1:
            bad("uniqueness", (u,), f"virtual node mapped to {len(vs)} elements")
        for v in vs:
            if pol.suit_of(u, v) != 1:
                bad("suitability", (u, v), "mapped where suit is 0")
    hosted = {u: set(vs) for u, vs in mapping.items()}

    alloc_total: dict[tuple[str, str, str], float] = defaultdict(float)
    for (u, v, rv, rs), a in embedding.allocations.items():
        where = (u, v, rv, rs)
        if u not in req.elements or v not in sub.elements or rv not in resources.get(u, ()) \
                or prop.get((rv, rs), 0.0) <= 0:
            bad("unknown_key", where, "allocation outside the request/substrate vocabulary")
            continue
        if not a >= -tol:
            bad("negative", where, f"allocation {a} is negative")
        if a > tol and v not in hosted.get(u, ()):
            bad("allocation_gate", where, f"allocation {a} on an element {u} is not mapped to")
        alloc_total[(u, v, rv)] += prop[(rv, rs)] * a

    flows_of = {l: set(req.flows.get(l, ())) for l in req.link_ids()}
    adjacent = set(graph.arcs)
    flow_terms: dict[tuple, float] = defaultdict(float)  # (l,q,d,rv,v,w) -> virtual amount
    for key, a in embedding.flows.items():
        l, q, d, v, w, rv, rs = key
        if (q, d) not in flows_of.get(l, ()) or (v, w) not in adjacent \
                or rv not in resources.get(l, ()) or prop.get((rv, rs), 0.0) <= 0:
            bad("unknown_key", key, "flow allocation outside the request/substrate vocabulary")
            continue
        if not a >= -tol:
            bad("negative", key, f"flow allocation {a} is negative")
        if a > tol and (v not in hosted.get(l, ()) or w not in hosted.get(l, ())):
            bad("allocation_gate", key, f"flow {a} across elements {l} is not mapped to")
        cap = res_sub.interface_capacity(v, w, rs)
        if a > cap + _slack(cap):
            bad("interface_capacity", key, f"flow {a} exceeds interface residual {cap}")
        flow_terms[(l, q, d, rv, v, w)] += prop[(rv, rs)] * a

    # -- endpoint coverage of links -------------------------------------------
    def host(n):
        vs = mapping.get(n, ())
        return vs[0] if len(vs) == 1 else None

    for l, fl in flows_of.items():
        for q, d in sorted(fl):
            for n in (q, d):
                h = host(n)
                if h is not None and h not in hosted.get(l, ()):
                    bad("link_mapping", (l, n, h), "link does not cover the host of its endpoint")

    # -- node requests and minimum allocations --------------------------------
    for u, e in req.elements.items():
        for v in hosted.get(u, ()):
            for rv in resources[u]:
                amount = alloc_total.get((u, v, rv), 0.0)
                m = sub.resources[rv].min_alloc
                if m > 0 and amount < m - _slack(m):
                    bad("min_alloc", (u, v, rv), f"hosted {amount} below minimum allocation {m}")
                if e.is_link:
                    continue
                for (r, vt), want in e.requests.items():
                    if r != rv:
                        continue
                    ok = {ValueType.MINIMUM: amount >= want - _slack(want),
                          ValueType.MAXIMUM: amount <= want + _slack(want),
                          ValueType.CONSTANT: abs(amount - want) <= _slack(want)}[vt]
                    if not ok:
                        bad("request", (u, v, rv, vt.value), f"hosted {amount} violates {vt.value} {want}")

    # -- substrate capacities -------------------------------------------------
    per_element: dict[tuple[str, str], list[float]] = defaultdict(list)
    per_resource: dict[str, list[float]] = defaultdict(list)
    for (u, v, rv, rs), a in embedding.allocations.items():
        if v in sub.elements:
            per_element[(v, rs)].append(a)
            per_resource[rs].append(a)
    for (v, rs), amounts in sorted(per_element.items()):
        total = math.fsum(amounts)
        cap = res_sub.elements[v].capacity(rs)
        if total > cap + _slack(cap):
            bad("element_capacity", (v, rs), f"allocated {total} exceeds residual {cap}")
    for rs, amounts in sorted(per_resource.items()):
        r = res_sub.resources.get(rs)
        if r is None or r.layer is not Layer.SUBSTRATE:
            continue
        total = math.fsum(amounts)
        if total > r.shared_capacity + _slack(r.shared_capacity):
            bad("shared_capacity", (rs,), f"allocated {total} exceeds shared residual {r.shared_capacity}")

    # -- flows: conservation, envelope, presence --------------------------------
    out_s: dict[tuple, float] = defaultdict(float)
    in_s: dict[tuple, float] = defaultdict(float)
    for (l, q, d, v, w, rv, rs), a in embedding.flows.items():
        out_s[(l, q, d, v, rv, rs)] += a
        in_s[(l, q, d, w, rv, rs)] += a
    for key, total in list(out_s.items()) + list(in_s.items()):
        l, q, d, v, rv, rs = key
        have = embedding.allocations.get((l, v, rv, rs), 0.0)
        if total > have + _slack(have):
            bad("envelope", key, f"flow {total} through {v} exceeds element allocation {have}")

    for l in req.link_ids():
        e = req.elements[l]
        mins = [sub.resources[rv].min_alloc for rv in resources[l]]
        eps = min(min(mins, default=0.0), 1.0)
        for q, d in sorted(flows_of[l]):
            hq, hd = host(q), host(d)
            for rv in resources[l]:
                net = defaultdict(float)
                touch = defaultdict(float)
                for (ll, qq, dd, r, v, w), a in flow_terms.items():
                    if (ll, qq, dd, r) == (l, q, d, rv):
                        net[v] += a
                        net[w] -= a
                        touch[v] += a
                        touch[w] += a
                lo = e.requests.get((rv, ValueType.MINIMUM))
                hi = e.requests.get((rv, ValueType.MAXIMUM))
                const = e.requests.get((rv, ValueType.CONSTANT))
                for v in graph.vertices:
                    n = net.get(v, 0.0)
                    where = (l, q, d, v, rv)
                    if const is not None:
                        want = (const if v == hq else 0.0) - (const if v == hd else 0.0)
                        if abs(n - want) > _slack(const):
                            bad("conservation", where, f"net outflow {n}, expected {want}")
                        continue
                    if v == hd:
                        continue  # the sink absorbs whatever arrives
                    if lo is not None and n < (lo if v == hq else 0.0) - _slack(lo):
                        bad("conservation", where, f"net outflow {n} below {lo if v == hq else 0.0}")
                    if hi is not None and n > (hi if v == hq else 0.0) + _slack(hi):
                        bad("conservation", where, f"net outflow {n} above {hi if v == hq else 0.0}")
                if eps > 0:
                    for v in hosted.get(l, ()):
                        if touch.get(v, 0.0) < eps - _slack(eps):
                            bad("flow_presence", (l, q, d, v, rv),
                                f"flow through a mapped element is {touch.get(v, 0.0)} < {eps}")

    # -- migration flags and costs --------------------------------------------
    expected = set()
    for u in req.elements:
        olds = mig.old_locations(u)
        if any(v not in hosted.get(u, ()) for v in olds):
            expected.add(u)
    for u in sorted(set(embedding.migrations) ^ expected):
        bad("migration_flag", (u,), "flag set without a move" if u in embedding.migrations
            else "element left an old location without being flagged")

    mcost = math.fsum(
        [mig.penalty_of(u, req.elements[u].is_link) for u in embedding.migrations if u in req.elements]
        + [mig.transit_of(u, v) for u, vs in mapping.items() for v in vs])
    if abs(mcost - embedding.migration_cost) > _slack(mcost):
        bad("objective", ("migration_cost",), f"reported {embedding.migration_cost}, recomputed {mcost}")

    cfg = embedding.objective_config
    if cfg.kind is ObjectiveKind.RESOURCE_MIN:
        body = math.fsum(pol.weight_of(u, v) * a for (u, v, rv, rs), a in embedding.allocations.items())
    else:
        loads = []
        for rs in res_sub.substrate_resources():
            r = res_sub.resources[rs]
            cap = r.shared_capacity
            if math.isinf(cap):
                cap = math.fsum(e.capacity(rs) for e in res_sub.elements.values())
            scale = r.load_weight / cap if cap > 0 else 0.0
            loads.append(scale * math.fsum(per_resource.get(rs, [])))
        body = cfg.priority(res_sub) * max(loads, default=0.0) + math.fsum(loads)
    total = body + mcost
    if abs(total - embedding.objective) > _slack(total):
        bad("objective", ("objective",), f"reported {embedding.objective}, recomputed {total}")
    return out
