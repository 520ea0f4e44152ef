"""JSON documents: problems, substrate states, embeddings, plans and reports."""
from __future__ import annotations

import copy
import json
import math
from functools import lru_cache
from importlib import resources as _res
from typing import Any

import jsonschema

from .model import (
    EmbeddingProblem,
    Kind,
    Layer,
    MigrationContext,
    NetworkElement,
    ObjectiveConfig,
    ObjectiveKind,
    PolicyMatrices,
    Request,
    ResourceType,
    SubstrateGraph,
    ValueType,
)
from .state import Embedding, SubstrateState


class ParseError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@lru_cache(maxsize=None)
def problem_schema() -> dict:
    text = _res.files("cloudnet").joinpath("schemas/problem.schema.json").read_text()
    return json.loads(text)


def _embedding_def() -> dict:
    key = {"type": "array", "items": {"type": "string"}}
    return {
        "type": "object",
        "required": ["request", "mapping", "allocations", "flows", "migrations",
                     "objective_value", "migration_cost"],
        "additionalProperties": False,
        "properties": {
            "request": {"allOf": [{"$ref": "#/$defs/request"}, {"required": ["id"]}]},
            "policies": {"$ref": "#/$defs/policies"},
            "migration": {"$ref": "#/$defs/migration"},
            "objective": {"$ref": "#/$defs/objective"},
            "mapping": {"type": "object", "additionalProperties": key},
            "allocations": {"type": "array", "items": {
                "type": "object", "additionalProperties": False,
                "required": ["virtual", "substrate", "virtual_resource", "substrate_resource", "amount"],
                "properties": {k: {"type": "string"} for k in
                               ("virtual", "substrate", "virtual_resource", "substrate_resource")}
                | {"amount": {"type": "number"}}}},
            "flows": {"type": "array", "items": {
                "type": "object", "additionalProperties": False,
                "required": ["link", "source", "sink", "from", "to", "virtual_resource",
                             "substrate_resource", "amount"],
                "properties": {k: {"type": "string"} for k in
                               ("link", "source", "sink", "from", "to", "virtual_resource",
                                "substrate_resource")} | {"amount": {"type": "number"}}}},
            "migrations": key,
            "objective_value": {"type": "number"},
            "migration_cost": {"type": "number"},
            "stats": {"type": "object"},
        },
    }


@lru_cache(maxsize=None)
def state_schema() -> dict:
    """Substrate sections of the problem schema plus committed embeddings."""
    base = problem_schema()
    defs = copy.deepcopy(base["$defs"])
    defs["embedding"] = _embedding_def()
    return {
        "$schema": base["$schema"],
        "$id": "cloudnet/state.schema.json",
        "title": "Substrate state",
        "type": "object",
        "required": ["resources", "substrate", "prop"],
        "additionalProperties": False,
        "properties": {
            "resources": base["properties"]["resources"],
            "substrate": base["properties"]["substrate"],
            "prop": base["properties"]["prop"],
            "committed": {"type": "array", "items": {"$ref": "#/$defs/embedding"}},
        },
        "$defs": defs,
    }


@lru_cache(maxsize=None)
def embedding_schema() -> dict:
    defs = copy.deepcopy(problem_schema()["$defs"])
    return {**_embedding_def(), "$defs": defs}


def load_json(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, exc.lineno) from None


def _validate(obj: Any, schema: dict, what: str) -> None:
    validator = jsonschema.Draft202012Validator(schema)
    errors = sorted(validator.iter_errors(obj), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        path = "/".join(str(p) for p in e.absolute_path) or "(root)"
        raise ParseError(f"{what} document invalid at {path}: {e.message}")


def dumps(obj: Any) -> str:
    return json.dumps(_finite(obj), indent=2, allow_nan=False) + "\n"


def _finite(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    return obj


# -- parsing --------------------------------------------------------------------

def _unique(ids, what):
    seen = set()
    for i in ids:
        if i in seen:
            raise ParseError(f"duplicate {what} id {i!r}")
        seen.add(i)


def substrate_from_dict(d: dict) -> SubstrateGraph:
    resources = {}
    for r in d["resources"]:
        layer = Layer(r["class"])
        cap = r.get("shared_capacity")
        resources[r["id"]] = ResourceType(
            r["id"], r["attribute_path"], layer,
            math.inf if cap is None else float(cap),
            float(r.get("load_weight", 1.0)), float(r.get("min_alloc", 0.0)))
    _unique([r["id"] for r in d["resources"]], "resource")
    s = d["substrate"]
    nodes = s.get("nodes", [])
    links = s.get("links", [])
    _unique([e["id"] for e in nodes + links], "substrate element")
    elements = {}
    interfaces: dict[tuple[str, str, str], float] = {}
    for n in nodes:
        elements[n["id"]] = NetworkElement(n["id"], Kind.NODE, Layer.SUBSTRATE, (),
                                           {k: float(v) for k, v in n.get("capacities", {}).items()})
    for l in links:
        elements[l["id"]] = NetworkElement(l["id"], Kind.LINK, Layer.SUBSTRATE, tuple(l["endpoints"]),
                                           {k: float(v) for k, v in l.get("capacities", {}).items()})
        for rs, cap in l.get("interface_capacities", {}).items():
            for p in l["endpoints"]:
                interfaces[(l["id"], p, rs)] = float(cap)
                interfaces[(p, l["id"], rs)] = float(cap)
    for ic in s.get("interface_capacities", []):
        interfaces[(ic["from"], ic["to"], ic["resource"])] = float(ic["capacity"])
    prop = {(p["virtual"], p["substrate"]): float(p["factor"]) for p in d.get("prop", [])}
    return SubstrateGraph(resources, elements, interfaces, prop)


def _demands(items) -> dict:
    return {(q["resource"], ValueType(q["type"])): float(q["amount"]) for q in items or []}


def request_from_dict(d: dict, default_id: str = "request") -> Request:
    nodes = d.get("nodes", [])
    links = d.get("links", [])
    _unique([e["id"] for e in nodes + links], "virtual element")
    elements = [NetworkElement(n["id"], Kind.NODE, Layer.VIRTUAL, (), {}, _demands(n.get("requests")))
                for n in nodes]
    flows = {}
    for l in links:
        elements.append(NetworkElement(l["id"], Kind.LINK, Layer.VIRTUAL, tuple(l["endpoints"]), {},
                                       _demands(l.get("requests"))))
        if "flows" in l:
            flows[l["id"]] = [tuple(f) for f in l["flows"]]
    return Request.create(d.get("id", default_id), elements, flows)


def policies_from_dict(d: dict | None) -> PolicyMatrices:
    d = d or {}
    return PolicyMatrices(
        {(e["virtual"], e["substrate"]): int(e["value"]) if float(e["value"]).is_integer() else e["value"]
         for e in d.get("suit", [])},
        {(e["virtual"], e["substrate"]): float(e["value"]) for e in d.get("weight", [])},
    )


def migration_from_dict(d: dict | None) -> MigrationContext:
    d = d or {}
    return MigrationContext(
        frozenset((e["virtual"], e["substrate"]) for e in d.get("old", [])),
        {e["virtual"]: float(e["value"]) for e in d.get("penalty", [])},
        {(e["virtual"], e["substrate"]): float(e["value"]) for e in d.get("transit", [])},
        float(d.get("default_transit", 0.0)),
    )


def objective_from_dict(d: dict | None) -> ObjectiveConfig:
    d = d or {}
    c = d.get("c")
    return ObjectiveConfig(ObjectiveKind(d.get("kind", "resource")), None if c is None else float(c))


def problem_from_dict(d: dict) -> EmbeddingProblem:
    _validate(d, problem_schema(), "problem")
    return EmbeddingProblem(
        substrate_from_dict(d),
        request_from_dict(d["request"]),
        policies_from_dict(d.get("policies")),
        migration_from_dict(d.get("migration")),
        objective_from_dict(d.get("objective")),
    )


def parse_problem(text: str) -> EmbeddingProblem:
    return problem_from_dict(load_json(text))


def parse_request(text: str) -> tuple[Request, PolicyMatrices, ObjectiveConfig | None]:
    """A request document: either ``{"request": ..., "policies": ...}`` or a
    bare request section."""
    d = load_json(text)
    defs = problem_schema()["$defs"]
    if isinstance(d, dict) and "request" in d:
        schema = {"type": "object", "required": ["request"], "additionalProperties": False,
                  "properties": {"request": {"$ref": "#/$defs/request"},
                                 "policies": {"$ref": "#/$defs/policies"},
                                 "objective": {"$ref": "#/$defs/objective"}},
                  "$defs": defs}
        _validate(d, schema, "request")
        obj = objective_from_dict(d["objective"]) if "objective" in d else None
        return request_from_dict(d["request"]), policies_from_dict(d.get("policies")), obj
    _validate(d, {"$ref": "#/$defs/request", "$defs": defs}, "request")
    return request_from_dict(d), PolicyMatrices(), None


def embedding_from_dict(d: dict) -> Embedding:
    req = request_from_dict(d["request"])
    return Embedding(
        req,
        policies_from_dict(d.get("policies")),
        migration_from_dict(d.get("migration")),
        objective_from_dict(d.get("objective")),
        {u: tuple(vs) for u, vs in d["mapping"].items()},
        {(a["virtual"], a["substrate"], a["virtual_resource"], a["substrate_resource"]): float(a["amount"])
         for a in d["allocations"]},
        {(f["link"], f["source"], f["sink"], f["from"], f["to"], f["virtual_resource"],
          f["substrate_resource"]): float(f["amount"]) for f in d["flows"]},
        frozenset(d["migrations"]),
        float(d["objective_value"]),
        float(d["migration_cost"]),
        dict(d.get("stats", {})),
    )


def parse_embedding(text: str) -> Embedding:
    d = load_json(text)
    _validate(d, embedding_schema(), "embedding")
    return embedding_from_dict(d)


def state_from_dict(d: dict, check: bool = True) -> SubstrateState:
    """Rebuild a state; with ``check`` every embedding is verified on commit."""
    from .engine import commit
    _validate(d, state_schema(), "state")
    state = SubstrateState(substrate_from_dict(d))
    for e in d.get("committed", []):
        emb = embedding_from_dict(e)
        state = commit(state, emb) if check else state.with_embedding(emb)
    return state


def parse_state(text: str, check: bool = True) -> SubstrateState:
    return state_from_dict(load_json(text), check)


def parse_subset(text: str) -> list[str]:
    """JSON list, ``{"subset": [...]}`` or whitespace separated ids."""
    stripped = text.strip()
    if stripped.startswith("[") or stripped.startswith("{"):
        d = load_json(text)
        if isinstance(d, dict):
            d = d.get("subset")
        if not isinstance(d, list) or not all(isinstance(x, str) for x in d):
            raise ParseError("subset must be a list of element ids")
        return d
    return [tok for line in text.splitlines() for tok in line.split("#", 1)[0].split()]


# -- writing --------------------------------------------------------------------

def _num(x: float):
    x = float(x)
    return int(x) if x.is_integer() and abs(x) < 2 ** 53 else x


def substrate_to_dict(sub: SubstrateGraph) -> dict:
    res = []
    for r in sub.resources.values():
        entry = {"id": r.id, "attribute_path": r.attribute_path, "class": r.layer.value}
        if not math.isinf(r.shared_capacity):
            entry["shared_capacity"] = _num(r.shared_capacity)
        if r.load_weight != 1.0:
            entry["load_weight"] = r.load_weight
        if r.min_alloc:
            entry["min_alloc"] = _num(r.min_alloc)
        res.append(entry)
    nodes, links = [], []
    for e in sub.elements.values():
        caps = {k: _num(v) for k, v in e.capacities.items()}
        if e.is_link:
            links.append({"id": e.id, "endpoints": list(e.endpoints), "capacities": caps})
        else:
            nodes.append({"id": e.id, "capacities": caps})
    ics = [{"from": v, "to": w, "resource": r, "capacity": _num(c)}
           for (v, w, r), c in sub.interface_capacities.items()]
    return {
        "resources": res,
        "substrate": {"nodes": nodes, "links": links, "interface_capacities": ics},
        "prop": [{"virtual": a, "substrate": b, "factor": _num(f)} for (a, b), f in sub.prop.items()],
    }


def request_to_dict(req: Request) -> dict:
    def demands(e):
        return [{"resource": r, "type": vt.value, "amount": _num(a)} for (r, vt), a in e.requests.items()]
    nodes = [{"id": u, "requests": demands(req.elements[u])} for u in req.node_ids()]
    links = []
    for l in req.link_ids():
        e = req.elements[l]
        links.append({"id": l, "endpoints": list(e.endpoints), "requests": demands(e),
                      "flows": [list(f) for f in req.flows[l]]})
    return {"id": req.id, "nodes": nodes, "links": links}


def policies_to_dict(p: PolicyMatrices) -> dict:
    return {"suit": [{"virtual": u, "substrate": v, "value": s} for (u, v), s in sorted(p.suit.items())],
            "weight": [{"virtual": u, "substrate": v, "value": w} for (u, v), w in sorted(p.weight.items())]}


def migration_to_dict(m: MigrationContext) -> dict:
    return {"old": [{"virtual": u, "substrate": v} for u, v in sorted(m.old)],
            "penalty": [{"virtual": u, "value": p} for u, p in sorted(m.penalty.items())],
            "transit": [{"virtual": u, "substrate": v, "value": t} for (u, v), t in sorted(m.transit.items())],
            "default_transit": m.default_transit}


def objective_to_dict(o: ObjectiveConfig) -> dict:
    return {"kind": o.kind.value, "c": o.c}


def problem_to_dict(p: EmbeddingProblem) -> dict:
    d = substrate_to_dict(p.substrate)
    d["request"] = request_to_dict(p.request)
    d["policies"] = policies_to_dict(p.policies)
    d["migration"] = migration_to_dict(p.migration)
    d["objective"] = objective_to_dict(p.objective)
    return d


def embedding_to_dict(e: Embedding) -> dict:
    return {
        "request": request_to_dict(e.request),
        "policies": policies_to_dict(e.policies),
        "migration": migration_to_dict(e.migration),
        "objective": objective_to_dict(e.objective_config),
        "mapping": {u: list(vs) for u, vs in e.mapping.items()},
        "allocations": [{"virtual": u, "substrate": v, "virtual_resource": rv, "substrate_resource": rs,
                         "amount": a} for (u, v, rv, rs), a in e.allocations.items()],
        "flows": [{"link": l, "source": q, "sink": d, "from": v, "to": w, "virtual_resource": rv,
                   "substrate_resource": rs, "amount": a}
                  for (l, q, d, v, w, rv, rs), a in e.flows.items()],
        "migrations": sorted(e.migrations),
        "objective_value": e.objective,
        "migration_cost": e.migration_cost,
        "stats": dict(e.stats),
    }


def state_to_dict(state: SubstrateState) -> dict:
    d = substrate_to_dict(state.substrate)
    d["committed"] = [embedding_to_dict(e) for e in state.committed.values()]
    return d


def rejection_to_dict(r) -> dict:
    return {"rejected": True, "request": r.request_id, "status": r.status, "note": r.note,
            "infeasible_families": list(r.infeasible_families), "stats": dict(r.stats)}


def plan_to_dict(plan) -> dict:
    entries = []
    for e in plan.entries:
        entries.append({
            "request": e.request_id,
            "moved": sorted(e.moved),
            "migration_cost": e.migration_cost,
            "status_quo_objective": e.status_quo_objective,
            "proposed_objective": e.proposed.objective if e.proposed else e.status_quo_objective,
            "allocation_saving": e.improvement + e.migration_cost,
            "improvement": e.improvement,
            "note": e.note,
            "proposed": embedding_to_dict(e.proposed) if e.proposed else None,
        })
    return {"migration_cost": plan.migration_cost,
            "allocation_saving": plan.improvement + plan.migration_cost,
            "improvement": plan.improvement,
            "migrations": plan.migrations, "entries": entries}


def whatif_to_dict(result) -> dict:
    return {"feasible": result.feasible, "migration_cost": result.migration_cost,
            "objective": result.objective, "note": result.note,
            "moved": {rid: sorted(e.migrations) for rid, e in result.embeddings.items()}}
