"""End-to-end acceptance checks; each test carries a ``criterion`` mark and
the run ends with one pass/fail line per criterion."""
import dataclasses
import json
import math
import os
import statistics
import tempfile
from pathlib import Path

import numpy as np
import pytest

from cloudnet import io as docs
from cloudnet.builder import build
from cloudnet.cli import main
from cloudnet.engine import (Embedding, MigrationInputs, commit, decode, embed, reembed,
                             verify_embedding, whatif_subset)
from cloudnet.harness import ScenarioConfig, experiment_substrate, generate_request
from cloudnet.model import EmbeddingProblem, MigrationContext, PolicyMatrices, Request, SubstrateGraph
from cloudnet.solver import SolverConfig, export_model, import_solution, solve_milp
from cloudnet.state import empty_state

import mcf
from corpus import random_problem, resources, snode, two_location_state, vnode, VCPU, CPU, VBW, BW
from oracle import brute_force

DATA = Path(__file__).resolve().parent.parent / "data"
TOL = 1e-6


def detail(record_property, text):
    record_property("detail", text)


# -- 1 ---------------------------------------------------------------------

@pytest.mark.criterion(1, "oracle equivalence")
def test_oracle_equivalence(record_property):
    checked = broadcast = infeasible = 0
    mismatches = []
    for seed in range(240):
        p = random_problem(seed, broadcast=True if seed % 4 == 0 else None)
        if any(len(p.request.elements[l].endpoints) == 3 for l in p.request.link_ids()):
            broadcast += 1
        ref = brute_force(p)
        res = embed(empty_state(p.substrate), p.request, p.policies, p.objective)
        ours = res.objective if isinstance(res, Embedding) else math.inf
        checked += 1
        if math.isinf(ref.objective):
            infeasible += 1
            ok = math.isinf(ours) and res.status == "infeasible"
        else:
            ok = math.isfinite(ours) and abs(ours - ref.objective) <= TOL
        if not ok:
            mismatches.append((seed, ours, ref.objective))
    detail(record_property, f"{checked} instances, {broadcast} with a 3-endpoint link, {infeasible} infeasible, "
                            f"{len(mismatches)} mismatches")
    assert checked >= 200 and broadcast >= 1
    assert not mismatches


# -- 2 ---------------------------------------------------------------------

def solver_embeddings(n=40):
    """Fresh embeddings, re-embedding proposals (which carry old locations)
    and routed requests from the scenario generator."""
    out = []
    for seed in range(n):
        p = random_problem(1000 + seed)
        state = empty_state(p.substrate)
        emb = embed(state, p.request, p.policies, p.objective)
        if not isinstance(emb, Embedding):
            continue
        out.append((state, emb))
        done = commit(state, emb)
        plan = reembed(done, migration=MigrationInputs(default_transit=0.1))
        out += [(done.without(e.request_id), e.proposed) for e in plan.entries if e.proposed is not None]
    for seed in range(12):
        cfg = ScenarioConfig(scenario="oc", seed=seed, substrate_size=8, cr_range=(1, 1), ap_range=(2, 3),
                             element_capacity_slots=2)
        sub = experiment_substrate(cfg)
        rng = np.random.default_rng([seed, 2])
        state = empty_state(sub)
        for idx in range(3):
            req, pol = generate_request(cfg, sub, rng, idx)
            emb = embed(state, req, pol)
            if isinstance(emb, Embedding):
                out.append((state, emb))
                state = commit(state, emb)
        # freeing the first request's room lets the later ones move
        if len(state.committed) > 1:
            state = state.without(sorted(state.committed)[0])
            plan = reembed(state, migration=MigrationInputs(default_transit=1e-3))
            out += [(state.without(e.request_id), e.proposed) for e in plan.entries if e.proposed is not None]
    for demand, cheap in ((2.0, 0.5), (3.0, 0.2)):
        state, _ = two_location_state(demand, cheap)
        plan = reembed(state, migration=MigrationInputs({"u": 1e-3}))
        out += [(state.without(e.request_id), e.proposed) for e in plan.entries]
    return out


def inflate_allocation(state, emb):
    (u, v, rv, rs), a = max(emb.allocations.items(), key=lambda kv: kv[1])
    cap = state.residual_substrate().elements[v].capacity(rs)
    return dataclasses.replace(emb, allocations={**emb.allocations, (u, v, rv, rs): a + cap + 1.0})


def break_conservation(state, emb):
    """Push a large amount from a source host into one of its links."""
    sub = state.substrate
    for (l, q, d, v, w, rv, rs) in sorted(emb.flows):
        hq, hd = emb.mapping[q][0], emb.mapping[d][0]
        if hq == hd:
            continue
        link = next(x for x in sorted(sub.link_ids()) if hq in sub.elements[x].endpoints)
        key = (l, q, d, hq, link, rv, rs)
        return dataclasses.replace(emb, flows={**emb.flows, key: emb.flows.get(key, 0.0) + 1e3})
    return None


def violate_suit(state, emb):
    for u in emb.request.node_ids():
        bad = [v for v in sorted(state.substrate.elements) if emb.policies.suit_of(u, v) == 0]
        if bad:
            return dataclasses.replace(emb, mapping={**emb.mapping, u: (bad[0],)})
    return None


def over_capacity(state, emb):
    """Same embedding against a substrate whose host lost most of its capacity."""
    (u, v, rv, rs), a = max(emb.allocations.items(), key=lambda kv: kv[1])
    sub = state.substrate
    el = sub.elements[v]
    used = math.fsum(x for k, x in emb.allocations.items() if k[1] == v and k[3] == rs)
    shrunk = dataclasses.replace(el, capacities={**el.capacities, rs: used / 2})
    smaller = dataclasses.replace(sub, elements={**sub.elements, v: shrunk})
    return empty_state(smaller), emb


def flip_migration(state, emb):
    u = sorted(emb.request.element_ids())[0]
    return dataclasses.replace(emb, migrations=emb.migrations ^ {u})


@pytest.mark.criterion(2, "checker soundness and mutation detection")
def test_checker_and_mutations(record_property):
    cases = solver_embeddings()
    assert len(cases) >= 30
    clean = [verify_embedding(s, e) for s, e in cases]
    assert all(v == [] for v in clean), [v for v in clean if v][:3]
    mutants = {"inflated_allocation": inflate_allocation, "broken_conservation": break_conservation,
               "suit_violation": violate_suit, "over_capacity": over_capacity, "wrong_mig_flag": flip_migration}
    expected = {"inflated_allocation": {"element_capacity"}, "broken_conservation": {"conservation"},
                "suit_violation": {"suitability"}, "over_capacity": {"element_capacity"},
                "wrong_mig_flag": {"migration_flag"}}
    counts = {}
    for name, mutate in mutants.items():
        made = caught = 0
        for state, emb in cases:
            out = mutate(state, emb)
            if out is None:
                continue
            if isinstance(out, tuple):
                state, out = out
            made += 1
            checks = {v.check for v in verify_embedding(state, out)}
            caught += bool(checks & expected[name])
        counts[name] = (caught, made)
    migrated = sum(1 for _, e in cases if e.migrations)
    detail(record_property, f"{len(cases)} solver embeddings clean ({migrated} with migrations); "
           + ", ".join(f"{k} {c}/{m}" for k, (c, m) in counts.items()))
    for name, (caught, made) in counts.items():
        assert made >= 10, name
        assert caught == made, name


# -- 3 ---------------------------------------------------------------------

@pytest.mark.criterion(3, "migration trade-off")
def test_migration_tradeoff(record_property):
    rows = 0
    for demand, cheap in ((2.0, 0.5), (3.0, 0.2), (1.0, 0.25)):
        state, saving = two_location_state(demand, cheap)
        for transit in (0.0, 0.1 * saving):
            for frac in (1.5, 1.01, 0.6, 0.2, 1e-3):
                penalty = frac * saving
                plan = reembed(state, migration=MigrationInputs({"u": penalty}, default_transit=transit))
                entry = plan.entries[0]
                if penalty + transit > saving:
                    assert plan.migrations == 0, (demand, cheap, penalty, transit)
                    assert abs(plan.improvement) <= TOL
                else:
                    assert entry.proposed.migrations == {"u"}
                    assert entry.proposed.mapping["u"] == ("b",)
                    assert abs(plan.improvement - (saving - penalty - transit)) <= TOL
                    assert abs(plan.migration_cost - (penalty + transit)) <= TOL
                rows += 1
    detail(record_property, f"{rows} penalty/transit settings on 3 two-location instances")


# -- 4 ---------------------------------------------------------------------

@pytest.mark.criterion(4, "VPN embedding equals multi-commodity flow")
def test_vpn_matches_mcf(record_property):
    agree = feasible = 0
    for seed in range(50):
        rng = np.random.default_rng([seed, 404])
        cfg = ScenarioConfig(scenario="vpn", seed=seed, substrate_size=8, ap_range=(2, 4),
                             link_bandwidth=float(rng.choice([1.0, 2.0, 3.0])),
                             link_demand=float(rng.choice([1.0, 1.5, 2.0])))
        sub = experiment_substrate(cfg)
        state = empty_state(sub)
        # a first request shapes the residuals the second one sees
        first, fpol = generate_request(cfg, sub, rng, 0)
        res = embed(state, first, fpol)
        if isinstance(res, Embedding):
            state = commit(state, res)
        req, pol = generate_request(cfg, sub, rng, 1)
        res = embed(state, req, pol)
        ours = isinstance(res, Embedding)
        if not ours:
            assert res.status == "infeasible"
        ref = mcf.feasible(state.residual_substrate(), req, pol)
        agree += ours == ref
        feasible += ref
    detail(record_property, f"{agree}/50 agree, {feasible} feasible, {50 - feasible} infeasible")
    assert agree == 50
    assert 0 < feasible < 50


# -- 5 ---------------------------------------------------------------------

@pytest.mark.criterion(5, "element capacity of 15 slots")
def test_fifteen_slots():
    sub = SubstrateGraph(resources(), {"a": snode("a", 15, 1), "b": snode("b", 15, 1)}, {},
                         {(VCPU, CPU): 1.0, (VBW, BW): 1.0})
    state = empty_state(sub)
    results = []
    for i in range(16):
        req = Request.create(f"r{i:02d}", [vnode("x", const=1)])
        res = embed(state, req, PolicyMatrices({("x", "b"): 0}))
        results.append(isinstance(res, Embedding))
        if results[-1]:
            state = commit(state, res)
    assert results == [True] * 15 + [False]


# -- 6 ---------------------------------------------------------------------

@pytest.mark.criterion(6, "what-if on the triangle corpus")
def test_whatif_triangle():
    state = docs.parse_state((DATA / "state.json").read_text())
    full = whatif_subset(state, state.substrate.node_ids())
    assert full.feasible and full.migration_cost == 0
    ap_host = state.committed["net1"].mapping["ap"][0]
    rest = [v for v in state.substrate.node_ids() if v != ap_host]
    assert not whatif_subset(state, rest).feasible


# -- 7 ---------------------------------------------------------------------

def run_cli_experiment(out: Path) -> dict:
    assert main(["experiment", "--config", str(DATA / "experiment.json"), "--out", str(out),
                 "--deterministic", "--seed", "7"]) == 0
    csv = (out / "metrics.csv").read_text().splitlines()
    head = csv[0].split(",")
    keep = [i for i, c in enumerate(head) if c != "wall_ms"]
    rows = [",".join(line.split(",")[i] for i in keep) for line in csv]
    jsonl = [{k: v for k, v in json.loads(line).items() if k != "wall_ms"}
             for line in (out / "metrics.jsonl").read_text().splitlines()]
    summary = json.loads((out / "summary.json").read_text())
    summary = {k: v for k, v in summary.items() if not k.startswith("wall_ms")}
    return {"csv": rows, "jsonl": jsonl, "summary": summary}


@pytest.mark.criterion(7, "deterministic experiment reproduction")
def test_experiment_reproducible(tmp_path, capsys, record_property):
    a = run_cli_experiment(tmp_path / "a")
    b = run_cli_experiment(tmp_path / "b")
    capsys.readouterr()
    detail(record_property, f"{len(a['csv']) - 1} records")
    assert len(a["csv"]) > 2
    assert a == b


# -- 8 ---------------------------------------------------------------------

ORDERING_SEEDS = range(10)
# one slot per element, so requests cannot simply pile onto a single host
ORDERING_CONFIG = dict(scenario="oc", substrate_size=10, cr_range=(1, 1), ap_range=(1, 2),
                       element_capacity_slots=1)
NODE_CAP = 200


def bnb_nodes(freedom, seed):
    cfg = ScenarioConfig(freedom=freedom, seed=seed, **ORDERING_CONFIG)
    sub = experiment_substrate(cfg)
    req, pol = generate_request(cfg, sub, np.random.default_rng([seed, 1]), 0)
    sol = solve_milp(build(EmbeddingProblem(sub, req, pol)), SolverConfig(node_limit=NODE_CAP))
    return sol.stats.nodes


@pytest.mark.criterion(8, "complexity ordering")
def test_complexity_ordering(record_property):
    medians = [statistics.median(bnb_nodes(f, s) for s in ORDERING_SEEDS) for f in (0.0, 0.5, 1.0)]
    grew = []
    for seed in range(20):
        p = random_problem(seed)
        emb = embed(empty_state(p.substrate), p.request, p.policies, p.objective)
        if not isinstance(emb, Embedding):
            continue
        old = frozenset((u, v) for u, vs in emb.mapping.items() for v in vs)
        plain = build(p)
        moved = build(dataclasses.replace(p, migration=MigrationContext(old)))
        grew.append(len(moved.variables) >= len(plain.variables))
    detail(record_property, f"median B&B nodes at freedom 0/0.5/1: {medians} (cap {NODE_CAP}); "
                            f"migration variables never fewer on {sum(grew)}/{len(grew)}")
    assert len(grew) >= 10 and all(grew)
    # capped counts are lower bounds, so only the largest median may sit at the cap
    assert medians[0] <= medians[1] < NODE_CAP
    assert medians[1] <= medians[2]


# -- 9 ---------------------------------------------------------------------

@pytest.mark.criterion(9, "external solver round trip")
def test_external_solver_round_trip(record_property):
    highspy = pytest.importorskip("highspy", reason="no external solver installed")
    compared = 0
    with tempfile.TemporaryDirectory() as tmp:
        for seed in range(20):
            p = random_problem(2000 + seed)
            model = build(p)
            lp = os.path.join(tmp, f"m{seed}.lp")
            with open(lp, "w") as f:
                f.write(export_model(model, "lp"))
            h = highspy.Highs()
            h.setOptionValue("output_flag", False)
            h.setOptionValue("mip_rel_gap", 0.0)
            h.readModel(lp)
            h.run()
            sol_path = os.path.join(tmp, f"m{seed}.sol")
            h.writeSolution(sol_path, 0)
            with open(sol_path) as f:
                external = import_solution(model, f.read())
            ours = solve_milp(model, SolverConfig())
            assert external.status.value == ours.status.value or (
                math.isinf(ours.objective) and math.isinf(external.objective))
            if math.isfinite(ours.objective):
                assert abs(external.objective - ours.objective) <= TOL
                emb = decode(p, external)
                assert verify_embedding(empty_state(p.substrate), emb) == []
            compared += 1
    detail(record_property, f"{compared} instances via highspy")
    assert compared == 20
