import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import linprog

from cloudnet.builder import (Integrality, LinearConstraint, MipModel, Relation, Variable, build,
                              evaluate_constraints)
from cloudnet.engine import decode, verify_embedding
from cloudnet.model import EmbeddingProblem, PolicyMatrices, Request
from cloudnet.solver import (ExportError, Format, LPStatus, MilpStatus, ModelParseError, SolutionFormatError,
                             SolverConfig, export_model, import_model, import_solution, solve_lp, solve_milp)
from cloudnet.solver.lp import simplex
from cloudnet.state import empty_state

from corpus import random_problem, triangle, vlink, vnode
from oracle import brute_force


def model(variables, rows, objective):
    vs = {}
    for name, lo, hi, binary in variables:
        var = Variable((name,), lo, hi, Integrality.BINARY if binary else Integrality.CONTINUOUS)
        vs[var.name] = var
    cons = [LinearConstraint(tuple((f"{n}()", c) for n, c in terms.items()), Relation(rel), rhs, "row", (str(i),))
            for i, (terms, rel, rhs) in enumerate(rows)]
    return MipModel(vs, cons, {f"{n}()": c for n, c in objective.items()})


def test_lp_single_bound():
    m = model([("x", 0, math.inf, False)], [({"x": 1}, ">=", 3)], {"x": 1})
    sol = solve_lp(m)
    assert sol.status is LPStatus.OPTIMAL
    assert sol.value == pytest.approx(3)


def test_lp_two_vars():
    m = model([("x", 0, math.inf, False), ("y", 0, math.inf, False)], [({"x": 1, "y": 1}, ">=", 2)],
              {"x": 1, "y": 1})
    assert solve_lp(m).value == pytest.approx(2)


def test_lp_map_node_relaxation_picks_cheaper():
    # n1 + n2 = 1, weights 1 and 0.4: vertices give 1 and 0.4
    m = model([("n1", 0, 1, True), ("n2", 0, 1, True)], [({"n1": 1, "n2": 1}, "=", 1)], {"n1": 1, "n2": 0.4})
    sol = solve_lp(m)
    assert sol.value == pytest.approx(0.4)
    assert sol.point["n2()"] == pytest.approx(1)


def test_lp_infeasible_and_unbounded():
    m = model([("x", 0, 1, False)], [({"x": 1}, ">=", 2)], {"x": 1})
    sol = solve_lp(m)
    assert sol.status is LPStatus.INFEASIBLE
    assert sol.infeasible_families == ("row",)
    m = model([("x", 0, math.inf, False)], [({"x": 1}, ">=", 2)], {"x": -1})
    assert solve_lp(m).status is LPStatus.UNBOUNDED


def test_lp_rejects_non_finite():
    m = model([("x", 0, 1, False)], [({"x": math.nan}, ">=", 0)], {"x": 1})
    with pytest.raises(ValueError):
        solve_lp(m)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6))
def test_simplex_matches_linprog(seed):
    rng = np.random.default_rng(seed)
    m, n = int(rng.integers(1, 7)), int(rng.integers(1, 7))
    A = rng.integers(-3, 4, (m, n)).astype(float) * (rng.random((m, n)) < 0.7)
    b = rng.integers(-4, 8, m).astype(float)
    rel = rng.integers(0, 3, m)
    c = rng.integers(-3, 4, n).astype(float)
    lo = np.zeros(n)
    hi = np.where(rng.random(n) < 0.5, rng.integers(1, 6, n), np.inf).astype(float)
    ours = simplex(A, b, rel, c, lo, hi)
    # relation codes: 0 <=, 1 =, 2 >=
    ub = [A[i] * (1 if rel[i] == 0 else -1) for i in range(m) if rel[i] != 1]
    bu = [b[i] * (1 if rel[i] == 0 else -1) for i in range(m) if rel[i] != 1]
    eq = [i for i in range(m) if rel[i] == 1]
    ref = linprog(c, A_ub=np.array(ub) if ub else None, b_ub=np.array(bu) if bu else None,
                  A_eq=A[eq] if eq else None, b_eq=b[eq] if eq else None,
                  bounds=[(0, None if math.isinf(h) else h) for h in hi], method="highs")
    expected = {0: LPStatus.OPTIMAL, 2: LPStatus.INFEASIBLE, 3: LPStatus.UNBOUNDED}[ref.status]
    assert ours.status is expected
    if expected is LPStatus.OPTIMAL:
        assert ours.objective == pytest.approx(ref.fun, abs=1e-6)


def test_forced_binaries_solved_at_root():
    sub = triangle()
    req = Request.create("r", [vnode("x", min=1)])
    pol = PolicyMatrices({("x", v): int(v == "s1") for v in sub.elements})
    sol = solve_milp(build(EmbeddingProblem(sub, req, pol)))
    assert sol.status is MilpStatus.OPTIMAL
    assert sol.stats.nodes == 1


def triangle_pair():
    sub = triangle()
    req = Request.create("r", [vnode("x", const=1), vnode("y", const=1), vlink("e", ("x", "y"), const=1)])
    suit = {(u, v): 0 for u in "xy" for v in sub.link_ids()}
    # make co-location impossible so the link must be routed
    sub = triangle(cpu=1)
    return EmbeddingProblem(sub, req, PolicyMatrices(suit))


def test_triangle_matches_brute_force():
    p = triangle_pair()
    sol = solve_milp(build(p))
    ref = brute_force(p)
    assert sol.status is MilpStatus.OPTIMAL
    # 2 cpu units + one link unit on each of source, link element and sink
    assert ref.objective == pytest.approx(5)
    assert sol.objective == pytest.approx(ref.objective, abs=1e-6)


def test_feasibility_only_is_checker_clean():
    p = triangle_pair()
    m = build(p)
    sol = solve_milp(m, SolverConfig(mip_gap=0.5, feasibility_only=True))
    assert sol.has_solution
    emb = decode(p, sol)
    assert verify_embedding(empty_state(p.substrate), emb) == []


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 4000))
def test_weak_duality_and_independent_check(seed):
    m = build(random_problem(seed))
    sol = solve_milp(m)
    if sol.status is MilpStatus.OPTIMAL:
        assert sol.objective >= sol.bound - 1e-6
        assert abs(sol.objective - sol.bound) <= 1e-6 * max(1, abs(sol.objective)) + 1e-9
        assert evaluate_constraints(m, sol.values) == []
        for n in m.binaries():
            assert sol.values[n] in (0.0, 1.0)


def test_deterministic_stats_independent_of_workers():
    m = build(random_problem(42, broadcast=True))
    a = solve_milp(m, SolverConfig(deterministic=True, workers=1))
    b = solve_milp(m, SolverConfig(deterministic=True, workers=4))
    assert (a.stats.nodes, a.stats.lp_iterations, a.objective) == (b.stats.nodes, b.stats.lp_iterations, b.objective)
    assert a.values == b.values


def test_parallel_mode_reaches_same_optimum():
    for seed in (5, 8, 13):
        m = build(random_problem(seed))
        a = solve_milp(m)
        b = solve_milp(m, SolverConfig(deterministic=False, workers=3))
        assert a.status == b.status
        if a.has_solution:
            assert a.objective == pytest.approx(b.objective, abs=1e-6)


def test_infeasible_reports_families():
    sub = triangle(cpu=1)
    req = Request.create("r", [vnode("x", const=2)])
    sol = solve_milp(build(EmbeddingProblem(sub, req)))
    assert sol.status is MilpStatus.INFEASIBLE
    assert sol.infeasible_families


def test_time_limit_status():
    m = build(random_problem(7))
    sol = solve_milp(m, SolverConfig(time_limit=0.0))
    assert sol.status in (MilpStatus.TIME_LIMIT, MilpStatus.OPTIMAL, MilpStatus.INFEASIBLE)
    if sol.status is MilpStatus.TIME_LIMIT:
        assert sol.stats.nodes <= 1


def test_export_single_variable_lp():
    m = model([("x", 0, 5, False)], [], {"x": 1})
    text = export_model(m, Format.LP)
    lines = text.splitlines()
    assert sum(1 for l in lines if l.strip().lower().startswith("obj")) == 1
    bounds = lines[lines.index("Bounds") + 1:]
    assert any("x" in l and "5" in l for l in bounds[:1])


def random_model(seed, rows=50):
    rng = np.random.default_rng(seed)
    n = 20
    vars_ = [(f"x{i}", 0.0, float(rng.integers(1, 9)) if rng.random() < 0.5 else math.inf, rng.random() < 0.3)
             for i in range(n)]
    vars_ = [(nm, lo, 1.0 if b else hi, b) for nm, lo, hi, b in vars_]
    cons = []
    for _ in range(rows):
        idx = rng.choice(n, 4, replace=False)
        terms = {f"x{i}": float(rng.integers(-5, 6)) or 1.0 for i in idx}
        cons.append((terms, ["<=", ">=", "="][int(rng.integers(3))], float(rng.integers(-3, 10))))
    return model(vars_, cons, {f"x{i}": float(rng.integers(-2, 5)) for i in range(n)})


def structure(m: MipModel):
    vs = sorted((v.key, v.lower, v.upper, v.integrality) for v in m.variables.values())
    cs = sorted((tuple(sorted(c.terms)), c.relation, c.rhs) for c in m.constraints)
    return vs, cs, sorted(m.objective.items())


def renamed(m):
    """``m`` with the exported names, as import reconstructs it."""
    text = export_model(m, Format.LP)
    return import_model(text, Format.LP), text


@pytest.mark.parametrize("fmt", [Format.LP, Format.MPS])
def test_round_trip_random_model(fmt):
    m = random_model(1)
    back = import_model(export_model(m, fmt), fmt)
    assert len(back.constraints) == 50
    ref = import_model(export_model(m, Format.LP), Format.LP)
    assert structure(back) == structure(ref)
    # the round trip is a fixed point
    assert structure(import_model(export_model(back, fmt), fmt)) == structure(back)


@pytest.mark.parametrize("fmt", [Format.LP, Format.MPS])
def test_round_trip_embedding_model(fmt):
    m = build(random_problem(21, broadcast=True))
    back = import_model(export_model(m, fmt), fmt)
    assert len(back.variables) == len(m.variables)
    assert len(back.constraints) == len(m.constraints)
    sol = solve_milp(m)
    again = solve_milp(back)
    assert sol.status == again.status
    if sol.has_solution:
        assert again.objective == pytest.approx(sol.objective, abs=1e-6)


def test_export_collision_listed():
    m = MipModel({"a(b)": Variable(("a", "b")), "a.b": Variable(("a.b",))}, [], {})
    with pytest.raises(ExportError, match="a.b"):
        export_model(m)


def test_export_names_limited():
    long = "v" * 400
    m = MipModel({f"{long}()": Variable((long,))}, [], {f"{long}()": 1.0})
    text = export_model(m)
    assert max(len(tok) for tok in text.split()) <= 255


def test_import_model_parse_error_line():
    with pytest.raises(ModelParseError) as err:
        import_model("Minimize\n obj: x\nSubject To\n c1: x >= = 2\nEnd\n")
    assert err.value.line == 4


def small_solved():
    m = model([("x", 0, 4, False), ("b", 0, 1, True)], [({"x": 1, "b": 2}, ">=", 3)], {"x": 1, "b": 1})
    return m, solve_milp(m)


def test_import_solution_identity():
    m, sol = small_solved()
    doc = "\n".join(f"{n} {v!r}" for n, v in sol.values.items())
    got = import_solution(m, doc)
    assert got.values == sol.values
    assert got.objective == pytest.approx(sol.objective)
    assert got.warnings == []


def test_import_solution_partial_warns():
    m, sol = small_solved()
    got = import_solution(m, "x 1\n")
    assert got.values == {"x()": 1.0, "b()": 0.0}
    assert any("b()" in w for w in got.warnings)


def test_import_solution_unknown_variable():
    m, _ = small_solved()
    with pytest.raises(SolutionFormatError) as err:
        import_solution(m, "x 1\nzz 3\n")
    assert err.value.line == 2


def test_import_solution_malformed():
    m, _ = small_solved()
    with pytest.raises(SolutionFormatError) as err:
        import_solution(m, "x 1 2 3 4\n")
    assert err.value.line == 1


def test_import_cbc_listing():
    m, _ = small_solved()
    doc = "Optimal - objective value 2.00000000\n      0 x   1  0\n      1 b   1  0\n"
    got = import_solution(m, doc)
    assert got.status is MilpStatus.OPTIMAL
    assert got.objective == pytest.approx(2)


def test_node_limit_is_reproducible():
    p = random_problem(7, max_sub=4, max_virtual=3)
    m = build(p)
    full = solve_milp(m)
    capped = [solve_milp(m, SolverConfig(node_limit=1)) for _ in range(2)]
    assert capped[0].stats.nodes == 1 == capped[1].stats.nodes
    if full.stats.nodes > 1:
        assert capped[0].status is MilpStatus.NODE_LIMIT
        assert capped[0].bound <= full.objective + 1e-9
    with pytest.raises(ValueError):
        SolverConfig(node_limit=0)
