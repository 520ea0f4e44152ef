import json

import numpy as np
import pytest

from cloudnet.engine import verify_embedding
from cloudnet.harness import (METRIC_COLUMNS, GenerationError, RunRecord, ScenarioConfig, connected_subset,
                              emit_metrics, experiment_substrate, generate_request, load_topology,
                              parse_edge_list, parse_metrics_csv, run_experiment, synthetic_edge_list)
from cloudnet.io import ParseError

TRIANGLE = "a b\nb c\na c\n"


def test_triangle_file():
    sub = load_topology(TRIANGLE)
    assert len(sub.node_ids()) == 3
    assert len(sub.link_ids()) == 3
    assert len(sub.expanded().vertices) == 6


def test_duplicate_edge_dropped_with_warning():
    warnings = []
    topo = parse_edge_list(TRIANGLE + "b a\n", warnings)
    assert len(topo.edges) == 3
    assert any("duplicate" in w and "line 4" in w for w in warnings)


def test_disconnected_accepted_with_warning():
    warnings = []
    topo = parse_edge_list("a b\nc d\n", warnings)
    assert len(topo.nodes) == 4
    assert any("not connected" in w for w in warnings)


@pytest.mark.parametrize("text,line", [("a b\nc\n", 2), ("a a\n", 1), ("a b bw=x\n", 1), ("a b foo=1\n", 1)])
def test_parse_errors_carry_line(text, line):
    with pytest.raises(ParseError) as err:
        parse_edge_list(text)
    assert err.value.line == line


def test_annotations():
    sub = load_topology("@node a slots=3\na b bw=7\n")
    assert sub.elements["a"].capacity("slot") == 3
    assert sub.elements["b"].capacity("slot") == 15
    assert sub.interface_capacity("a--b", "a", "bw") == 7


def test_subset_extraction_reproducible():
    topo = parse_edge_list(synthetic_edge_list(40, 1))
    a = connected_subset(topo, 25, np.random.default_rng(9))
    b = connected_subset(topo, 25, np.random.default_rng(9))
    assert a == b
    assert len(a.nodes) == 25
    c = connected_subset(topo, 25, np.random.default_rng(10))
    assert c.nodes != a.nodes


def fixed_rows(request, policies, substrate):
    out = {}
    for u in request.node_ids():
        ok = [v for v in substrate.elements if policies.suit_of(u, v)]
        out[u] = ok
    return out


def test_dc_requests_all_flexible():
    cfg = ScenarioConfig(scenario="dc", seed=1)
    sub = experiment_substrate(cfg)
    req, pol = generate_request(cfg, sub, np.random.default_rng(1))
    rows = fixed_rows(req, pol, sub)
    assert all(len(v) == len(sub.node_ids()) for v in rows.values())


def test_vpn_requests_all_fixed():
    cfg = ScenarioConfig(scenario="vpn", seed=1)
    sub = experiment_substrate(cfg)
    req, pol = generate_request(cfg, sub, np.random.default_rng(1))
    rows = fixed_rows(req, pol, sub)
    assert all(len(v) == 1 for v in rows.values())
    # distinct access points sit on distinct substrate nodes
    assert len({v[0] for v in rows.values()}) == len(rows)


def test_oc_counts_in_range_and_reproducible():
    cfg = ScenarioConfig(scenario="oc", seed=4, substrate_size=12)
    sub = experiment_substrate(cfg)
    for s in range(20):
        req, pol = generate_request(cfg, sub, np.random.default_rng(s))
        again, pol2 = generate_request(cfg, sub, np.random.default_rng(s))
        assert req == again and pol == pol2
        rows = fixed_rows(req, pol, sub)
        cr = sum(1 for v in rows.values() if len(v) > 1)
        ap = len(rows) - cr
        assert 1 <= cr <= 3 and 1 <= ap <= 7


def test_request_topology_connected():
    cfg = ScenarioConfig(scenario="oc", seed=2)
    sub = experiment_substrate(cfg)
    req, _ = generate_request(cfg, sub, np.random.default_rng(3))
    g = req.link_ids()
    seen = {req.node_ids()[0]}
    changed = True
    while changed:
        changed = False
        for l in g:
            ends = set(req.elements[l].endpoints)
            if ends & seen and not ends <= seen:
                seen |= ends
                changed = True
    assert seen == set(req.node_ids())


def test_request_larger_than_substrate():
    cfg = ScenarioConfig(scenario="oc", cr_range=(3, 3), ap_range=(7, 7), substrate_size=5)
    sub = experiment_substrate(cfg)
    with pytest.raises(GenerationError):
        generate_request(cfg, sub, np.random.default_rng(0))


def test_scenario_freedom_invariants():
    with pytest.raises(ValueError):
        ScenarioConfig(scenario="vpn", freedom=0.5)
    with pytest.raises(ValueError):
        ScenarioConfig(scenario="dc", freedom=0.0)
    assert ScenarioConfig(scenario="vpn").effective_freedom == 0.0
    cfg = ScenarioConfig(scenario="oc", freedom=0.5, seed=3)
    assert ScenarioConfig.from_dict(cfg.to_dict()) == cfg


def write(tmp_path, text):
    p = tmp_path / "topo.txt"
    p.write_text(text)
    return str(p)


def test_zero_capacity_rejects_first_request(tmp_path):
    cfg = ScenarioConfig(scenario="vpn", ap_range=(1, 1), cr_range=(0, 0), substrate_size=2,
                         topology=write(tmp_path, "@node a slots=0\n@node b slots=0\na b\n"), repetitions=2)
    res = run_experiment(cfg)
    assert [r.accepted for r in res.records] == [False, False]
    assert res.summary()["accepted_total"] == 0


def test_fifteen_unit_requests_fill_one_element(tmp_path):
    cfg = ScenarioConfig(scenario="vpn", ap_range=(1, 1), cr_range=(0, 0), substrate_size=1,
                         topology=write(tmp_path, "@node a\n"), repetitions=1)
    res = run_experiment(cfg)
    assert sum(r.accepted for r in res.records) == 15
    assert not res.records[-1].accepted and len(res.records) == 16


def small_config(**kw):
    base = dict(scenario="oc", cr_range=(1, 2), ap_range=(1, 2), substrate_size=6, repetitions=2,
                max_requests=3, seed=5)
    base.update(kw)
    return ScenarioConfig(**base)


def strip_time(records):
    return [(r.run, r.request_index, r.accepted, r.nodes_explored, r.objective, r.migrations) for r in records]


def test_same_seed_same_records():
    a = run_experiment(small_config())
    b = run_experiment(small_config())
    assert strip_time(a.records) == strip_time(b.records)


def test_accepted_embeddings_verify(monkeypatch):
    import cloudnet.harness as h
    seen = []
    real = h.commit

    def spy(state, emb):
        assert verify_embedding(state, emb) == []
        seen.append(emb.request_id)
        return real(state, emb)

    monkeypatch.setattr(h, "commit", spy)
    run_experiment(small_config(migration=True))
    assert seen


def test_emit_empty_is_header_only():
    assert emit_metrics([]) == ",".join(METRIC_COLUMNS) + "\n"
    assert emit_metrics([], "jsonl") == ""


def test_emit_one_record_and_round_trip():
    rec = RunRecord(0, 3, True, 12.34567, 7, 2.5, 1)
    text = emit_metrics([rec])
    lines = text.splitlines()
    assert len(lines) == 2
    assert lines[1] == "0,3,1,12.346,7,2.500000,1"
    row = parse_metrics_csv(text)[0]
    assert row == {"run": 0, "request_index": 3, "accepted": True, "wall_ms": 12.346,
                   "nodes_explored": 7, "objective": 2.5, "migrations": 1}
    rej = RunRecord(0, 4, False, 1.0, 0, None, 0)
    assert parse_metrics_csv(emit_metrics([rej]))[0]["objective"] is None
    j = json.loads(emit_metrics([rec, rej], "jsonl").splitlines()[1])
    assert list(j) == list(METRIC_COLUMNS)
    assert j["accepted"] is False and j["objective"] is None
