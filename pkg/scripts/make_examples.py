"""Write the example documents in ``data/``.

    python scripts/make_examples.py [outdir]

Triangle substrate (three nodes with 4 cpu, links with 10 bandwidth), one
committed two-node net whose access point is pinned to ``s0``, a second
request to embed and a small experiment config.
"""
import sys
from pathlib import Path

from cloudnet import io as docs
from cloudnet.engine import commit, embed
from cloudnet.model import (EmbeddingProblem, Kind, Layer, NetworkElement, PolicyMatrices, Request,
                            ResourceType, SubstrateGraph, ValueType)
from cloudnet.state import empty_state


def triangle() -> SubstrateGraph:
    res = {
        "cpu": ResourceType("cpu", "/node/cpu", Layer.SUBSTRATE),
        "bw": ResourceType("bw", "/link/symmetric/bandwidth", Layer.SUBSTRATE),
        "vcpu": ResourceType("vcpu", "/node/cpu", Layer.VIRTUAL),
        "vbw": ResourceType("vbw", "/link/symmetric/bandwidth", Layer.VIRTUAL),
    }
    els = {}
    for i in range(3):
        els[f"s{i}"] = NetworkElement(f"s{i}", Kind.NODE, Layer.SUBSTRATE, (), {"cpu": 4.0, "bw": 20.0})
    ifaces = {}
    for a, b in ((0, 1), (0, 2), (1, 2)):
        lid = f"l{a}{b}"
        els[lid] = NetworkElement(lid, Kind.LINK, Layer.SUBSTRATE, (f"s{a}", f"s{b}"), {"bw": 10.0})
        for p in (f"s{a}", f"s{b}"):
            ifaces[(lid, p, "bw")] = 10.0
            ifaces[(p, lid, "bw")] = 10.0
    return SubstrateGraph(res, els, ifaces, {("vcpu", "cpu"): 1.0, ("vbw", "bw"): 1.0})


def net(rid, ap_host, cpu=1.0, bw=1.0, substrate=None):
    """Access point ``ap`` fixed at ``ap_host``, cloud node ``cr`` anywhere."""
    req = Request.create(rid, [
        NetworkElement("ap", Kind.NODE, Layer.VIRTUAL, (), {}, {("vcpu", ValueType.CONSTANT): cpu}),
        NetworkElement("cr", Kind.NODE, Layer.VIRTUAL, (), {}, {("vcpu", ValueType.MINIMUM): cpu}),
        NetworkElement("e", Kind.LINK, Layer.VIRTUAL, ("ap", "cr"), {}, {("vbw", ValueType.MINIMUM): bw}),
    ])
    suit = {("ap", v): int(v == ap_host) for v in substrate.elements}
    suit.update({("cr", v): 0 for v in substrate.link_ids()})
    return req, PolicyMatrices(suit)


def main(out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    sub = triangle()
    req, pol = net("net1", "s0", cpu=2.0, substrate=sub)
    problem = EmbeddingProblem(sub, req, pol)
    (out / "problem.json").write_text(docs.dumps(docs.problem_to_dict(problem)))

    state = empty_state(sub)
    state = commit(state, embed(state, req, pol))
    (out / "state.json").write_text(docs.dumps(docs.state_to_dict(state)))

    req2, pol2 = net("net2", "s1", cpu=2.0, substrate=sub)
    (out / "request.json").write_text(docs.dumps({"request": docs.request_to_dict(req2),
                                                  "policies": docs.policies_to_dict(pol2)}))
    # cpu 5 cannot fit anywhere
    big, bpol = net("big", "s1", cpu=5.0, substrate=sub)
    (out / "request_infeasible.json").write_text(docs.dumps({"request": docs.request_to_dict(big),
                                                             "policies": docs.policies_to_dict(bpol)}))
    (out / "subset_full.json").write_text(docs.dumps({"subset": list(sub.node_ids())}))
    (out / "subset_without_s0.json").write_text(docs.dumps({"subset": ["s1", "s2"]}))
    (out / "experiment.json").write_text(docs.dumps({
        "scenario": "oc", "freedom": 0.5, "cr_range": [1, 2], "ap_range": [1, 3], "substrate_size": 8,
        "repetitions": 2, "max_requests": 4, "seed": 7, "time_limit": 60,
    }))


if __name__ == "__main__":
    main(Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).resolve().parent.parent / "data")
