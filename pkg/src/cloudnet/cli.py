"""Command-line entry point.

Exit codes: 0 success, 1 domain rejection (infeasible, invalid problem or
embedding), 2 usage or parse error. Documents go to stdout; stderr only
carries diagnostics.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import secrets
import sys
from pathlib import Path

from . import io as docs
from .builder import build
from .checker import verify_embedding
from .engine import MigrationInputs, Rejection, commit, embed, reembed, whatif_subset
from .harness import ScenarioConfig, emit_metrics, run_experiment
from .model import ModelError, ObjectiveConfig, ObjectiveKind, validate_problem
from .solver import SolverConfig, export_model
from .solver.formats import ExportError

CONFIG_ENV = "CLOUDNET_CONFIG"


class UsageError(Exception):
    pass


def _read(path: str) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror or exc}") from None


def _solver(args) -> SolverConfig:
    limit = math.inf if args.time_limit is None else args.time_limit
    if limit <= 0:
        raise UsageError("--time-limit must be positive")
    if args.workers < 1:
        raise UsageError("--workers must be positive")
    return SolverConfig(deterministic=args.deterministic, workers=args.workers, time_limit=limit)


def _objective(args, fallback: ObjectiveConfig | None = None) -> ObjectiveConfig | None:
    if getattr(args, "objective", None) is None:
        return fallback
    return ObjectiveConfig(ObjectiveKind(args.objective))


def _emit(obj) -> None:
    sys.stdout.write(docs.dumps(obj))


def cmd_validate(args) -> int:
    problem = docs.parse_problem(_read(args.problem))
    report = validate_problem(problem)
    _emit({"valid": not report, "report": report})
    return 0 if not report else 1


def cmd_export(args) -> int:
    problem = docs.parse_problem(_read(args.problem))
    model = build(problem)
    for w in model.warnings:
        print(f"warning: {w}", file=sys.stderr)
    sys.stdout.write(export_model(model, args.format))
    return 0


def cmd_embed(args) -> int:
    state = docs.parse_state(_read(args.state))
    request, policies, objective = docs.parse_request(_read(args.request))
    result = embed(state, request, policies, _objective(args, objective), _solver(args))
    if isinstance(result, Rejection):
        _emit(docs.rejection_to_dict(result))
        return 1
    if args.commit:
        Path(args.commit).write_text(docs.dumps(docs.state_to_dict(commit(state, result))))
    _emit(docs.embedding_to_dict(result))
    return 0


def _with_default_penalty(state, args) -> MigrationInputs:
    if args.default_transit < 0:
        raise UsageError("--default-transit must be nonnegative")
    if args.penalty is None:
        return MigrationInputs(default_transit=args.default_transit)
    if args.penalty <= 0:
        raise UsageError("--penalty must be positive")
    penalty = {u: args.penalty for e in state.committed.values() for u in e.request.node_ids()}
    return MigrationInputs(penalty, {}, args.default_transit)


def cmd_reembed(args) -> int:
    state = docs.parse_state(_read(args.state))
    plan = reembed(state, _objective(args), _with_default_penalty(state, args), _solver(args), args.joint)
    _emit(docs.plan_to_dict(plan))
    return 0


def cmd_whatif(args) -> int:
    state = docs.parse_state(_read(args.state))
    subset = docs.parse_subset(_read(args.subset))
    result = whatif_subset(state, subset, _solver(args), _with_default_penalty(state, args), args.joint)
    _emit(docs.whatif_to_dict(result))
    return 0 if result.feasible else 1


def cmd_verify(args) -> int:
    state = docs.parse_state(_read(args.state))
    embedding = docs.parse_embedding(_read(args.embedding))
    report = verify_embedding(state, embedding)
    _emit({"valid": not report,
           "violations": [{"check": v.check, "where": list(v.where), "message": v.message} for v in report]})
    return 0 if not report else 1


def cmd_experiment(args) -> int:
    path = args.config or os.environ.get(CONFIG_ENV)
    data = {}
    if path:
        data = docs.load_json(_read(path))
        if not isinstance(data, dict):
            raise UsageError("experiment config must be a JSON object")
    if args.seed is not None:
        data["seed"] = args.seed
    elif "seed" not in data:
        data["seed"] = secrets.randbelow(2 ** 31)
        print(f"seed: {data['seed']}", file=sys.stderr)
    if args.objective is not None:
        data["objective"] = {"kind": args.objective}
    try:
        config = ScenarioConfig.from_dict(data)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad experiment config: {exc}") from None
    solver = _solver(args)
    if math.isinf(solver.time_limit) and not math.isinf(config.time_limit):
        solver = SolverConfig(deterministic=solver.deterministic, workers=solver.workers,
                              time_limit=config.time_limit)
    result = run_experiment(config, solver)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.csv").write_text(emit_metrics(result.records, "csv"))
    (out / "metrics.jsonl").write_text(emit_metrics(result.records, "jsonl"))
    (out / "summary.json").write_text(docs.dumps({"config": config.to_dict(), **result.summary()}))
    summary = result.summary()
    print(f"accepted {summary['accepted_total']} requests over {summary['runs']} runs", file=sys.stderr)
    return 0


def parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cloudnet", description="Virtual network embedding via linear MIP.")
    sub = p.add_subparsers(dest="command", required=True)

    def solver_flags(sp, objective=True):
        sp.add_argument("--deterministic", action="store_true",
                        help="fixed depth-first search order on one logical worker")
        sp.add_argument("--workers", type=int, default=1, help="ignored with --deterministic")
        sp.add_argument("--time-limit", type=float, default=None, metavar="SECONDS")
        sp.add_argument("--seed", type=int, default=None)
        if objective:
            sp.add_argument("--objective", choices=[k.value for k in ObjectiveKind], default=None)

    def migration_flags(sp):
        sp.add_argument("--penalty", type=float, default=None,
                        help="migration penalty for every virtual node (default 1)")
        sp.add_argument("--default-transit", type=float, default=0.0)
        sp.add_argument("--joint", action="store_true", help="solve all requests in one model")

    s = sub.add_parser("embed", help="embed a request against a substrate state")
    s.add_argument("--state", required=True)
    s.add_argument("--request", required=True)
    s.add_argument("--commit", metavar="STATE_OUT", help="write the state with the embedding committed")
    solver_flags(s)
    s.set_defaults(func=cmd_embed)

    s = sub.add_parser("reembed", help="propose migrations for committed requests")
    s.add_argument("--state", required=True)
    solver_flags(s)
    migration_flags(s)
    s.set_defaults(func=cmd_reembed)

    s = sub.add_parser("whatif", help="can the committed requests live inside a subset?")
    s.add_argument("--state", required=True)
    s.add_argument("--subset", required=True)
    solver_flags(s, objective=False)
    migration_flags(s)
    s.set_defaults(func=cmd_whatif)

    s = sub.add_parser("experiment", help="run a scenario experiment")
    s.add_argument("--config", default=None, help=f"defaults to ${CONFIG_ENV}")
    s.add_argument("--out", required=True)
    solver_flags(s)
    s.set_defaults(func=cmd_experiment)

    s = sub.add_parser("export-model", help="write the MIP of a problem as LP or MPS text")
    s.add_argument("--problem", required=True)
    s.add_argument("--format", choices=["lp", "mps"], default="lp")
    s.set_defaults(func=cmd_export)

    s = sub.add_parser("verify", help="check an embedding against a state")
    s.add_argument("--state", required=True)
    s.add_argument("--embedding", required=True)
    s.set_defaults(func=cmd_verify)

    s = sub.add_parser("validate", help="report structural problems in a problem document")
    s.add_argument("--problem", required=True)
    s.set_defaults(func=cmd_validate)
    return p


def main(argv: list[str] | None = None) -> int:
    p = parser()
    try:
        args = p.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (UsageError, docs.ParseError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ModelError, ExportError) as exc:
        print(f"rejected: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
