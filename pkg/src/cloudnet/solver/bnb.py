"""Branch-and-bound over the internal LP."""
from __future__ import annotations

import heapq
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from ..builder import MipModel
from .lp import LPStatus, StandardForm, WarmStart, solve_form


DOWN_FIRST = False


class Mode(str, Enum):
    BUILT_IN = "builtin"
    EXTERNAL = "external"


class MilpStatus(str, Enum):
    OPTIMAL = "optimal"
    FEASIBLE = "feasible"
    INFEASIBLE = "infeasible"
    TIME_LIMIT = "time_limit"
    NODE_LIMIT = "node_limit"


@dataclass(frozen=True)
class SolverConfig:
    mode: Mode = Mode.BUILT_IN
    deterministic: bool = True
    workers: int = 1
    time_limit: float = math.inf
    mip_gap: float = 0.0
    feasibility_only: bool = False
    tolerance: float = 1e-6
    # stop after this many LP nodes; unlike time_limit this is reproducible
    node_limit: int | None = None

    def __post_init__(self):
        if self.node_limit is not None and self.node_limit < 1:
            raise ValueError("node_limit must be positive")
        if self.workers < 1:
            raise ValueError("workers must be positive")
        if self.mip_gap < 0:
            raise ValueError("mip_gap must be nonnegative")

    @property
    def effective_workers(self) -> int:
        return 1 if self.deterministic else self.workers


@dataclass
class SolveStats:
    nodes: int = 0
    lp_iterations: int = 0
    wall_time: float = 0.0


@dataclass
class MilpSolution:
    status: MilpStatus
    values: dict[str, float]
    objective: float
    bound: float
    stats: SolveStats = field(default_factory=SolveStats)
    infeasible_families: tuple[str, ...] = ()
    warnings: list[str] = field(default_factory=list)

    @property
    def has_solution(self) -> bool:
        return self.status in (MilpStatus.OPTIMAL, MilpStatus.FEASIBLE) or (
            self.status in (MilpStatus.TIME_LIMIT, MilpStatus.NODE_LIMIT) and bool(self.values))


@dataclass(order=True)
class _Node:
    bound: float
    seq: int
    fixes: tuple = field(compare=False)  # ((index, value), ...)
    depth: int = field(compare=False, default=0)
    start: WarmStart | None = field(compare=False, default=None)


def _gap_abs(config: SolverConfig, incumbent: float) -> float:
    scale = max(1.0, abs(incumbent))
    return max(config.mip_gap * scale, 1e-9 * scale)


def solve_milp(model: MipModel, config: SolverConfig = SolverConfig()) -> MilpSolution:
    """Branch on the most fractional binary (ties by name), up-branch first.

    Deterministic mode runs depth-first on one logical worker; otherwise open
    nodes are taken best-bound first in batches of ``workers`` LPs.
    """
    if config.mode is not Mode.BUILT_IN:
        raise ValueError("external mode solves through export_model/import_solution")
    start = time.perf_counter()
    form = StandardForm.from_model(model)
    bin_idx = np.flatnonzero(form.binary)
    # tie-break by variable name: order binaries by name once
    name_rank = np.empty(len(form.names), dtype=np.int64)
    name_rank[np.argsort(np.array(form.names, dtype=object), kind="stable")] = np.arange(len(form.names))
    stats = SolveStats()
    tol = config.tolerance

    incumbent_x: np.ndarray | None = None
    incumbent = math.inf
    pruned_bound = math.inf
    lp_failed = False
    infeasible_families: tuple[str, ...] = ()
    timed_out = False
    node_capped = False
    stopped_early = False

    def bounds_for(fixes):
        lo = form.lo.copy()
        hi = form.hi.copy()
        for j, val in fixes:
            lo[j] = hi[j] = val
        return lo, hi

    def run_lp(node: _Node):
        lo, hi = bounds_for(node.fixes)
        return solve_form(form, lo, hi, tol=tol, start=node.start)

    def polish(x: np.ndarray, fixes, start=None):
        """Re-solve with every binary fixed at its rounded value."""
        lo, hi = bounds_for(fixes)
        rounded = np.round(x[bin_idx])
        lo[bin_idx] = hi[bin_idx] = rounded
        res = solve_form(form, lo, hi, tol=tol, start=start)
        stats.lp_iterations += res.iterations
        if res.status is LPStatus.OPTIMAL:
            return res.x, res.objective
        x = x.copy()
        x[bin_idx] = rounded
        return x, float(form.c @ x)

    seq = 0
    open_nodes: list[_Node] = [_Node(-math.inf, seq, ())]
    workers = config.effective_workers
    depth_first = config.deterministic
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None

    try:
        while open_nodes:
            if time.perf_counter() - start > config.time_limit:
                timed_out = True
                break
            if config.node_limit is not None and stats.nodes >= config.node_limit:
                node_capped = True
                break
            if depth_first:
                batch = [open_nodes.pop()]
            else:
                batch = [heapq.heappop(open_nodes) for _ in range(min(workers, len(open_nodes)))]
            live = []
            for node in batch:
                if node.bound >= incumbent - _gap_abs(config, incumbent):
                    pruned_bound = min(pruned_bound, node.bound)
                else:
                    live.append(node)
            if not live:
                continue
            if pool is not None and len(live) > 1:
                results = list(pool.map(run_lp, live))
            else:
                results = [run_lp(nd) for nd in live]

            for node, res in zip(live, results):
                stats.nodes += 1
                stats.lp_iterations += res.iterations
                if res.status is LPStatus.INFEASIBLE:
                    if not node.fixes:
                        infeasible_families = tuple(sorted({form.row_families[i] for i in res.infeasible_rows}))
                    continue
                if res.status is not LPStatus.OPTIMAL:
                    lp_failed = True
                    continue
                obj = res.objective
                if obj >= incumbent - _gap_abs(config, incumbent):
                    pruned_bound = min(pruned_bound, obj)
                    continue
                xb = res.x[bin_idx]
                frac = np.abs(xb - np.round(xb))
                frac_mask = frac > tol
                if not frac_mask.any():
                    x, val = polish(res.x, node.fixes, res.basis)
                    if val < incumbent:
                        incumbent, incumbent_x = val, x
                    if config.feasibility_only:
                        stopped_early = True
                        break
                    continue
                cand = bin_idx[frac_mask]
                cfrac = frac[frac_mask]
                best = cfrac.max()
                ties = cand[cfrac >= best - 1e-12]
                j = int(ties[np.argmin(name_rank[ties])])
                a, b = (0.0, 1.0) if DOWN_FIRST else (1.0, 0.0)
                first = _Node(obj, seq + 1, node.fixes + ((j, a),), node.depth + 1, res.basis)
                second = _Node(obj, seq + 2, node.fixes + ((j, b),), node.depth + 1, res.basis)
                seq += 2
                if depth_first:
                    open_nodes.append(second)
                    open_nodes.append(first)
                else:
                    heapq.heappush(open_nodes, first)
                    heapq.heappush(open_nodes, second)
            if stopped_early:
                break
    finally:
        if pool is not None:
            pool.shutdown()

    stats.wall_time = time.perf_counter() - start
    remaining = min((nd.bound for nd in open_nodes), default=math.inf)
    if incumbent_x is None:
        values: dict[str, float] = {}
        status = (MilpStatus.TIME_LIMIT if timed_out else
                  MilpStatus.NODE_LIMIT if node_capped else MilpStatus.INFEASIBLE)
        bound = min(remaining, pruned_bound) if (timed_out or node_capped or lp_failed) else math.inf
        warnings = ["LP numerical failure at some nodes; infeasibility not proven"] if lp_failed else []
        return MilpSolution(status, values, math.inf, bound, stats,
                            infeasible_families if status is MilpStatus.INFEASIBLE else (), warnings)

    bound = min(incumbent, remaining, pruned_bound)
    if timed_out:
        status = MilpStatus.TIME_LIMIT
    elif node_capped:
        status = MilpStatus.NODE_LIMIT
    elif stopped_early or lp_failed:
        status = MilpStatus.FEASIBLE
    else:
        status = MilpStatus.OPTIMAL
    values = {}
    for i, name in enumerate(form.names):
        v = float(incumbent_x[i])
        if form.binary[i]:
            v = float(round(v))
        values[name] = v
    warnings = ["LP numerical failure at some nodes; optimality not proven"] if lp_failed else []
    return MilpSolution(status, values, float(incumbent), float(bound), stats, (), warnings)
