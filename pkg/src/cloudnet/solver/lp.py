"""Bounded-variable primal simplex.

Rows are turned into equalities with one bounded slack each. Phase one
minimises the total bound violation of the basic variables, so any basis
(the all-slack one, or a parent's in branch-and-bound) can start a solve. The basis is kept as a sparse LU factorisation of a
reference basis plus a product-form eta file, refactorised periodically.
Dantzig pricing switches to Bland's rule after a run of degenerate pivots.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from ..builder import Integrality, MipModel, Relation


class LPStatus(str, Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    NUMERICAL = "numerical_failure"
    ITERATION_LIMIT = "iteration_limit"


_LE, _EQ, _GE = 0, 1, 2
_REL = {Relation.LE: _LE, Relation.EQ: _EQ, Relation.GE: _GE}

BASIC, AT_LOWER, AT_UPPER, FREE = 0, 1, 2, 3

REFACTOR_EVERY = 40
DEGENERATE_RUN = 50
PIVOT_TOL = 1e-7
HARRIS_TOL = 1e-9


@dataclass
class StandardForm:
    """Matrix view of a :class:`MipModel` (rows in model order)."""

    names: list[str]
    A: sp.csr_matrix
    b: np.ndarray
    rel: np.ndarray
    c: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    binary: np.ndarray
    row_names: list[str]
    row_families: list[str]
    index: dict[str, int] = field(default_factory=dict)

    @classmethod
    def from_model(cls, model: MipModel) -> "StandardForm":
        names = list(model.variables)
        index = {n: i for i, n in enumerate(names)}
        rows, cols, vals = [], [], []
        b = np.zeros(len(model.constraints))
        rel = np.zeros(len(model.constraints), dtype=np.int8)
        for i, con in enumerate(model.constraints):
            for n, coef in con.terms:
                rows.append(i)
                cols.append(index[n])
                vals.append(coef)
            b[i] = con.rhs
            rel[i] = _REL[con.relation]
        A = sp.csr_matrix((vals, (rows, cols)), shape=(len(model.constraints), len(names)))
        c = np.zeros(len(names))
        for n, coef in model.objective.items():
            c[index[n]] = coef
        var = list(model.variables.values())
        return cls(
            names=names,
            A=A,
            b=b,
            rel=rel,
            c=c,
            lo=np.array([v.lower for v in var], dtype=float),
            hi=np.array([v.upper for v in var], dtype=float),
            binary=np.array([v.integrality is Integrality.BINARY for v in var], dtype=bool),
            row_names=[con.name for con in model.constraints],
            row_families=[con.family for con in model.constraints],
            index=index,
        )


@dataclass(frozen=True)
class WarmStart:
    """Basis of a finished solve: basic columns and nonbasic bound states."""

    basis: np.ndarray
    state: np.ndarray


@dataclass
class LPResult:
    status: LPStatus
    x: np.ndarray
    objective: float
    iterations: int
    infeasible_rows: tuple[int, ...] = ()
    basis: WarmStart | None = None


class _Basis:
    """LU of a reference basis plus eta columns."""

    def __init__(self, F: sp.csc_matrix, basis: np.ndarray):
        self.m = F.shape[0]
        self.lu = splu(F[:, basis].tocsc(), permc_spec="COLAMD")
        self.etas: list[tuple[int, np.ndarray]] = []

    def ftran(self, a: np.ndarray) -> np.ndarray:
        x = self.lu.solve(a)
        for r, alpha in self.etas:
            xr = x[r] / alpha[r]
            if xr != 0.0:
                x -= alpha * xr
            x[r] = xr
        return x

    def btran(self, c: np.ndarray) -> np.ndarray:
        z = c.copy()
        for r, alpha in reversed(self.etas):
            z[r] = (z[r] - (z @ alpha - z[r] * alpha[r])) / alpha[r]
        return self.lu.solve(z, trans="T")

    def push(self, r: int, alpha: np.ndarray) -> None:
        self.etas.append((r, alpha))


def _column(F: sp.csc_matrix, j: int, m: int) -> np.ndarray:
    out = np.zeros(m)
    s, e = F.indptr[j], F.indptr[j + 1]
    out[F.indices[s:e]] = F.data[s:e]
    return out


def equilibrate(A: sp.csr_matrix, passes: int = 6) -> tuple[np.ndarray, np.ndarray]:
    """Power-of-two row and column factors bringing entries of ``A`` near 1."""
    m, n = A.shape
    r = np.ones(m)
    s = np.ones(n)
    if A.nnz == 0:
        return r, s
    coo = A.tocoo()
    rows, cols = coo.row, coo.col
    logs = np.log2(np.abs(coo.data))
    lr = np.zeros(m)
    lc = np.zeros(n)
    for _ in range(passes):
        v = logs + lr[rows] + lc[cols]
        hi = np.full(m, -np.inf)
        lo = np.full(m, np.inf)
        np.maximum.at(hi, rows, v)
        np.minimum.at(lo, rows, v)
        ok = np.isfinite(hi)
        lr[ok] -= (hi[ok] + lo[ok]) / 2
        v = logs + lr[rows] + lc[cols]
        hi = np.full(n, -np.inf)
        lo = np.full(n, np.inf)
        np.maximum.at(hi, cols, v)
        np.minimum.at(lo, cols, v)
        ok = np.isfinite(hi)
        lc[ok] -= (hi[ok] + lo[ok]) / 2
    return np.exp2(np.round(lr)), np.exp2(np.round(lc))


def simplex(A: sp.spmatrix, b: np.ndarray, rel: np.ndarray, c: np.ndarray,
            lo: np.ndarray, hi: np.ndarray, tol: float = 1e-6,
            max_iter: int | None = None, scale: bool = True,
            refactor_every: int = REFACTOR_EVERY, pivot_tol: float = PIVOT_TOL,
            start: WarmStart | None = None) -> LPResult:
    """Minimise ``c @ x`` subject to row relations and ``lo <= x <= hi``.

    The problem is solved after power-of-two equilibration; the returned
    point is checked against the unscaled rows and bounds. ``start`` is the
    final basis of an earlier solve on the same matrix, e.g. a parent node.
    """
    A = sp.csr_matrix(A, dtype=float)
    m, n = A.shape
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    b = np.asarray(b, dtype=float)
    c = np.asarray(c, dtype=float)
    if np.any(lo > hi + tol):
        return LPResult(LPStatus.INFEASIBLE, np.zeros(n), math.inf, 0)
    if scale:
        R, S = equilibrate(A)
        res = simplex(sp.diags(R) @ A @ sp.diags(S), R * b, rel, S * c, lo / S, hi / S, tol,
                      max_iter, False, refactor_every, pivot_tol, start)
        x = res.x * S
        if res.status is LPStatus.OPTIMAL:
            x = np.minimum(np.maximum(x, lo), hi)
            act = A @ x
            err = np.where(rel == _LE, act - b, np.where(rel == _GE, b - act, np.abs(act - b)))
            if np.any(err > 10 * tol * (1.0 + np.abs(b))):
                return LPResult(LPStatus.NUMERICAL, x, math.nan, res.iterations)
            return LPResult(res.status, x, float(c @ x), res.iterations, basis=res.basis)
        return LPResult(res.status, x, res.objective, res.iterations, res.infeasible_rows)
    if max_iter is None:
        max_iter = 20 * (m + n) + 1000

    F = sp.hstack([A, sp.identity(m, format="csr")]).tocsc()
    Ft = F.T.tocsr()
    L = np.concatenate([lo, np.where(rel == _GE, -np.inf, 0.0)])
    U = np.concatenate([hi, np.where(rel == _LE, np.inf, 0.0)])
    N = n + m
    if start is None or len(start.basis) != m or len(start.state) != N:
        basis = np.arange(n, N)
        state = np.full(N, AT_LOWER, dtype=np.int8)
    else:
        basis = start.basis.copy()
        state = start.state.copy()
    # nonbasic columns sit on a finite bound (bounds may differ from the start)
    fin_lo, fin_hi = np.isfinite(L), np.isfinite(U)
    keep_upper = (state == AT_UPPER) & fin_hi
    state = np.where(keep_upper, AT_UPPER,
                     np.where(fin_lo, AT_LOWER, np.where(fin_hi, AT_UPPER, FREE))).astype(np.int8)
    x = np.where(state == AT_LOWER, L, np.where(state == AT_UPPER, U, 0.0))
    x[basis] = 0.0
    state[basis] = BASIC

    ctx = _Run(F, Ft, b, L, U, x, state, basis, tol, max_iter, refactor_every, pivot_tol)
    try:
        ctx.refactor()
    except RuntimeError:
        if start is None:
            return LPResult(LPStatus.NUMERICAL, x[:n].copy(), math.nan, 0)
        return simplex(A, b, rel, c, lo, hi, tol, max_iter, False, refactor_every, pivot_tol)

    cost = np.concatenate([c, np.zeros(m)])
    status = LPStatus.NUMERICAL
    for _ in range(3):
        status = ctx.optimise(cost, phase_one=True)
        if status is LPStatus.INFEASIBLE:
            y = ctx.basis_obj.btran(ctx.infeasibility_cost())
            rows = tuple(int(i) for i in np.flatnonzero(np.abs(y) > 1e-9))
            return LPResult(status, ctx.x[:n].copy(), math.inf, ctx.iterations, rows)
        if status is not LPStatus.OPTIMAL:
            break
        status = ctx.optimise(cost)
        if status is not LPStatus.OPTIMAL or ctx.primal_ok():
            break
        try:
            ctx.refactor()
        except RuntimeError:
            status = LPStatus.NUMERICAL
            break
    else:
        status = LPStatus.NUMERICAL
    xs = ctx.x[:n].copy()
    # snap values that drifted past a bound by roundoff
    xs = np.minimum(np.maximum(xs, lo), hi)
    obj = float(c @ xs) if status is LPStatus.OPTIMAL else math.nan
    if status is LPStatus.UNBOUNDED:
        obj = -math.inf
    warm = WarmStart(ctx.basis.copy(), ctx.state.copy()) if status is LPStatus.OPTIMAL else None
    return LPResult(status, xs, obj, ctx.iterations, basis=warm)


class _Run:
    def __init__(self, F, Ft, b, L, U, x, state, basis, tol, max_iter,
                 refactor_every=REFACTOR_EVERY, pivot_tol=PIVOT_TOL):
        self.refactor_every = refactor_every
        self.pivot_tol = pivot_tol
        self.F, self.Ft, self.b = F, Ft, b
        self.L, self.U, self.x, self.state, self.basis = L, U, x, state, basis
        self.m = F.shape[0]
        self.tol = tol
        self.max_iter = max_iter
        self.iterations = 0
        self.basis_obj: _Basis | None = None
        self.saved = None

    def refactor(self) -> None:
        self.basis_obj = _Basis(self.F, self.basis)
        xn = self.x.copy()
        xn[self.basis] = 0.0
        self.x[self.basis] = self.basis_obj.ftran(self.b - self.F @ xn)
        self.saved = (self.basis.copy(), self.state.copy(), self.x.copy())

    def rollback(self) -> bool:
        """Return to the last factorised basis and pivot more carefully."""
        if self.saved is None or self.refactor_every == 1:
            return False
        basis, state, x = self.saved
        self.basis[:] = basis
        self.state[:] = state
        self.x[:] = x
        self.refactor_every = 1
        self.pivot_tol = max(self.pivot_tol, 1e-5)
        try:
            self.refactor()
        except RuntimeError:
            return False
        return True

    def infeasibility_cost(self) -> np.ndarray:
        xb = self.x[self.basis]
        return np.where(xb < self.L[self.basis] - self.tol, -1.0,
                        np.where(xb > self.U[self.basis] + self.tol, 1.0, 0.0))

    def primal_ok(self) -> bool:
        x = self.x
        row_err = np.abs(self.F @ x - self.b)
        if np.any(row_err > self.tol * (1.0 + np.abs(self.b))):
            return False
        return not (np.any(self.L - x > self.tol) or np.any(x - self.U > self.tol))

    def optimise(self, cost: np.ndarray, phase_one: bool = False) -> LPStatus:
        """Primal simplex on ``cost``; with ``phase_one`` the cost is replaced
        by the sum of basic bound violations, recomputed every iteration."""
        F, L, U, x, state, basis = self.F, self.L, self.U, self.x, self.state, self.basis
        m = self.m
        bland = False
        degenerate = 0
        dual_tol = 1e-9
        while True:
            if self.iterations >= self.max_iter:
                return LPStatus.ITERATION_LIMIT
            xb = x[basis]
            lb, ub = L[basis], U[basis]
            if phase_one:
                cb = self.infeasibility_cost()
                if not cb.any():
                    return LPStatus.OPTIMAL
                # infeasible basics may travel to their violated bound, no further
                below, above = cb < 0, cb > 0
                lb = np.where(below, -np.inf, np.where(above, ub, lb))
                ub = np.where(below, L[basis], np.where(above, np.inf, ub))
                full = np.zeros_like(cost)
                full[basis] = cb
            else:
                full = cost
            try:
                y = self.basis_obj.btran(full[basis])
            except RuntimeError:
                return LPStatus.NUMERICAL
            d = full - self.Ft @ y
            movable = U > L
            up = ((state == AT_LOWER) | (state == FREE)) & (d < -dual_tol) & movable
            down = ((state == AT_UPPER) | (state == FREE)) & (d > dual_tol) & movable
            cand = np.flatnonzero(up | down)
            if cand.size == 0:
                return LPStatus.INFEASIBLE if phase_one else LPStatus.OPTIMAL
            if bland:
                q = int(cand[0])
            else:
                q = int(cand[np.argmax(np.abs(d[cand]))])
            direction = 1.0 if d[q] < 0 else -1.0
            alpha = self.basis_obj.ftran(_column(F, q, m))
            if not np.all(np.isfinite(alpha)):
                if self.rollback():
                    continue
                return LPStatus.NUMERICAL

            # basic i changes by -direction * alpha_i per unit step
            delta = -direction * alpha
            thr = self.pivot_tol * max(1.0, float(np.abs(alpha).max(initial=0.0)))
            dec = delta < -thr
            inc = delta > thr
            ratio = np.full(m, np.inf)
            with np.errstate(divide="ignore", invalid="ignore"):
                ratio[dec] = (xb[dec] - lb[dec]) / -delta[dec]
                ratio[inc] = (ub[inc] - xb[inc]) / delta[inc]
            ratio = np.maximum(ratio, 0.0)
            flip = U[q] - L[q]
            r = -1
            t = flip
            if bland:
                tmin = ratio.min() if m else np.inf
                if tmin < t:
                    ties = np.flatnonzero(ratio <= tmin + 1e-12)
                    r = int(ties[np.argmin(basis[ties])])
                    t = ratio[r]
            else:
                relaxed = np.full(m, np.inf)
                with np.errstate(divide="ignore", invalid="ignore"):
                    relaxed[dec] = (xb[dec] - lb[dec] + HARRIS_TOL) / -delta[dec]
                    relaxed[inc] = (ub[inc] - xb[inc] + HARRIS_TOL) / delta[inc]
                theta = max(relaxed.min(), 0.0) if m else np.inf
                if theta < t:
                    ok = np.flatnonzero(ratio <= theta)
                    r = int(ok[np.argmax(np.abs(delta[ok]))])
                    t = ratio[r]
            if math.isinf(t):
                return LPStatus.NUMERICAL if phase_one else LPStatus.UNBOUNDED

            self.iterations += 1
            if t > 0:
                x[basis] += t * delta
                x[q] += direction * t
            if t <= 1e-12:
                degenerate += 1
                if degenerate >= DEGENERATE_RUN:
                    bland = True
            else:
                degenerate = 0
                bland = False

            if r < 0:
                state[q] = AT_UPPER if direction > 0 else AT_LOWER
                x[q] = U[q] if direction > 0 else L[q]
                continue
            leave = basis[r]
            hit = lb[r] if delta[r] < 0 else ub[r]
            if not np.isfinite(hit):
                if self.rollback():
                    continue
                return LPStatus.NUMERICAL
            state[leave] = AT_LOWER if hit == L[leave] else AT_UPPER
            x[leave] = hit
            basis[r] = q
            state[q] = BASIC
            self.basis_obj.push(r, alpha)
            if len(self.basis_obj.etas) >= self.refactor_every:
                try:
                    self.refactor()
                except RuntimeError:
                    if not self.rollback():
                        return LPStatus.NUMERICAL


def solve_form(form: StandardForm, lo: np.ndarray | None = None, hi: np.ndarray | None = None,
               relax: bool = True, tol: float = 1e-6, start: WarmStart | None = None) -> LPResult:
    """LP relaxation of ``form`` under optional replacement bounds.

    Numerical trouble triggers one cold retry with frequent refactorisation
    and a stricter pivot threshold.
    """
    lo = form.lo if lo is None else lo
    hi = form.hi if hi is None else hi
    res = simplex(form.A, form.b, form.rel, form.c, lo, hi, tol=tol, start=start)
    if res.status in (LPStatus.NUMERICAL, LPStatus.ITERATION_LIMIT):
        retry = simplex(form.A, form.b, form.rel, form.c, lo, hi, tol=tol,
                        refactor_every=8, pivot_tol=1e-5)
        retry.iterations += res.iterations
        return retry
    return res


@dataclass
class LPSolution:
    status: LPStatus
    value: float
    point: dict[str, float]
    iterations: int
    infeasible_families: tuple[str, ...] = ()


def solve_lp(model: MipModel, tol: float = 1e-6) -> LPSolution:
    """Solve the LP relaxation of ``model`` (integrality dropped)."""
    if not model.variables:
        raise ValueError("model has no variables")
    form = StandardForm.from_model(model)
    if not (np.all(np.isfinite(form.A.data)) and np.all(np.isfinite(form.b)) and np.all(np.isfinite(form.c))):
        raise ValueError("model has non-finite coefficients")
    res = solve_form(form, tol=tol)
    fams = tuple(sorted({form.row_families[i] for i in res.infeasible_rows}))
    return LPSolution(res.status, res.objective, dict(zip(form.names, res.x.tolist())),
                      res.iterations, fams)
