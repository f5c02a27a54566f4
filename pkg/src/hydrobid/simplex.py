"""Bounded-variable revised simplex with dense LU basis factorization.

Big-M free two-phase method: phase 1 drives the total bound violation of the
basic variables (a convex piecewise-linear function) to zero, phase 2 prices
the true costs.  Rows are handled through logical columns, so the working
system is W z = 0 with W = [A  -I] and the row bounds become bounds on the
logical variables.

The basis inverse is a dense LU factorization (scipy) plus product-form eta
updates, rebuilt every `refactor_interval` pivots.  Pricing is Dantzig's rule
with a fallback to Bland's rule after a run of degenerate pivots, which
guarantees termination.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .lp import (
    IterationLimitError,
    LinearProgram,
    LpSolution,
    NumericalInstabilityError,
)

BASIC, AT_LOWER, AT_UPPER, FREE = 0, 1, 2, 3

_RATIO_PART_TOL = 1e-9      # direction entries below this do not block
_DEGEN_STEP = 1e-11         # steps below this count as degenerate
_TIE_REL = 1e-10            # relative window for ratio-test ties


@dataclass
class SolverOptions:
    feas_tol: float = 1e-8
    opt_tol: float = 1e-9
    zero_pivot_tol: float = 1e-10
    refactor_interval: int = 50
    bland_threshold: int = 1000
    max_iterations: int = 200000


class _Engine:
    def __init__(self, lp: LinearProgram, opts: SolverOptions,
                 warm_basis: np.ndarray | None):
        self.lp = lp
        self.opts = opts
        n, m = lp.n_vars, lp.n_rows
        self.n, self.m = n, m
        self.ncol = n + m
        self.sign = 1.0 if lp.sense == "min" else -1.0
        c = np.zeros(self.ncol)
        c[:n] = self.sign * lp.obj
        self.c = c
        self.lb = np.concatenate([lp.var_lower, lp.row_lower])
        self.ub = np.concatenate([lp.var_upper, lp.row_upper])
        ar = np.concatenate([lp.a_rows, np.arange(m)])
        ac = np.concatenate([lp.a_cols, n + np.arange(m)])
        av = np.concatenate([lp.a_vals, -np.ones(m)])
        self.W = sp.csc_matrix((av, (ar, ac)), shape=(m, self.ncol))
        self.WT = self.W.T.tocsr()
        self.fixed = self.lb == self.ub

        self.x = np.zeros(self.ncol)
        self.vstat = np.empty(self.ncol, dtype=np.int8)
        self.basis = np.empty(m, dtype=np.int64)
        self.etas: list[tuple[int, np.ndarray]] = []
        self.since_refactor = 0
        self.iterations = 0
        self.bland = False
        self.degen_run = 0
        self._init_basis(warm_basis)

    # ---- basis and factorization -------------------------------------

    def _init_basis(self, warm: np.ndarray | None) -> None:
        if warm is not None and len(warm) == self.ncol:
            vstat = np.asarray(warm, dtype=np.int8).copy()
            if int(np.sum(vstat == BASIC)) == self.m:
                self.vstat = vstat
                self.basis = np.flatnonzero(vstat == BASIC).astype(np.int64)
                self._set_nonbasic_values()
                try:
                    self._refactor()
                    self._compute_basics()
                    return
                except NumericalInstabilityError:
                    pass  # singular warm basis: fall through to cold start
        self.vstat[:] = AT_LOWER
        free = np.isinf(self.lb) & np.isinf(self.ub)
        at_up = np.isinf(self.lb) & ~np.isinf(self.ub)
        self.vstat[at_up] = AT_UPPER
        self.vstat[free] = FREE
        self.vstat[self.n:] = BASIC
        self.basis = self.n + np.arange(self.m, dtype=np.int64)
        self._set_nonbasic_values()
        self._refactor()
        self._compute_basics()

    def _set_nonbasic_values(self) -> None:
        self.x[self.vstat == AT_LOWER] = self.lb[self.vstat == AT_LOWER]
        self.x[self.vstat == AT_UPPER] = self.ub[self.vstat == AT_UPPER]
        self.x[self.vstat == FREE] = 0.0

    def _refactor(self) -> None:
        bmat = self.W[:, self.basis].toarray()
        self.lu = sla.lu_factor(bmat, check_finite=False)
        udiag = np.abs(np.diag(self.lu[0]))
        if self.m and udiag.min() <= 1e-13 * max(1.0, udiag.max()):
            raise NumericalInstabilityError(
                "singular basis encountered during refactorization")
        self.etas = []
        self.since_refactor = 0

    def _compute_basics(self) -> None:
        xn = self.x.copy()
        xn[self.basis] = 0.0
        rhs = -(self.W @ xn)
        self.x[self.basis] = self._ftran(rhs)

    def _ftran(self, v: np.ndarray) -> np.ndarray:
        z = sla.lu_solve(self.lu, v, check_finite=False)
        for p, d in self.etas:
            t = z[p] / d[p]
            if t != 0.0:
                z = z - d * t
            z[p] = t
        return z

    def _btran(self, u: np.ndarray) -> np.ndarray:
        w = np.array(u, dtype=float)
        for p, d in reversed(self.etas):
            w[p] += (w[p] - d @ w) / d[p]
        return sla.lu_solve(self.lu, w, trans=1, check_finite=False)

    def _column(self, q: int) -> np.ndarray:
        a, b = self.W.indptr[q], self.W.indptr[q + 1]
        col = np.zeros(self.m)
        col[self.W.indices[a:b]] = self.W.data[a:b]
        return col

    # ---- pricing ------------------------------------------------------

    def _choose_entering(self, d: np.ndarray) -> int:
        tol = self.opts.opt_tol
        vs = self.vstat
        cand = (vs == AT_LOWER) & (d < -tol)
        cand |= (vs == AT_UPPER) & (d > tol)
        cand |= (vs == FREE) & (np.abs(d) > tol)
        cand &= ~self.fixed
        if not cand.any():
            return -1
        if self.bland:
            return int(np.flatnonzero(cand)[0])
        score = np.where(cand, np.abs(d), -1.0)
        return int(np.argmax(score))

    # ---- ratio test ----------------------------------------------------

    def _ratio(self, dcol: np.ndarray, sigma: float, phase1: bool):
        """Return (t, row_position, leave_status); row_position -1 means no
        basic blocks before t."""
        idx = np.flatnonzero(np.abs(dcol) > _RATIO_PART_TOL)
        if idx.size == 0:
            return np.inf, -1, 0
        ftol = self.opts.feas_tol
        bi = self.basis[idx]
        delta = -sigma * dcol[idx]
        xb = self.x[bi]
        lo = self.lb[bi]
        hi = self.ub[bi]
        t = np.full(idx.size, np.inf)
        to = np.zeros(idx.size, dtype=np.int8)
        up = delta > 0
        dn = ~up
        if phase1:
            below = xb < lo - ftol
            above = xb > hi + ftol
            sel = up & below
            t[sel] = (lo[sel] - xb[sel]) / delta[sel]
            to[sel] = AT_LOWER
            sel = up & ~below & ~above & np.isfinite(hi)
            t[sel] = (hi[sel] - xb[sel]) / delta[sel]
            to[sel] = AT_UPPER
            sel = dn & above
            t[sel] = (hi[sel] - xb[sel]) / delta[sel]
            to[sel] = AT_UPPER
            sel = dn & ~above & ~below & np.isfinite(lo)
            t[sel] = (lo[sel] - xb[sel]) / delta[sel]
            to[sel] = AT_LOWER
        else:
            sel = up & np.isfinite(hi)
            t[sel] = (hi[sel] - xb[sel]) / delta[sel]
            to[sel] = AT_UPPER
            sel = dn & np.isfinite(lo)
            t[sel] = (lo[sel] - xb[sel]) / delta[sel]
            to[sel] = AT_LOWER
        t = np.maximum(t, 0.0)
        tmin = float(t.min())
        if not np.isfinite(tmin):
            return np.inf, -1, 0
        ties = np.flatnonzero(t <= tmin + _TIE_REL * (1.0 + tmin))
        if self.bland:
            k = ties[np.argmin(self.basis[idx[ties]])]
        else:
            k = ties[np.argmax(np.abs(dcol[idx[ties]]))]
        return tmin, int(idx[k]), int(to[k])

    # ---- pivot application ----------------------------------------------

    def _apply(self, q: int, sigma: float, t: float, p: int, to: int,
               dcol: np.ndarray) -> None:
        if t != 0.0:
            self.x[self.basis] -= sigma * t * dcol
            self.x[q] += sigma * t
        if p < 0:
            # bound flip, no basis change
            self.vstat[q] = AT_UPPER if self.vstat[q] == AT_LOWER else AT_LOWER
            self.x[q] = self.ub[q] if self.vstat[q] == AT_UPPER else self.lb[q]
            return
        leave = self.basis[p]
        self.x[leave] = self.lb[leave] if to == AT_LOWER else self.ub[leave]
        self.vstat[leave] = to
        self.vstat[q] = BASIC
        self.basis[p] = q
        self.etas.append((p, dcol.copy()))
        self.since_refactor += 1
        if self.since_refactor >= self.opts.refactor_interval:
            self._refactor()
            self._compute_basics()

    def _count_step(self, t: float) -> None:
        self.iterations += 1
        if self.iterations > self.opts.max_iterations:
            raise IterationLimitError(
                f"simplex exceeded {self.opts.max_iterations} iterations")
        if t <= _DEGEN_STEP:
            self.degen_run += 1
            if self.degen_run >= self.opts.bland_threshold:
                self.bland = True
        else:
            self.degen_run = 0

    # ---- phases --------------------------------------------------------

    def _violations(self):
        xb = self.x[self.basis]
        viol_lo = self.lb[self.basis] - xb
        viol_hi = xb - self.ub[self.basis]
        return viol_lo, viol_hi

    def _phase1(self) -> bool:
        ftol = self.opts.feas_tol
        retried = False
        while True:
            viol_lo, viol_hi = self._violations()
            mask_lo = viol_lo > ftol
            mask_hi = viol_hi > ftol
            if not (mask_lo.any() or mask_hi.any()):
                return True
            g = mask_hi.astype(float) - mask_lo.astype(float)
            y = self._btran(g)
            d = -(self.WT @ y)
            q = self._choose_entering(d)
            if q < 0:
                if self.since_refactor > 0 and not retried:
                    self._refactor()
                    self._compute_basics()
                    retried = True
                    continue
                return False
            sigma = self._direction(q, d[q])
            dcol = self._ftran(self._column(q))
            t, p, to = self._ratio(dcol, sigma, phase1=True)
            tself = self._self_range(q)
            if tself <= t:
                t, p, to = tself, -1, 0
            if not np.isfinite(t):
                # a descent direction with no breakpoint cannot happen for the
                # bounded-below infeasibility sum: numerical trouble
                if self.since_refactor > 0 and not retried:
                    self._refactor()
                    self._compute_basics()
                    retried = True
                    continue
                raise NumericalInstabilityError(
                    "phase 1 lost its blocking pivot "
                    f"(best direction entry below {self.opts.zero_pivot_tol:g} "
                    "after refactorization retry)")
            retried = False
            self._count_step(t)
            self._apply(q, sigma, t, p, to, dcol)

    def _phase2(self) -> str:
        ftol = self.opts.feas_tol
        repriced = False
        while True:
            viol_lo, viol_hi = self._violations()
            if max(viol_lo.max(initial=0.0), viol_hi.max(initial=0.0)) > 10 * ftol:
                return "refeas"
            y = self._btran(self.c[self.basis])
            d = self.c - (self.WT @ y)
            q = self._choose_entering(d)
            if q < 0:
                if self.since_refactor > 0 and not repriced:
                    self._refactor()
                    self._compute_basics()
                    repriced = True
                    continue
                return "optimal"
            sigma = self._direction(q, d[q])
            dcol = self._ftran(self._column(q))
            t, p, to = self._ratio(dcol, sigma, phase1=False)
            tself = self._self_range(q)
            if tself <= t:
                t, p, to = tself, -1, 0
            if not np.isfinite(t):
                if self.since_refactor > 0 and not repriced:
                    self._refactor()
                    self._compute_basics()
                    repriced = True
                    continue
                return "unbounded"
            repriced = False
            self._count_step(t)
            self._apply(q, sigma, t, p, to, dcol)

    def _direction(self, q: int, dq: float) -> float:
        if self.vstat[q] == AT_LOWER:
            return 1.0
        if self.vstat[q] == AT_UPPER:
            return -1.0
        return 1.0 if dq < 0 else -1.0

    def _self_range(self, q: int) -> float:
        if self.vstat[q] == FREE:
            return np.inf
        r = self.ub[q] - self.lb[q]
        return r if np.isfinite(r) else np.inf

    # ---- driver ----------------------------------------------------------

    def solve(self) -> LpSolution:
        if self.m == 0:
            return self._solve_unconstrained()
        rounds = 0
        while True:
            if not self._phase1():
                return self._finish("infeasible")
            res = self._phase2()
            if res != "refeas":
                return self._finish(res)
            rounds += 1
            if rounds > 10:
                raise NumericalInstabilityError(
                    "alternating feasibility repair failed to converge")

    def _finish(self, status: str) -> LpSolution:
        n, m = self.n, self.m
        if status != "optimal":
            nanm = np.full(m, np.nan)
            nann = np.full(n, np.nan)
            return LpSolution(status=status, primal=self.x[:n].copy(),
                              duals=nanm, reduced_costs=nann,
                              objective_value=float("nan"),
                              iterations=self.iterations,
                              basis=self.vstat.copy())
        if self.since_refactor > 0:
            self._refactor()
            self._compute_basics()
        y = self._btran(self.c[self.basis])
        rc = self.c - (self.WT @ y)
        duals = self.sign * y
        reduced = self.sign * rc[:n]
        obj = float(np.dot(self.lp.obj, self.x[:n]))
        return LpSolution(status="optimal", primal=self.x[:n].copy(),
                          duals=duals, reduced_costs=reduced,
                          objective_value=obj, iterations=self.iterations,
                          basis=self.vstat.copy())

    def _solve_unconstrained(self) -> LpSolution:
        n = self.n
        x = np.zeros(n)
        for j in range(n):
            cj = self.c[j]
            if cj > 0:
                if not np.isfinite(self.lb[j]):
                    return LpSolution("unbounded", x, np.zeros(0),
                                      np.full(n, np.nan), float("nan"))
                x[j] = self.lb[j]
            elif cj < 0:
                if not np.isfinite(self.ub[j]):
                    return LpSolution("unbounded", x, np.zeros(0),
                                      np.full(n, np.nan), float("nan"))
                x[j] = self.ub[j]
            else:
                if np.isfinite(self.lb[j]):
                    x[j] = self.lb[j]
                elif np.isfinite(self.ub[j]):
                    x[j] = self.ub[j]
        obj = float(np.dot(self.lp.obj, x))
        return LpSolution("optimal", x, np.zeros(0), self.sign * self.c[:n],
                          obj, 0, None)


def simplex_solve(lp: LinearProgram, opts: SolverOptions,
                  warm_basis: np.ndarray | None = None) -> LpSolution:
    return _Engine(lp, opts, warm_basis).solve()
