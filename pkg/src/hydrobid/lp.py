"""Linear-program container, incremental builder, and plain-text dump.

Programs are stored in sparse triplet form with two-sided row bounds, so
equalities, inequalities and range rows share one representation:

    row i:   row_lower[i] <= sum_j A[i, j] x[j] <= row_upper[i]

Variables carry their own bounds.  The solver lives in `simplex`; this module
owns the data model and the conventions for duals and reduced costs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

INF = math.inf


class LpError(Exception):
    pass


class LpFormatError(LpError):
    """Malformed program data (duplicate triplets, crossed bounds, NaN)."""


class NumericalInstabilityError(LpError):
    """Pivot below the zero tolerance even after refactorization."""


class IterationLimitError(LpError):
    """Simplex iteration budget exhausted."""


@dataclass
class LinearProgram:
    sense: str                      # "min" or "max"
    obj: np.ndarray                 # (n,)
    a_rows: np.ndarray              # triplet row indices
    a_cols: np.ndarray              # triplet column indices
    a_vals: np.ndarray              # triplet coefficients
    row_lower: np.ndarray           # (m,), -inf allowed
    row_upper: np.ndarray           # (m,), +inf allowed
    var_lower: np.ndarray           # (n,)
    var_upper: np.ndarray           # (n,)
    var_names: list[str] = field(default_factory=list)
    row_names: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.obj = np.asarray(self.obj, dtype=float)
        self.a_rows = np.asarray(self.a_rows, dtype=np.int64)
        self.a_cols = np.asarray(self.a_cols, dtype=np.int64)
        self.a_vals = np.asarray(self.a_vals, dtype=float)
        self.row_lower = np.asarray(self.row_lower, dtype=float)
        self.row_upper = np.asarray(self.row_upper, dtype=float)
        self.var_lower = np.asarray(self.var_lower, dtype=float)
        self.var_upper = np.asarray(self.var_upper, dtype=float)
        if not self.var_names:
            self.var_names = [f"x{j}" for j in range(self.n_vars)]
        if not self.row_names:
            self.row_names = [f"r{i}" for i in range(self.n_rows)]
        self.validate()

    @property
    def n_vars(self) -> int:
        return self.obj.shape[0]

    @property
    def n_rows(self) -> int:
        return self.row_lower.shape[0]

    def validate(self) -> None:
        n, m = self.n_vars, self.n_rows
        if self.sense not in ("min", "max"):
            raise LpFormatError(f"sense must be 'min' or 'max', got {self.sense!r}")
        if not np.all(np.isfinite(self.obj)):
            raise LpFormatError("objective coefficients must be finite")
        if not (len(self.a_rows) == len(self.a_cols) == len(self.a_vals)):
            raise LpFormatError("triplet arrays must have equal length")
        if len(self.a_vals) and not np.all(np.isfinite(self.a_vals)):
            raise LpFormatError("constraint coefficients must be finite")
        if self.var_lower.shape[0] != n or self.var_upper.shape[0] != n:
            raise LpFormatError("variable bound arrays must match objective length")
        if self.row_upper.shape[0] != m:
            raise LpFormatError("row bound arrays must have equal length")
        if len(self.a_rows):
            if self.a_rows.min() < 0 or self.a_rows.max() >= m:
                raise LpFormatError("triplet row index out of range")
            if self.a_cols.min() < 0 or self.a_cols.max() >= n:
                raise LpFormatError("triplet column index out of range")
            # no duplicate (row, col) pairs
            keys = self.a_rows * max(n, 1) + self.a_cols
            if len(np.unique(keys)) != len(keys):
                raise LpFormatError("duplicate (row, col) triplet")
        if np.any(self.var_lower > self.var_upper):
            j = int(np.argmax(self.var_lower > self.var_upper))
            raise LpFormatError(f"variable {self.var_names[j]}: lower bound exceeds upper")
        if np.any(self.row_lower > self.row_upper):
            i = int(np.argmax(self.row_lower > self.row_upper))
            raise LpFormatError(f"row {self.row_names[i]}: lower bound exceeds upper")
        if np.any(np.isnan(self.var_lower)) or np.any(np.isnan(self.var_upper)):
            raise LpFormatError("variable bounds must not be NaN")
        if np.any(np.isnan(self.row_lower)) or np.any(np.isnan(self.row_upper)):
            raise LpFormatError("row bounds must not be NaN")


@dataclass
class LpSolution:
    """Solver output.

    `duals[i]` is the sensitivity of the optimal objective to shifting both
    bounds of row i, measured in the program's own sense.  In a maximization
    problem a binding "<=" row therefore has a nonnegative dual.  The same
    convention applies to `reduced_costs` with respect to variable bounds.
    """

    status: str                     # "optimal" | "infeasible" | "unbounded"
    primal: np.ndarray
    duals: np.ndarray
    reduced_costs: np.ndarray
    objective_value: float
    iterations: int = 0
    basis: np.ndarray | None = None  # variable-status vector, reusable as a warm start


def dual_solution(solution: LpSolution) -> tuple[np.ndarray, np.ndarray]:
    """Return (duals, reduced_costs) for an optimal solution.

    Signs follow the sensitivity convention documented on LpSolution.
    """
    if solution.status != "optimal":
        raise LpError(f"dual solution requires an optimal solve, got {solution.status}")
    return solution.duals, solution.reduced_costs


class LpBuilder:
    """Incremental assembly of a LinearProgram."""

    def __init__(self) -> None:
        self._obj: list[float] = []
        self._vlo: list[float] = []
        self._vhi: list[float] = []
        self._vnames: list[str] = []
        self._rlo: list[float] = []
        self._rhi: list[float] = []
        self._rnames: list[str] = []
        self._ar: list[int] = []
        self._ac: list[int] = []
        self._av: list[float] = []

    @property
    def n_vars(self) -> int:
        return len(self._obj)

    @property
    def n_rows(self) -> int:
        return len(self._rlo)

    def add_var(self, name: str | None = None, lb: float = 0.0, ub: float = INF,
                obj: float = 0.0) -> int:
        j = len(self._obj)
        self._obj.append(float(obj))
        self._vlo.append(float(lb))
        self._vhi.append(float(ub))
        self._vnames.append(name if name is not None else f"x{j}")
        return j

    def add_row(self, lb: float, ub: float, coeffs, name: str | None = None) -> int:
        i = len(self._rlo)
        self._rlo.append(float(lb))
        self._rhi.append(float(ub))
        self._rnames.append(name if name is not None else f"r{i}")
        for j, v in coeffs:
            if v != 0.0:
                self._ar.append(i)
                self._ac.append(int(j))
                self._av.append(float(v))
        return i

    def add_obj(self, j: int, delta: float) -> None:
        self._obj[j] += float(delta)

    def set_var_bounds(self, j: int, lb: float, ub: float) -> None:
        self._vlo[j] = float(lb)
        self._vhi[j] = float(ub)

    def build(self, sense: str) -> LinearProgram:
        return LinearProgram(
            sense=sense,
            obj=np.array(self._obj, dtype=float),
            a_rows=np.array(self._ar, dtype=np.int64),
            a_cols=np.array(self._ac, dtype=np.int64),
            a_vals=np.array(self._av, dtype=float),
            row_lower=np.array(self._rlo, dtype=float),
            row_upper=np.array(self._rhi, dtype=float),
            var_lower=np.array(self._vlo, dtype=float),
            var_upper=np.array(self._vhi, dtype=float),
            var_names=list(self._vnames),
            row_names=list(self._rnames),
        )


def _fmt(x: float) -> str:
    if x == INF:
        return "+inf"
    if x == -INF:
        return "-inf"
    return format(x, ".17g")


def dump_lp(lp: LinearProgram) -> str:
    """Fixed-layout text rendering, one line per variable and per row.

    Stable across runs, intended for diffing two implementations of the same
    model builder.
    """
    out = [f"lp sense={lp.sense} vars={lp.n_vars} rows={lp.n_rows}"]
    for j in range(lp.n_vars):
        out.append(
            f"var {j} name={lp.var_names[j]} lb={_fmt(lp.var_lower[j])} "
            f"ub={_fmt(lp.var_upper[j])} obj={_fmt(lp.obj[j])}"
        )
    by_row: dict[int, list[tuple[int, float]]] = {}
    for r, c, v in zip(lp.a_rows, lp.a_cols, lp.a_vals):
        by_row.setdefault(int(r), []).append((int(c), float(v)))
    for i in range(lp.n_rows):
        coeffs = sorted(by_row.get(i, []))
        body = " ".join(f"{c}={_fmt(v)}" for c, v in coeffs)
        out.append(
            f"row {i} name={lp.row_names[i]} lb={_fmt(lp.row_lower[i])} "
            f"ub={_fmt(lp.row_upper[i])} nz={len(coeffs)} : {body}"
        )
    return "\n".join(out) + "\n"


def solve_lp(lp: LinearProgram, options=None, warm_basis: np.ndarray | None = None) -> LpSolution:
    from .simplex import SolverOptions, simplex_solve

    return simplex_solve(lp, options or SolverOptions(), warm_basis)
