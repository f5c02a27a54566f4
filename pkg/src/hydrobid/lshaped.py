"""Multi-cut L-shaped (Benders) solver for two-stage maximization programs.

A TwoStageProgram supplies a first-stage LP fragment and, per scenario, a
second-stage fragment whose rows may reference first-stage variables through
a linkage list.  The solver builds a master over the first-stage variables
plus one value variable per scenario partition and tightens it with
optimality cuts harvested from subproblem duals, optionally stabilized by an
infinity-norm trust region.  An extensive-form builder serves as oracle.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Callable, Sequence

import numpy as np

from .lp import (INF, LinearProgram, LpBuilder, LpSolution,
                 NumericalInstabilityError, solve_lp)
from .simplex import BASIC


class LshapedError(Exception):
    """Raised on structural or convergence failures of the L-shaped solver."""


class RecourseError(LshapedError):
    """A scenario subproblem was infeasible at a feasible first stage."""

    def __init__(self, scenario: int, message: str | None = None) -> None:
        self.scenario = scenario
        super().__init__(message or f"subproblem for scenario {scenario} is infeasible; "
                         "the program does not have relatively complete recourse")


@dataclass(frozen=True)
class SecondStage:
    """One scenario's recourse LP fragment.

    `builder` holds only second-stage variables and rows.  Each linkage
    triplet (row, first_var, coef) states that the full row also carries
    `coef` times the first-stage variable, so fixing the first stage shifts
    that row's bounds by the accumulated linkage value.
    """

    builder: LpBuilder
    linkage: tuple[tuple[int, int, float], ...]


@dataclass(frozen=True)
class TwoStageProgram:
    """Two-stage maximization program in builder form."""

    first_stage: Callable[[], LpBuilder]
    second_stage: Callable[[Any], SecondStage]
    scenarios: Sequence[Any]
    probabilities: np.ndarray

    def __post_init__(self) -> None:
        probs = np.asarray(self.probabilities, dtype=float)
        object.__setattr__(self, "probabilities", probs)
        if len(probs) != len(self.scenarios):
            raise LshapedError("one probability per scenario required")
        if len(probs) == 0:
            raise LshapedError("at least one scenario required")
        if np.any(probs <= 0.0) or np.any(probs > 1.0):
            raise LshapedError("probabilities must lie in (0, 1]")
        if abs(float(probs.sum()) - 1.0) > 1e-9:
            raise LshapedError("probabilities must sum to 1")

    @property
    def n_scenarios(self) -> int:
        return len(self.scenarios)


@dataclass(frozen=True)
class OptimalityCut:
    """Overestimator theta_partition <= coefs . x + rhs of a recourse value."""

    partition: int
    coefs: np.ndarray
    rhs: float
    iteration: int = 0

    def value_at(self, x: np.ndarray) -> float:
        return float(np.dot(self.coefs, x) + self.rhs)


@dataclass
class MasterState:
    """Mutable master bookkeeping for one solve."""

    builder: LpBuilder
    n_first: int
    theta_vars: list[int]
    base_lower: np.ndarray
    base_upper: np.ndarray
    incumbent: np.ndarray
    incumbent_value: float
    delta: float
    delta0: float
    iteration: int = 0
    pending_predicted: float = 0.0
    master_basis: np.ndarray | None = None


@dataclass(frozen=True)
class LshapedOptions:
    partitions: int | None = None       # default: ceil(sqrt(n_scenarios))
    trust_region: bool = False
    delta0: float | None = None
    gamma: float = 0.25                 # acceptance fraction of predicted gain
    expand_ratio: float = 0.75
    tol: float = 1e-6
    max_iter: int = 500
    theta_cap: float = 1e9
    threads: int = 1
    trace_path: str | None = None


@dataclass
class LshapedResult:
    x: np.ndarray
    objective: float
    cuts: list[OptimalityCut]
    iterations: int
    trace: list[tuple[int, float, float, float, int]]  # iter, master, incumbent, delta, cuts


# ---- extensive form ---------------------------------------------------------

@dataclass(frozen=True)
class ExtensiveForm:
    lp: LinearProgram
    n_first: int
    var_offsets: tuple[int, ...]   # start of each scenario's variable block
    row_offsets: tuple[int, ...]   # start of each scenario's row block


def build_extensive_form(program: TwoStageProgram, guard: int = 512) -> ExtensiveForm:
    """Merge all scenarios into one LP with shared first-stage variables.

    Second-stage objectives are weighted by scenario probability.  Guarded
    because the merged LP grows linearly in the scenario count.
    """
    n = program.n_scenarios
    if n > guard:
        raise LshapedError(f"extensive form over {n} scenarios exceeds guard {guard}")
    merged = program.first_stage()
    n_first = merged.n_vars
    var_offsets = []
    row_offsets = []
    for w, (scenario, prob) in enumerate(zip(program.scenarios, program.probabilities)):
        stage = program.second_stage(scenario)
        sub = stage.builder.build("max")
        var_offsets.append(merged.n_vars)
        row_offsets.append(merged.n_rows)
        for j in range(sub.n_vars):
            merged.add_var(f"s{w}_{sub.var_names[j]}", sub.var_lower[j],
                           sub.var_upper[j], obj=prob * sub.obj[j])
        link_by_row: dict[int, list[tuple[int, float]]] = {}
        for row, xj, coef in stage.linkage:
            link_by_row.setdefault(row, []).append((xj, coef))
        cols: dict[int, list[tuple[int, float]]] = {i: [] for i in range(sub.n_rows)}
        for r, c, v in zip(sub.a_rows, sub.a_cols, sub.a_vals):
            cols[int(r)].append((var_offsets[w] + int(c), float(v)))
        for i in range(sub.n_rows):
            coeffs = cols[i] + link_by_row.get(i, [])
            merged.add_row(sub.row_lower[i], sub.row_upper[i], coeffs,
                           name=f"s{w}_{sub.row_names[i]}")
    return ExtensiveForm(merged.build("max"), n_first,
                         tuple(var_offsets), tuple(row_offsets))


# ---- subproblem machinery ---------------------------------------------------

class _Subproblem:
    """A scenario LP reused across iterations; only row bounds change."""

    def __init__(self, stage: SecondStage, n_first: int) -> None:
        self.lp = stage.builder.build("max")
        m = self.lp.n_rows
        triples = np.array([(r, j, c) for r, j, c in stage.linkage], dtype=float)
        if len(triples):
            self.rows = triples[:, 0].astype(np.int64)
            self.cols = triples[:, 1].astype(np.int64)
            self.vals = triples[:, 2]
            if self.rows.max() >= m:
                raise LshapedError("linkage row index out of range")
            if self.cols.max() >= n_first:
                raise LshapedError("linkage references an unknown first-stage variable")
        else:
            self.rows = np.zeros(0, dtype=np.int64)
            self.cols = np.zeros(0, dtype=np.int64)
            self.vals = np.zeros(0)
        self.base_lower = self.lp.row_lower.copy()
        self.base_upper = self.lp.row_upper.copy()
        self.n_first = n_first
        self.basis: np.ndarray | None = None

    def solve_at(self, x: np.ndarray) -> LpSolution:
        shift = np.zeros(self.lp.n_rows)
        np.add.at(shift, self.rows, self.vals * x[self.cols])
        self.lp.row_lower = self.base_lower - shift
        self.lp.row_upper = self.base_upper - shift
        sol = solve_lp(self.lp, warm_basis=self.basis)
        if sol.status == "optimal":
            self.basis = sol.basis
        return sol

    def cut_at(self, x: np.ndarray, sol: LpSolution,
               partition: int = 0, iteration: int = 0) -> OptimalityCut:
        # d(obj)/dx_j = -sum_r dual_r * T_rj since x shifts row bounds by -Tx
        coefs = np.zeros(self.n_first)
        np.add.at(coefs, self.cols, -sol.duals[self.rows] * self.vals)
        rhs = sol.objective_value - float(np.dot(coefs, x))
        return OptimalityCut(partition, coefs, rhs, iteration)


def solve_second_stage(stage: SecondStage, x: np.ndarray, n_first: int | None = None) -> LpSolution:
    """Solve one scenario fragment with the first stage fixed at x."""
    n1 = len(x) if n_first is None else n_first
    return _Subproblem(stage, n1).solve_at(np.asarray(x, dtype=float))


def subproblem_cut(stage: SecondStage, x: np.ndarray,
                   partition: int = 0, iteration: int = 0) -> OptimalityCut:
    """Solve a scenario at fixed x and return the optimality cut tight there."""
    x = np.asarray(x, dtype=float)
    sub = _Subproblem(stage, len(x))
    sol = sub.solve_at(x)
    if sol.status != "optimal":
        raise RecourseError(-1, f"subproblem not optimal at cut point: {sol.status}")
    return sub.cut_at(x, sol, partition, iteration)


def aggregate_cuts(cuts: Sequence[OptimalityCut], partition_map: Sequence[int],
                   weights: Sequence[float] | None = None) -> list[OptimalityCut]:
    """Combine same-iteration cuts into one weighted cut per partition.

    Weights default to 1, so singleton partitions reproduce their input cut.
    """
    if weights is None:
        weights = np.ones(len(cuts))
    weights = np.asarray(weights, dtype=float)
    if len(weights) != len(cuts) or len(partition_map) != len(cuts):
        raise LshapedError("cuts, partition_map, and weights must align")
    grouped: dict[int, list[int]] = {}
    for k, part in enumerate(partition_map):
        grouped.setdefault(int(part), []).append(k)
    out = []
    for part in sorted(grouped):
        members = grouped[part]
        coefs = np.zeros_like(cuts[members[0]].coefs)
        rhs = 0.0
        for k in members:
            coefs = coefs + weights[k] * cuts[k].coefs
            rhs += weights[k] * cuts[k].rhs
        out.append(OptimalityCut(part, coefs, rhs, cuts[members[0]].iteration))
    return out


def partition_of(n_scenarios: int, n_partitions: int) -> np.ndarray:
    """Contiguous near-equal partition assignment for scenarios 0..n-1."""
    if not 1 <= n_partitions <= n_scenarios:
        raise LshapedError("partition count must lie in 1..n_scenarios")
    assignment = np.zeros(n_scenarios, dtype=np.int64)
    for part, idx in enumerate(np.array_split(np.arange(n_scenarios), n_partitions)):
        assignment[idx] = part
    return assignment


# ---- master loop ------------------------------------------------------------

def _add_cut_row(state: MasterState, cut: OptimalityCut) -> None:
    # theta_p - coefs . x <= rhs
    coeffs = [(state.theta_vars[cut.partition], 1.0)]
    coeffs += [(int(j), -float(c)) for j, c in enumerate(cut.coefs) if c != 0.0]
    state.builder.add_row(-INF, cut.rhs, coeffs,
                          name=f"cut{state.iteration}_{cut.partition}")
    if state.master_basis is not None:
        # keep the warm basis aligned: the new row's slack enters basic
        state.master_basis = np.append(state.master_basis, np.int8(BASIC))


def _solve_master(state: MasterState) -> LpSolution:
    """Re-solve the master, warm-starting from the previous basis."""
    lp = state.builder.build("max")
    if state.master_basis is not None:
        try:
            sol = solve_lp(lp, warm_basis=state.master_basis)
        except NumericalInstabilityError:
            sol = solve_lp(lp)
    else:
        sol = solve_lp(lp)
    state.master_basis = sol.basis if sol.status == "optimal" else None
    return sol


def _apply_box(state: MasterState, on: bool) -> None:
    for j in range(state.n_first):
        if on:
            lo = max(state.base_lower[j], state.incumbent[j] - state.delta)
            hi = min(state.base_upper[j], state.incumbent[j] + state.delta)
        else:
            lo, hi = state.base_lower[j], state.base_upper[j]
        state.builder.set_var_bounds(j, lo, hi)


def trust_region_step(state: MasterState, candidate: np.ndarray,
                      candidate_value: float, gamma: float = 0.25,
                      expand_ratio: float = 0.75) -> bool:
    """Accept or reject a candidate against the incumbent; adjust the radius.

    Returns True when the candidate becomes the new incumbent.  Acceptance
    requires the actual gain to reach `gamma` times the predicted gain; a
    ratio of at least `expand_ratio` doubles the radius (capped), rejection
    halves it.
    """
    predicted = state.pending_predicted
    if predicted <= 0.0:
        return False
    actual = candidate_value - state.incumbent_value
    ratio = actual / predicted
    if ratio >= gamma:
        state.incumbent = np.array(candidate, dtype=float)
        state.incumbent_value = candidate_value
        if ratio >= expand_ratio:
            state.delta = min(state.delta * 2.0, state.delta0 * 2.0 ** 20)
        return True
    state.delta = state.delta * 0.5
    return False


def solve_lshaped(program: TwoStageProgram,
                  options: LshapedOptions | None = None) -> LshapedResult:
    """Solve a two-stage maximization program by the L-shaped method.

    Each iteration solves the cut master, evaluates every scenario at the
    candidate, and adds one probability-weighted cut per partition.  With the
    trust region off the loop stops when master and evaluation agree to
    `tol` relative; with it on, when the predicted improvement over the
    incumbent vanishes.
    """
    opts = options or LshapedOptions()
    n = program.n_scenarios
    n_parts = opts.partitions if opts.partitions is not None else math.isqrt(n - 1) + 1
    part_of = partition_of(n, n_parts)
    probs = program.probabilities

    first = program.first_stage()
    n_first = first.n_vars
    subproblems = [_Subproblem(program.second_stage(s), n_first)
                   for s in program.scenarios]

    builder = first
    theta_vars = [builder.add_var(f"theta{i}", -INF, opts.theta_cap, obj=1.0)
                  for i in range(n_parts)]
    base_lp = builder.build("max")
    state = MasterState(
        builder=builder, n_first=n_first, theta_vars=theta_vars,
        base_lower=base_lp.var_lower[:n_first].copy(),
        base_upper=base_lp.var_upper[:n_first].copy(),
        incumbent=np.zeros(n_first), incumbent_value=-INF,
        delta=0.0, delta0=0.0,
    )

    def evaluate(x: np.ndarray, iteration: int) -> tuple[float, list[OptimalityCut]]:
        def one(w: int) -> tuple[LpSolution, OptimalityCut]:
            sol = subproblems[w].solve_at(x)
            if sol.status != "optimal":
                raise RecourseError(w, None if sol.status == "infeasible" else
                                    f"subproblem for scenario {w} is {sol.status}")
            return sol, subproblems[w].cut_at(x, sol, int(part_of[w]), iteration)
        if opts.threads > 1:
            with ThreadPoolExecutor(max_workers=opts.threads) as pool:
                results = list(pool.map(one, range(n)))
        else:
            results = [one(w) for w in range(n)]
        recourse = float(np.dot(probs, [sol.objective_value for sol, _ in results]))
        cuts = aggregate_cuts([cut for _, cut in results], part_of, probs)
        first_part = float(np.dot(base_lp.obj[:n_first], x))
        return first_part + recourse, cuts

    # initial incumbent: the cut-free master picks a vertex of the first stage
    sol = _solve_master(state)
    if sol.status != "optimal":
        raise LshapedError(f"initial master is {sol.status}; "
                           "first-stage fragment must be bounded and feasible")
    x0 = sol.primal[:n_first]
    value0, cuts0 = evaluate(x0, 0)
    state.incumbent = x0
    state.incumbent_value = value0
    all_cuts: list[OptimalityCut] = []
    for cut in cuts0:
        _add_cut_row(state, cut)
        all_cuts.append(cut)
    state.delta0 = max(1.0, float(np.max(np.abs(x0))))
    if opts.delta0 is not None:
        state.delta0 = float(opts.delta0)
    state.delta = state.delta0

    trace: list[tuple[int, float, float, float, int]] = []
    trace.append((0, sol.objective_value, value0, state.delta, len(cuts0)))

    final_x, final_value = state.incumbent, state.incumbent_value
    converged = False
    for iteration in range(1, opts.max_iter + 1):
        state.iteration = iteration
        _apply_box(state, opts.trust_region)
        sol = _solve_master(state)
        if sol.status != "optimal":
            raise LshapedError(f"master is {sol.status} at iteration {iteration}")
        candidate = sol.primal[:n_first]
        master_value = sol.objective_value

        if opts.trust_region:
            state.pending_predicted = master_value - state.incumbent_value
            if state.pending_predicted <= opts.tol * max(1.0, abs(state.incumbent_value)):
                final_x, final_value = state.incumbent, state.incumbent_value
                trace.append((iteration, master_value, state.incumbent_value,
                              state.delta, 0))
                converged = True
                break
            candidate_value, cuts = evaluate(candidate, iteration)
            trust_region_step(state, candidate, candidate_value,
                              opts.gamma, opts.expand_ratio)
        else:
            candidate_value, cuts = evaluate(candidate, iteration)
            state.incumbent = candidate
            state.incumbent_value = candidate_value
            if abs(master_value - candidate_value) <= opts.tol * max(1.0, abs(candidate_value)):
                final_x, final_value = candidate, candidate_value
                trace.append((iteration, master_value, candidate_value,
                              state.delta, 0))
                converged = True
                break
        for cut in cuts:
            _add_cut_row(state, cut)
            all_cuts.append(cut)
        trace.append((iteration, master_value, state.incumbent_value,
                      state.delta, len(cuts)))
    if not converged:
        raise LshapedError(f"no convergence within {opts.max_iter} iterations")

    if opts.trace_path is not None:
        with open(opts.trace_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "master_value", "incumbent_value",
                             "delta", "cuts_added"])
            writer.writerows(trace)
    return LshapedResult(np.array(final_x), float(final_value), all_cuts,
                         len(trace) - 1, trace)
