"""Sequential sampled-average-approximation driver.

Computes statistical lower and upper bounds with t-based confidence
intervals on a doubling sample schedule, then the EEV and VSS analysis.

Orientation: the underlying two-stage programs maximize profit, while the
classical SAA bound formulas are stated for minimization.  Every bound in
this module is therefore computed on the negated objective, so "lower
bound" and "upper bound" carry their textbook meaning; only the confidence
intervals assembled into SaaResult are negated back to profit orientation.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Callable, Sequence

import numpy as np

from . import seeds
from .hydro import expected_scenario
from .lshaped import (LshapedError, LshapedOptions, TwoStageProgram,
                      solve_lshaped, solve_second_stage)


class SaaError(Exception):
    """Raised on invalid configuration or a failed batch solve."""


ProgramFamily = Callable[[Sequence[Any]], TwoStageProgram]
Sampler = Callable[[np.random.Generator], Any]


# ---- quantiles ----------------------------------------------------------------

def _beta_cf(a: float, b: float, x: float) -> float:
    # Lentz's continued fraction for the incomplete beta integral
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 300):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 3e-16:
            break
    return h


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """I_x(a, b), continued-fraction evaluation."""
    if not (a > 0 and b > 0):
        raise SaaError("beta parameters must be positive")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    front = math.exp(math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                     + a * math.log(x) + b * math.log1p(-x))
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_cf(a, b, x) / a
    return 1.0 - front * _beta_cf(b, a, 1.0 - x) / b


def t_quantile(q: float, df: int) -> float:
    """Student-t quantile at probability q, by incomplete-beta inversion."""
    if not 0.0 < q < 1.0:
        raise SaaError(f"quantile probability must lie in (0, 1), got {q}")
    if df < 1:
        raise SaaError(f"degrees of freedom must be >= 1, got {df}")
    if q == 0.5:
        return 0.0
    if q < 0.5:
        return -t_quantile(1.0 - q, df)
    # two-tail mass alpha solves I_x(df/2, 1/2) = alpha at x = df/(df + t^2)
    alpha = 2.0 * (1.0 - q)
    a, b = df / 2.0, 0.5
    lo, hi = 0.0, 1.0
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if regularized_incomplete_beta(a, b, mid) < alpha:
            lo = mid
        else:
            hi = mid
    x = 0.5 * (lo + hi)
    return math.sqrt(df * (1.0 - x) / max(x, 1e-300))


def normal_quantile(q: float) -> float:
    """Standard normal quantile: rational approximation plus one Halley step."""
    if not 0.0 < q < 1.0:
        raise SaaError(f"quantile probability must lie in (0, 1), got {q}")
    a = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
         1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
    b = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
         6.680131188771972e+01, -1.328068155288572e+01)
    c = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
         -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
    d = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
         3.754408661907416e+00)
    if q < 0.02425:
        r = math.sqrt(-2.0 * math.log(q))
        x = ((((((c[0] * r + c[1]) * r + c[2]) * r + c[3]) * r + c[4]) * r + c[5])
             / ((((d[0] * r + d[1]) * r + d[2]) * r + d[3]) * r + 1.0))
    elif q <= 1.0 - 0.02425:
        r = q - 0.5
        s = r * r
        x = ((((((a[0] * s + a[1]) * s + a[2]) * s + a[3]) * s + a[4]) * s + a[5]) * r
             / (((((b[0] * s + b[1]) * s + b[2]) * s + b[3]) * s + b[4]) * s + 1.0))
    else:
        r = math.sqrt(-2.0 * math.log(1.0 - q))
        x = -((((((c[0] * r + c[1]) * r + c[2]) * r + c[3]) * r + c[4]) * r + c[5])
              / ((((d[0] * r + d[1]) * r + d[2]) * r + d[3]) * r + 1.0))
    err = 0.5 * math.erfc(-x / math.sqrt(2.0)) - q
    u = err * math.sqrt(2.0 * math.pi) * math.exp(0.5 * x * x)
    return x - u / (1.0 + 0.5 * x * u)


# ---- intervals and estimates ---------------------------------------------------

@dataclass(frozen=True)
class ConfidenceInterval:
    lo: float
    hi: float
    level: float

    def __post_init__(self) -> None:
        if not self.lo <= self.hi:
            raise SaaError(f"interval bounds out of order: [{self.lo}, {self.hi}]")
        if not 0.0 < self.level < 1.0:
            raise SaaError(f"confidence level must lie in (0, 1), got {self.level}")

    @property
    def width(self) -> float:
        return self.hi - self.lo


def negate_interval(ci: ConfidenceInterval) -> ConfidenceInterval:
    """The interval covering -v for every v the input covers."""
    return ConfidenceInterval(-ci.hi, -ci.lo, ci.level)


@dataclass(frozen=True)
class BoundEstimate:
    """A batch-mean estimate with its confidence interval (minimization
    orientation) and the per-batch values behind it."""

    value: float
    ci: ConfidenceInterval
    batch_values: tuple[float, ...]
    candidate: np.ndarray | None = None

    @property
    def halfwidth(self) -> float:
        return self.ci.hi - self.value


def t_interval(values: Sequence[float], alpha: float = 0.05) -> BoundEstimate:
    """Mean of the values with a t-based (1 - alpha) confidence interval."""
    vals = [float(v) for v in values]
    if len(vals) < 2:
        raise SaaError("a t interval needs at least two values")
    if not 0.0 < alpha < 1.0:
        raise SaaError(f"alpha must lie in (0, 1), got {alpha}")
    mean = float(np.mean(vals))
    sd = float(np.std(vals, ddof=1))
    hw = t_quantile(1.0 - alpha / 2.0, len(vals) - 1) * sd / math.sqrt(len(vals))
    return BoundEstimate(mean, ConfidenceInterval(mean - hw, mean + hw, 1.0 - alpha),
                         tuple(vals))


def z_interval(values: Sequence[float], alpha: float = 0.05) -> BoundEstimate:
    """Mean with a normal-approximation (1 - alpha) confidence interval."""
    vals = [float(v) for v in values]
    if len(vals) < 2:
        raise SaaError("a z interval needs at least two values")
    if not 0.0 < alpha < 1.0:
        raise SaaError(f"alpha must lie in (0, 1), got {alpha}")
    mean = float(np.mean(vals))
    sd = float(np.std(vals, ddof=1))
    hw = normal_quantile(1.0 - alpha / 2.0) * sd / math.sqrt(len(vals))
    return BoundEstimate(mean, ConfidenceInterval(mean - hw, mean + hw, 1.0 - alpha),
                         tuple(vals))


# ---- configuration -------------------------------------------------------------

@dataclass(frozen=True)
class SaaConfig:
    n0: int = 16                  # initial SAA sample size, doubled each round
    growth: int = 2
    m_batches: int = 10           # lower-bound batches (M)
    t_batches: int = 10           # upper-bound batches (T)
    n_eval: int = 1000            # evaluations per upper batch (N)
    n_eev: int = 5000             # EEV evaluations
    alpha: float = 0.05
    tolerance: float = 1e-4       # relative gap target
    n_cap: int = 2 ** 16
    threads: int = 1
    lshaped: LshapedOptions | None = None

    def __post_init__(self) -> None:
        if self.n0 < 2:
            raise SaaError("initial sample size must be at least 2")
        if self.growth < 2:
            raise SaaError("growth factor must be at least 2")
        if self.m_batches < 2 or self.t_batches < 2:
            raise SaaError("bound estimation needs at least 2 batches")
        if self.n_eval < 1 or self.n_eev < 2:
            raise SaaError("evaluation sample sizes too small")
        if not 0.0 < self.alpha < 1.0:
            raise SaaError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not self.tolerance > 0.0:
            raise SaaError("tolerance must be positive")
        if self.n_cap < self.n0:
            raise SaaError("sample cap below the initial sample size")
        if self.threads < 1:
            raise SaaError("threads must be at least 1")


@dataclass(frozen=True)
class SaaIteration:
    """One row of the sequential-SAA trace (minimization orientation)."""

    iteration: int
    n: int
    lower: float
    upper: float
    halfwidth_lower: float
    halfwidth_upper: float
    rel_gap: float


@dataclass(frozen=True)
class SaaResult:
    """Profit-orientation confidence intervals and the solutions behind them.

    vss_ci is present exactly when the VRP and EEV intervals are disjoint;
    `converged` is False when the sample cap stopped the doubling early.
    """

    vrp_ci: ConfidenceInterval
    eev_ci: ConfidenceInterval
    vss_ci: ConfidenceInterval | None
    significant: bool
    n_final: int
    candidate: np.ndarray
    expected_solution: np.ndarray
    trace: tuple[SaaIteration, ...]
    converged: bool


# ---- bound estimators ----------------------------------------------------------

def _split_rngs(rng: np.random.Generator, k: int) -> list[np.random.Generator]:
    """Derive k independent child generators deterministically."""
    children = rng.integers(0, 2 ** 63 - 1, size=k)
    return [np.random.default_rng(int(s)) for s in children]


def _map_batches(work: Callable[[int], Any], k: int, threads: int) -> list:
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(work, range(k)))
    return [work(i) for i in range(k)]


def _first_stage_cost(program: TwoStageProgram) -> np.ndarray:
    return program.first_stage().build("max").obj


def evaluate_candidate(program: TwoStageProgram, x: np.ndarray,
                       scenario: Any) -> float:
    """F(x, xi) in minimization orientation: negated profit of the fixed-x
    second stage plus the first-stage objective."""
    x = np.asarray(x, dtype=float)
    sol = solve_second_stage(program.second_stage(scenario), x)
    if sol.status != "optimal":
        raise SaaError(f"candidate evaluation is {sol.status}")
    base = float(np.dot(_first_stage_cost(program), x))
    return -(base + sol.objective_value)


def lower_bound(family: ProgramFamily, sampler: Sampler, n: int,
                m_batches: int = 10, alpha: float = 0.05,
                rng: np.random.Generator | None = None, threads: int = 1,
                options: LshapedOptions | None = None) -> BoundEstimate:
    """Solve M independent n-scenario SAA instances; batch mean and t CI.

    The returned candidate is the optimizer of the first batch.
    """
    if m_batches < 2:
        raise SaaError("lower bound needs at least 2 batches")
    if rng is None:
        rng = seeds.stream(0, seeds.SAA_LOWER)
    batch_rngs = _split_rngs(rng, m_batches)

    def one(i: int) -> tuple[float, np.ndarray]:
        scenarios = [sampler(batch_rngs[i]) for _ in range(n)]
        try:
            result = solve_lshaped(family(scenarios),
                                   options if options is not None else LshapedOptions())
        except LshapedError as exc:
            raise SaaError(f"lower-bound batch {i} failed: {exc}") from exc
        return -result.objective, result.x

    results = _map_batches(one, m_batches, threads)
    estimate = t_interval([v for v, _ in results], alpha)
    return BoundEstimate(estimate.value, estimate.ci, estimate.batch_values,
                         candidate=results[0][1])


def upper_bound(family: ProgramFamily, candidate: np.ndarray, sampler: Sampler,
                t_batches: int = 10, n_eval: int = 1000, alpha: float = 0.05,
                rng: np.random.Generator | None = None,
                threads: int = 1) -> BoundEstimate:
    """Evaluate the candidate on T batches of N fresh scenarios each."""
    if t_batches < 2:
        raise SaaError("upper bound needs at least 2 batches")
    if rng is None:
        rng = seeds.stream(0, seeds.SAA_UPPER)
    candidate = np.asarray(candidate, dtype=float)
    batch_rngs = _split_rngs(rng, t_batches)

    def one(i: int) -> float:
        scenarios = [sampler(batch_rngs[i]) for _ in range(n_eval)]
        program = family(scenarios)
        base = float(np.dot(_first_stage_cost(program), candidate))
        values = []
        for w, sc in enumerate(scenarios):
            sol = solve_second_stage(program.second_stage(sc), candidate)
            if sol.status != "optimal":
                raise SaaError(f"upper-bound batch {i}, scenario {w}: {sol.status}")
            values.append(sol.objective_value)
        return -(base + float(np.mean(values)))

    return t_interval(_map_batches(one, t_batches, threads), alpha)


def eev(family: ProgramFamily, x_bar: np.ndarray, sampler: Sampler,
        n_eev: int = 5000, alpha: float = 0.05,
        rng: np.random.Generator | None = None, threads: int = 1) -> BoundEstimate:
    """Expected result of the expected-value solution, normal-quantile CI."""
    if n_eev < 2:
        raise SaaError("EEV needs at least 2 evaluations")
    if rng is None:
        rng = seeds.stream(0, seeds.SAA_EEV)
    x_bar = np.asarray(x_bar, dtype=float)
    scenarios = [sampler(rng) for _ in range(n_eev)]
    program = family(scenarios)
    base = float(np.dot(_first_stage_cost(program), x_bar))

    def one(i: int) -> float:
        sol = solve_second_stage(program.second_stage(scenarios[i]), x_bar)
        if sol.status != "optimal":
            raise SaaError(f"EEV evaluation {i}: {sol.status}")
        return -(base + sol.objective_value)

    return z_interval(_map_batches(one, n_eev, threads), alpha)


def expected_value_solution(family: ProgramFamily, sampler: Sampler,
                            n_mean_samples: int = 5000,
                            rng: np.random.Generator | None = None,
                            mean: Callable[[list], Any] = expected_scenario,
                            options: LshapedOptions | None = None) -> np.ndarray:
    """Optimizer of the one-scenario program at the sampled mean scenario."""
    if n_mean_samples < 1:
        raise SaaError("mean scenario needs at least one sample")
    if rng is None:
        rng = seeds.stream(0, seeds.SAA_EEV, 1)
    drawn = [sampler(rng) for _ in range(n_mean_samples)]
    xi_bar = mean(drawn)
    try:
        result = solve_lshaped(family([xi_bar]),
                               options if options is not None else LshapedOptions())
    except LshapedError as exc:
        raise SaaError(f"expected-value problem failed: {exc}") from exc
    return result.x


def vss(vrp_ci: ConfidenceInterval,
        eev_ci: ConfidenceInterval) -> ConfidenceInterval | None:
    """Difference interval when the profit-orientation CIs are disjoint
    (VRP above EEV); None when they overlap."""
    if vrp_ci.lo <= eev_ci.hi:
        return None
    level = vrp_ci.level + eev_ci.level - 1.0
    return ConfidenceInterval(vrp_ci.lo - eev_ci.hi, vrp_ci.hi - eev_ci.lo, level)


# ---- sequential driver ---------------------------------------------------------

def run_saa(family: ProgramFamily, sampler: Sampler, cfg: SaaConfig,
            seed: int = 0, mean: Callable[[list], Any] = expected_scenario,
            trace_path: str | None = None) -> SaaResult:
    """Double n until the (1 - 2 alpha) gap interval is relatively tight,
    then evaluate the expected-value solution for the EEV and VSS."""
    trace: list[SaaIteration] = []
    n = cfg.n0
    iteration = 0
    converged = False
    while True:
        lb = lower_bound(family, sampler, n, cfg.m_batches, cfg.alpha,
                         rng=seeds.stream(seed, seeds.SAA_LOWER, iteration),
                         threads=cfg.threads, options=cfg.lshaped)
        ub = upper_bound(family, lb.candidate, sampler, cfg.t_batches,
                         cfg.n_eval, cfg.alpha,
                         rng=seeds.stream(seed, seeds.SAA_UPPER, iteration),
                         threads=cfg.threads)
        gap = ub.value - lb.value
        gap_hi = gap + lb.halfwidth + ub.halfwidth
        rel_gap = max(gap_hi, 0.0) / max(1.0, abs(ub.value))
        trace.append(SaaIteration(iteration, n, lb.value, ub.value,
                                  lb.halfwidth, ub.halfwidth, rel_gap))
        if gap >= 0.0 and rel_gap <= cfg.tolerance:
            converged = True
            break
        if n * cfg.growth > cfg.n_cap:
            break
        n *= cfg.growth
        iteration += 1

    x_bar = expected_value_solution(family, sampler, cfg.n_eev,
                                    rng=seeds.stream(seed, seeds.SAA_EEV, 1),
                                    mean=mean, options=cfg.lshaped)
    eev_est = eev(family, x_bar, sampler, cfg.n_eev, cfg.alpha,
                  rng=seeds.stream(seed, seeds.SAA_EEV), threads=cfg.threads)

    # outer envelope [L - hw, U + hw] covers the optimum; negate to profit
    vrp_min = ConfidenceInterval(lb.ci.lo, ub.ci.hi, 1.0 - cfg.alpha)
    vrp_ci = negate_interval(vrp_min)
    eev_ci = negate_interval(eev_est.ci)
    vss_ci = vss(vrp_ci, eev_ci)
    if trace_path is not None:
        write_saa_trace(trace_path, trace)
    return SaaResult(vrp_ci=vrp_ci, eev_ci=eev_ci, vss_ci=vss_ci,
                     significant=vss_ci is not None, n_final=n,
                     candidate=lb.candidate, expected_solution=x_bar,
                     trace=tuple(trace), converged=converged)


def write_saa_trace(path: str, trace: Sequence[SaaIteration]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "n", "lower", "upper",
                         "halfwidth_lower", "halfwidth_upper", "rel_gap"])
        for row in trace:
            writer.writerow([row.iteration, row.n, repr(row.lower),
                             repr(row.upper), repr(row.halfwidth_lower),
                             repr(row.halfwidth_upper), repr(row.rel_gap)])


def result_to_dict(result: SaaResult) -> dict:
    def ci_doc(ci: ConfidenceInterval | None) -> dict | None:
        if ci is None:
            return None
        return {"lo": ci.lo, "hi": ci.hi, "level": ci.level}

    return {
        "vrp_ci": ci_doc(result.vrp_ci),
        "eev_ci": ci_doc(result.eev_ci),
        "vss_ci": ci_doc(result.vss_ci),
        "significant": result.significant,
        "n_final": result.n_final,
        "converged": result.converged,
    }
