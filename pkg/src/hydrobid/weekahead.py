"""Week-ahead planning program and water-value extraction.

The first stage picks initial reservoir contents; each weekly scenario then
schedules the cascade over 168 hours to maximize spot revenue.  The cuts
produced while decomposing this program form the polyhedral water value
consumed by the day-ahead program.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from . import seeds
from .forecasting import (InflowForecaster, PriceForecaster, forecast_inflow,
                          forecast_price)
from .hydro import (HydroError, HydroSystem, WaterValueCut, WaterValueFunction)
from .lp import INF, LpBuilder
from .lshaped import (LshapedOptions, LshapedResult, SecondStage,
                      TwoStageProgram, solve_lshaped)

WEEK_HOURS = 168
WEEK_DAYS = 7


@dataclass(frozen=True)
class WeeklyScenario:
    """One week of hourly prices and daily inflow volumes per plant."""

    prices: np.ndarray      # (168,)
    inflows: np.ndarray     # (n_plants, 7), volume per day
    probability: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "prices", np.asarray(self.prices, dtype=float))
        object.__setattr__(self, "inflows", np.asarray(self.inflows, dtype=float))
        if self.prices.shape != (WEEK_HOURS,):
            raise HydroError(f"weekly prices must have shape (168,), got {self.prices.shape}")
        if self.inflows.ndim != 2 or self.inflows.shape[1] != WEEK_DAYS:
            raise HydroError(f"weekly inflows must have shape (n, 7), got {self.inflows.shape}")
        if not (np.all(np.isfinite(self.prices)) and np.all(np.isfinite(self.inflows))):
            raise HydroError("weekly scenario contains non-finite values")
        if not 0.0 < self.probability <= 1.0:
            raise HydroError(f"probability must lie in (0, 1], got {self.probability}")


def build_week_ahead(system: HydroSystem,
                     scenarios: Sequence[WeeklyScenario]) -> TwoStageProgram:
    """Two-stage program whose first stage chooses initial contents M0."""
    n_plants = system.n_plants
    for w, sc in enumerate(scenarios):
        if sc.inflows.shape[0] != n_plants:
            raise HydroError(f"scenario {w} carries {sc.inflows.shape[0]} inflow "
                             f"rows for a {n_plants}-plant system")

    def first_stage() -> LpBuilder:
        b = LpBuilder()
        for plant in system.plants:
            b.add_var(f"M0[{plant.id}]", 0.0, plant.capacity)
        return b

    def second_stage(sc: WeeklyScenario) -> SecondStage:
        b = LpBuilder()
        max_segs = max(len(p.segments) for p in system.plants)
        q = -np.ones((n_plants, max_segs, WEEK_HOURS), dtype=np.int64)
        for h, plant in enumerate(system.plants):
            for si, seg in enumerate(plant.segments):
                for t in range(WEEK_HOURS):
                    q[h, si, t] = b.add_var(f"Q[{h},{si},{t}]", 0.0, seg.cap)
        s = np.array([[b.add_var(f"S[{h},{t}]") for t in range(WEEK_HOURS)]
                      for h in range(n_plants)])
        m = np.array([[b.add_var(f"M[{h},{t}]", 0.0, system.plants[h].capacity)
                       for t in range(WEEK_HOURS)] for h in range(n_plants)])
        for t in range(WEEK_HOURS):
            p_t = b.add_var(f"P[{t}]", 0.0, INF, obj=float(sc.prices[t]))
            coeffs = [(p_t, 1.0)]
            coeffs += [(q[h, si, t], -seg.mu)
                       for h, plant in enumerate(system.plants)
                       for si, seg in enumerate(plant.segments)]
            b.add_row(0.0, 0.0, coeffs, name=f"production[{t}]")
        linkage: list[tuple[int, int, float]] = []
        for h, plant in enumerate(system.plants):
            for t in range(WEEK_HOURS):
                coeffs = [(m[h, t], 1.0), (s[h, t], 1.0)]
                coeffs += [(q[h, si, t], 1.0) for si in range(len(plant.segments))]
                rhs = float(sc.inflows[h, t // 24]) / 24.0
                if t > 0:
                    coeffs.append((m[h, t - 1], -1.0))
                for origin, tau in plant.upstream_q:
                    i = system.index(origin)
                    if t - tau >= 0:
                        coeffs += [(q[i, si, t - tau], -1.0)
                                   for si in range(len(system.plants[i].segments))]
                    else:
                        rhs += system.history_flow(system.history_discharge,
                                                   origin, t - tau)
                for origin, tau in plant.upstream_s:
                    i = system.index(origin)
                    if t - tau >= 0:
                        coeffs.append((s[i, t - tau], -1.0))
                    else:
                        rhs += system.history_flow(system.history_spill,
                                                   origin, t - tau)
                row = b.add_row(rhs, rhs, coeffs, name=f"flow[{h},{t}]")
                if t == 0:
                    linkage.append((row, h, -1.0))
        return SecondStage(b, tuple(linkage))

    return TwoStageProgram(
        first_stage=first_stage,
        second_stage=second_stage,
        scenarios=list(scenarios),
        probabilities=np.array([sc.probability for sc in scenarios]),
    )


def harvest_water_value(result: LshapedResult) -> WaterValueFunction:
    """Convert the cut pool of a solved week-ahead program into a
    WaterValueFunction: a cut theta_i <= g.M0 + r becomes the row
    g.M0 + W_i >= -r on the substitution W_i = -theta_i."""
    if not result.cuts:
        raise HydroError("no cuts to harvest")
    cuts = [WaterValueCut(gradient=c.coefs, rhs=-c.rhs, partition=c.partition)
            for c in result.cuts]
    n_partitions = max(c.partition for c in cuts) + 1
    return WaterValueFunction(tuple(cuts), n_partitions)


def solve_water_value(system: HydroSystem,
                      sampler: Callable[[np.random.Generator], WeeklyScenario],
                      n_scenarios: int, n_partitions: int | None = None,
                      rng: np.random.Generator | None = None,
                      options: LshapedOptions | None = None) -> WaterValueFunction:
    """Sample weekly scenarios, decompose the week-ahead program, and
    harvest every optimality cut as a water-value cut."""
    if n_scenarios < 1:
        raise HydroError("need at least one weekly scenario")
    if rng is None:
        rng = seeds.stream(0, seeds.SCENARIOS)
    drawn = [sampler(rng) for _ in range(n_scenarios)]
    scenarios = [WeeklyScenario(sc.prices, sc.inflows, 1.0 / n_scenarios)
                 for sc in drawn]
    program = build_week_ahead(system, scenarios)
    if options is None:
        options = LshapedOptions(partitions=n_partitions)
    elif n_partitions is not None and options.partitions is None:
        options = replace(options, partitions=n_partitions)
    result = solve_lshaped(program, options)
    return harvest_water_value(result)


def forecast_weekly_sampler(price_f: PriceForecaster, inflow_f: InflowForecaster,
                            month: int, week: int,
                            n_plants: int = 15) -> Callable[[np.random.Generator], WeeklyScenario]:
    """Sampler drawing 7 daily price curves and one weekly inflow matrix.

    Systems smaller than the 15-plant forecaster take the first n_plants rows.
    """
    def sample(rng: np.random.Generator) -> WeeklyScenario:
        prices = np.concatenate([forecast_price(price_f, month, rng)
                                 for _ in range(WEEK_DAYS)])
        inflows = forecast_inflow(inflow_f, week, rng)[:n_plants, :]
        return WeeklyScenario(prices, inflows)
    return sample
