"""Builders for the two-stage day-ahead bidding program.

The first stage declares the order volumes; each second-stage scenario
commits orders at realized prices, schedules the cascade, settles imbalances
in the balancing market, and values terminal reservoir contents with the
polyhedral water value.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .forecasting import PriceLevels
from .hydro import (HydroError, HydroSystem, OrderStrategy, Scenario,
                    TradeRegulations, WaterValueFunction, production_capacity)
from .lp import INF, LpBuilder
from .lshaped import SecondStage, TwoStageProgram, solve_second_stage

HOURS = 24


# ---- first stage -------------------------------------------------------------

@dataclass(frozen=True)
class FirstStageIndex:
    """First-stage fragment plus the variable layout shared with the
    second-stage linkage: x^I by hour, then x^D and x^B level-major."""

    builder: LpBuilder
    x_ind: np.ndarray      # (24,)
    x_dep: np.ndarray      # (n_levels, 24)
    x_blk: np.ndarray      # (n_levels, n_blocks)

    @property
    def n_vars(self) -> int:
        return self.builder.n_vars


def build_first_stage(regs: TradeRegulations, levels: PriceLevels,
                      system: HydroSystem) -> FirstStageIndex:
    levels.block_prices(regs.blocks)  # validates block hours against the levels
    n_levels = levels.levels.shape[0]
    n_blocks = len(regs.blocks)
    b = LpBuilder()
    x_ind = np.array([b.add_var(f"xI[{t}]") for t in range(HOURS)])
    x_dep = np.array([[b.add_var(f"xD[{p},{t}]") for t in range(HOURS)]
                      for p in range(n_levels)])
    x_blk = np.array([[b.add_var(f"xB[{p},{k}]", 0.0, regs.block_limit)
                       for k in range(n_blocks)] for p in range(n_levels)])
    for t in range(HOURS):
        for p in range(n_levels - 1):
            b.add_row(-INF, 0.0, [(x_dep[p, t], 1.0), (x_dep[p + 1, t], -1.0)],
                      name=f"mono[{p},{t}]")
    cap = regs.cap_factor * production_capacity(system)
    for t in range(HOURS):
        coeffs = [(x_ind[t], 1.0), (x_dep[n_levels - 1, t], 1.0)]
        coeffs += [(x_blk[p, k], 1.0)
                   for k, block in enumerate(regs.blocks) if t in block
                   for p in range(n_levels)]
        b.add_row(-INF, cap, coeffs, name=f"volcap[{t}]")
    return FirstStageIndex(b, x_ind, x_dep, x_blk)


def strategy_vector(strategy: OrderStrategy) -> np.ndarray:
    """Flatten an OrderStrategy into the first-stage variable layout."""
    return np.concatenate([strategy.independent, strategy.dependent.ravel(),
                           strategy.block.ravel()])


def strategy_from_vector(x: np.ndarray, n_levels: int, n_blocks: int) -> OrderStrategy:
    x = np.asarray(x, dtype=float)
    expected = HOURS + n_levels * HOURS + n_levels * n_blocks
    if x.shape != (expected,):
        raise HydroError(f"first-stage vector must have length {expected}, got {x.shape}")
    if np.any(x < -1e-7):
        raise HydroError("first-stage vector has negative volumes")
    x = np.maximum(x, 0.0)
    ind = x[:HOURS]
    dep = x[HOURS:HOURS + n_levels * HOURS].reshape(n_levels, HOURS)
    blk = x[HOURS + n_levels * HOURS:].reshape(n_levels, n_blocks)
    return OrderStrategy(ind, dep, blk)


# ---- dispatch ----------------------------------------------------------------

def interpolation_weights(level_prices: np.ndarray, rho: float) -> np.ndarray:
    """Per-level weights w with dispatched dependent volume = w . x^D.

    Below the lowest level no price-dependent volume is dispatched; above
    the highest the full top-level volume is.
    """
    levels = np.asarray(level_prices, dtype=float)
    w = np.zeros(levels.shape[0])
    if rho < levels[0]:
        return w
    if rho >= levels[-1]:
        w[-1] = 1.0
        return w
    i = int(np.searchsorted(levels, rho, side="right")) - 1
    span = levels[i + 1] - levels[i]
    w[i + 1] = (rho - levels[i]) / span
    w[i] = (levels[i + 1] - rho) / span
    return w


def dispatch_hourly(strategy: OrderStrategy, levels: PriceLevels,
                    rho: float, t: int) -> float:
    """Volume committed in hour t at market price rho."""
    if not 0 <= t < HOURS:
        raise HydroError(f"hour must lie in 0..23, got {t}")
    w = interpolation_weights(levels.levels[:, t], rho)
    return float(strategy.independent[t] + np.dot(w, strategy.dependent[:, t]))


def accepted_block_orders(levels: PriceLevels, regs: TradeRegulations,
                          prices: np.ndarray) -> np.ndarray:
    """Acceptance mask (n_levels, n_blocks): a block order is committed when
    its block price does not exceed the mean market price over the block."""
    prices = np.asarray(prices, dtype=float)
    pbar = levels.block_prices(regs.blocks)
    rho_bar = np.array([float(np.mean(prices[list(block)])) for block in regs.blocks])
    return pbar <= rho_bar[None, :]


def dispatch_blocks(strategy: OrderStrategy, levels: PriceLevels,
                    prices: np.ndarray, regs: TradeRegulations) -> np.ndarray:
    """Committed volume per block at the realized price curve."""
    mask = accepted_block_orders(levels, regs, prices)
    if mask.shape != strategy.block.shape:
        raise HydroError("strategy block shape does not match the block set")
    return (strategy.block * mask).sum(axis=0)


# ---- second stage ------------------------------------------------------------

@dataclass(frozen=True)
class DayAheadStage:
    """Second-stage fragment with its variable and row index maps."""

    stage: SecondStage
    scenario: Scenario
    y_hour: np.ndarray      # (24,)
    y_block: np.ndarray     # (n_blocks,)
    y_plus: np.ndarray      # (24,)
    y_minus: np.ndarray     # (24,)
    q: np.ndarray           # (n_plants, n_segments_max, 24); -1 where absent
    s: np.ndarray           # (n_plants, 24)
    m: np.ndarray           # (n_plants, 24)
    p: np.ndarray           # (24,)
    w: np.ndarray           # (n_partitions,)
    flow_rows: np.ndarray   # (n_plants, 24)
    load_rows: np.ndarray   # (24,)


def build_second_stage(system: HydroSystem, regs: TradeRegulations,
                       levels: PriceLevels, wv: WaterValueFunction,
                       scenario: Scenario) -> DayAheadStage:
    n_plants = system.n_plants
    if scenario.inflows.shape != (n_plants,):
        raise HydroError(f"scenario carries {scenario.inflows.shape[0]} inflows "
                         f"for a {n_plants}-plant system")
    n_levels = levels.levels.shape[0]
    n_blocks = len(regs.blocks)
    rho = scenario.prices
    rho_bar = np.array([float(np.mean(rho[list(block)])) for block in regs.blocks])
    accepted = accepted_block_orders(levels, regs, rho)

    b = LpBuilder()
    y_hour = np.array([b.add_var(f"yH[{t}]", 0.0, INF, obj=rho[t])
                       for t in range(HOURS)])
    y_block = np.array([b.add_var(f"yB[{k}]", 0.0, INF,
                                  obj=len(block) * rho_bar[k])
                        for k, block in enumerate(regs.blocks)])
    y_plus = np.array([b.add_var(f"yplus[{t}]", 0.0, INF,
                                 obj=-regs.beta(t) * rho[t]) for t in range(HOURS)])
    y_minus = np.array([b.add_var(f"yminus[{t}]", 0.0, INF,
                                  obj=regs.alpha(t) * rho[t]) for t in range(HOURS)])
    max_segs = max(len(p.segments) for p in system.plants)
    q = -np.ones((n_plants, max_segs, HOURS), dtype=np.int64)
    for h, plant in enumerate(system.plants):
        for si, seg in enumerate(plant.segments):
            for t in range(HOURS):
                q[h, si, t] = b.add_var(f"Q[{h},{si},{t}]", 0.0, seg.cap)
    s = np.array([[b.add_var(f"S[{h},{t}]") for t in range(HOURS)]
                  for h in range(n_plants)])
    m = np.array([[b.add_var(f"M[{h},{t}]", 0.0, system.plants[h].capacity)
                   for t in range(HOURS)] for h in range(n_plants)])
    p_var = np.array([b.add_var(f"P[{t}]") for t in range(HOURS)])
    w_var = np.array([b.add_var(f"W[{i}]", -INF, INF, obj=-1.0)
                      for i in range(wv.n_partitions)])

    linkage: list[tuple[int, int, float]] = []
    x_dep0 = HOURS
    x_blk0 = HOURS + n_levels * HOURS
    for t in range(HOURS):
        row = b.add_row(0.0, 0.0, [(y_hour[t], 1.0)], name=f"dispatch[{t}]")
        linkage.append((row, t, -1.0))
        weights = interpolation_weights(levels.levels[:, t], rho[t])
        for pl in range(n_levels):
            if weights[pl] != 0.0:
                linkage.append((row, x_dep0 + pl * HOURS + t, -float(weights[pl])))
    for k in range(n_blocks):
        row = b.add_row(0.0, 0.0, [(y_block[k], 1.0)], name=f"commit[{k}]")
        for pl in range(n_levels):
            if accepted[pl, k]:
                linkage.append((row, x_blk0 + pl * n_blocks + k, -1.0))
    for t in range(HOURS):
        coeffs = [(p_var[t], 1.0)]
        coeffs += [(q[h, si, t], -seg.mu)
                   for h, plant in enumerate(system.plants)
                   for si, seg in enumerate(plant.segments)]
        b.add_row(0.0, 0.0, coeffs, name=f"production[{t}]")
    load_rows = np.zeros(HOURS, dtype=np.int64)
    for t in range(HOURS):
        coeffs = [(y_hour[t], 1.0), (p_var[t], -1.0),
                  (y_plus[t], -1.0), (y_minus[t], 1.0)]
        coeffs += [(y_block[k], 1.0) for k, block in enumerate(regs.blocks)
                   if t in block]
        load_rows[t] = b.add_row(0.0, 0.0, coeffs, name=f"load[{t}]")
    flow_rows = _flow_conservation_rows(b, system, q, s, m, HOURS,
                                        scenario.inflows)
    for c, cut in enumerate(wv.cuts):
        coeffs = [(m[h, HOURS - 1], float(cut.gradient[h]))
                  for h in range(n_plants) if cut.gradient[h] != 0.0]
        coeffs.append((w_var[cut.partition], 1.0))
        b.add_row(cut.rhs, INF, coeffs, name=f"watercut[{c}]")

    return DayAheadStage(SecondStage(b, tuple(linkage)), scenario,
                         y_hour, y_block, y_plus, y_minus, q, s, m, p_var,
                         w_var, flow_rows, load_rows)


def _flow_conservation_rows(b: LpBuilder, system: HydroSystem, q: np.ndarray,
                            s: np.ndarray, m: np.ndarray, horizon: int,
                            hourly_inflows) -> np.ndarray:
    """Reservoir balance rows; returns their indices (n_plants, horizon).

    hourly_inflows is either a (n_plants,) constant vector or a callable
    (plant, hour) -> inflow.
    """
    if callable(hourly_inflows):
        inflow_at = hourly_inflows
    else:
        vec = np.asarray(hourly_inflows, dtype=float)
        def inflow_at(h: int, t: int) -> float:
            return float(vec[h])
    rows = np.zeros((system.n_plants, horizon), dtype=np.int64)
    for h, plant in enumerate(system.plants):
        for t in range(horizon):
            coeffs = [(m[h, t], 1.0), (s[h, t], 1.0)]
            coeffs += [(q[h, si, t], 1.0) for si in range(len(plant.segments))]
            rhs = inflow_at(h, t)
            if t > 0:
                coeffs.append((m[h, t - 1], -1.0))
            else:
                rhs += plant.initial
            for origin, tau in plant.upstream_q:
                i = system.index(origin)
                if t - tau >= 0:
                    coeffs += [(q[i, si, t - tau], -1.0)
                               for si in range(len(system.plants[i].segments))]
                else:
                    rhs += system.history_flow(system.history_discharge, origin, t - tau)
            for origin, tau in plant.upstream_s:
                i = system.index(origin)
                if t - tau >= 0:
                    coeffs.append((s[i, t - tau], -1.0))
                else:
                    rhs += system.history_flow(system.history_spill, origin, t - tau)
            rows[h, t] = b.add_row(rhs, rhs, coeffs, name=f"flow[{h},{t}]")
    return rows


# ---- program assembly and evaluation ------------------------------------------

def day_ahead_program(system: HydroSystem, regs: TradeRegulations,
                      levels: PriceLevels, wv: WaterValueFunction,
                      scenarios: Sequence[Scenario]) -> TwoStageProgram:
    return TwoStageProgram(
        first_stage=lambda: build_first_stage(regs, levels, system).builder,
        second_stage=lambda sc: build_second_stage(system, regs, levels, wv, sc).stage,
        scenarios=list(scenarios),
        probabilities=np.array([sc.probability for sc in scenarios]),
    )


def day_ahead_family(system: HydroSystem, regs: TradeRegulations,
                     levels: PriceLevels,
                     wv: WaterValueFunction) -> Callable[[Sequence[Scenario]],
                                                         TwoStageProgram]:
    """Program family over sampled scenarios, re-weighted equiprobable."""
    def family(scenarios: Sequence[Scenario]) -> TwoStageProgram:
        p = 1.0 / len(scenarios)
        return day_ahead_program(system, regs, levels, wv,
                                 [replace(sc, probability=p) for sc in scenarios])
    return family


@dataclass(frozen=True)
class SecondStageOutcome:
    """Primal recourse solution with its revenue decomposition."""

    committed_hourly: np.ndarray    # (24,)
    committed_blocks: np.ndarray    # (n_blocks,)
    shortage: np.ndarray            # (24,)
    surplus: np.ndarray             # (24,)
    discharge: np.ndarray           # (n_plants, n_segments_max, 24)
    spill: np.ndarray               # (n_plants, 24)
    contents: np.ndarray            # (n_plants, 24)
    production: np.ndarray          # (24,)
    net_profit: float
    intraday: float
    stored_value: float
    objective: float


def evaluate_strategy(system: HydroSystem, regs: TradeRegulations,
                      levels: PriceLevels, wv: WaterValueFunction,
                      scenario: Scenario, strategy: OrderStrategy) -> SecondStageOutcome:
    """Solve one scenario's recourse problem at a fixed order strategy."""
    da = build_second_stage(system, regs, levels, wv, scenario)
    x = strategy_vector(strategy)
    sol = solve_second_stage(da.stage, x)
    if sol.status != "optimal":
        raise HydroError(f"second stage is {sol.status} at the given strategy")
    return extract_outcome(da, sol.primal, regs)


def extract_outcome(da: DayAheadStage, primal: np.ndarray,
                    regs: TradeRegulations) -> SecondStageOutcome:
    rho = da.scenario.prices
    y_hour = primal[da.y_hour]
    y_block = primal[da.y_block]
    y_plus = primal[da.y_plus]
    y_minus = primal[da.y_minus]
    discharge = np.where(da.q >= 0, primal[np.maximum(da.q, 0)], 0.0)
    rho_bar = np.array([float(np.mean(rho[list(block)])) for block in regs.blocks])
    block_lengths = np.array([len(block) for block in regs.blocks], dtype=float)
    net_profit = float(np.dot(rho, y_hour) + np.dot(block_lengths * rho_bar, y_block))
    alphas = np.array([regs.alpha(t) for t in range(HOURS)])
    betas = np.array([regs.beta(t) for t in range(HOURS)])
    intraday = float(np.dot(betas * rho, y_plus) - np.dot(alphas * rho, y_minus))
    stored = -float(primal[da.w].sum())
    return SecondStageOutcome(
        committed_hourly=y_hour, committed_blocks=y_block,
        shortage=y_plus, surplus=y_minus,
        discharge=discharge, spill=primal[da.s], contents=primal[da.m],
        production=primal[da.p],
        net_profit=net_profit, intraday=intraday, stored_value=stored,
        objective=net_profit - intraday + stored,
    )
