"""Domain model of a river cascade and the day-ahead trading vocabulary.

Physical units: reservoir contents and inflows are in flow-hours (one flow
unit sustained for one hour), discharge in flow units, and the marginal
production equivalents mu convert discharged flow to MWh per hour.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from importlib import resources
from typing import Sequence

import numpy as np


class HydroError(Exception):
    """Raised on invalid cascade, regulation, or scenario data."""


# ---- cascade ----------------------------------------------------------------

@dataclass(frozen=True)
class Segment:
    cap: float    # discharge capacity, flow units
    mu: float     # marginal production equivalent, MWh per flow unit

    def __post_init__(self) -> None:
        if not (self.cap >= 0.0 and np.isfinite(self.cap)):
            raise HydroError(f"segment capacity must be finite and nonnegative, got {self.cap}")
        if not (self.mu >= 0.0 and np.isfinite(self.mu)):
            raise HydroError(f"segment mu must be finite and nonnegative, got {self.mu}")


@dataclass(frozen=True)
class HydroPlant:
    id: str
    capacity: float                               # reservoir bound, flow-hours
    initial: float                                # contents at hour 0
    segments: tuple[Segment, ...]
    upstream_q: tuple[tuple[str, int], ...] = ()  # (plant id, travel time)
    upstream_s: tuple[tuple[str, int], ...] = ()

    def __post_init__(self) -> None:
        if not self.segments:
            raise HydroError(f"plant {self.id}: at least one discharge segment required")
        if not 0.0 <= self.initial <= self.capacity:
            raise HydroError(f"plant {self.id}: initial contents {self.initial} "
                             f"outside [0, {self.capacity}]")
        mus = [s.mu for s in self.segments]
        if any(a < b for a, b in zip(mus, mus[1:])):
            raise HydroError(f"plant {self.id}: segment mu values must be nonincreasing")
        for origin, tau in list(self.upstream_q) + list(self.upstream_s):
            if tau < 0 or tau != int(tau):
                raise HydroError(f"plant {self.id}: travel time from {origin} "
                                 "must be a nonnegative whole number of hours")


@dataclass(frozen=True)
class HydroSystem:
    """An ordered cascade with pre-period flow history for travel-time lookback.

    History arrays are most-recent-first: entry j is the plant's total
    discharge (or spillage) j+1 hours before the horizon starts.  Plants
    without history entries contribute zero pre-period flow.
    """

    plants: tuple[HydroPlant, ...]
    history_discharge: dict[str, np.ndarray] = field(default_factory=dict)
    history_spill: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self) -> None:
        ids = [p.id for p in self.plants]
        if len(set(ids)) != len(ids):
            raise HydroError("plant ids must be unique")
        known = set(ids)
        for p in self.plants:
            for origin, _ in list(p.upstream_q) + list(p.upstream_s):
                if origin not in known:
                    raise HydroError(f"plant {p.id}: unknown upstream plant {origin!r}")
        self._check_acyclic()
        lookback = self.lookback_required()
        for key, hist in {**self.history_discharge, **self.history_spill}.items():
            if key not in known:
                raise HydroError(f"history for unknown plant {key!r}")
        for name, table in (("discharge", self.history_discharge),
                            ("spill", self.history_spill)):
            for pid, need in lookback.items():
                have = len(table.get(pid, ()))
                if 0 < have < need:
                    raise HydroError(f"plant {pid}: {name} history covers {have} "
                                     f"hours but travel times require {need}")

    def _check_acyclic(self) -> None:
        edges = {p.id: {origin for origin, _ in list(p.upstream_q) + list(p.upstream_s)}
                 for p in self.plants}
        seen: dict[str, int] = {}

        def visit(pid: str) -> None:
            seen[pid] = 1
            for origin in edges[pid]:
                state = seen.get(origin, 0)
                if state == 1:
                    raise HydroError(f"cascade contains a cycle through {pid!r}")
                if state == 0:
                    visit(origin)
            seen[pid] = 2

        for pid in edges:
            if seen.get(pid, 0) == 0:
                visit(pid)

    @property
    def n_plants(self) -> int:
        return len(self.plants)

    def index(self, plant_id: str) -> int:
        for k, p in enumerate(self.plants):
            if p.id == plant_id:
                return k
        raise HydroError(f"unknown plant {plant_id!r}")

    def lookback_required(self) -> dict[str, int]:
        """Hours of pre-period history each plant's outflow must cover."""
        need = {p.id: 0 for p in self.plants}
        for p in self.plants:
            for origin, tau in list(p.upstream_q) + list(p.upstream_s):
                need[origin] = max(need[origin], int(tau))
        return need

    def history_flow(self, table: dict[str, np.ndarray], plant_id: str, t: int) -> float:
        """Pre-period flow of a plant at hour t < 0 (defaults to zero)."""
        hist = table.get(plant_id)
        j = -t - 1
        if hist is None or j >= len(hist):
            return 0.0
        return float(hist[j])


def production_capacity(system: HydroSystem) -> float:
    """Maximum simultaneous production of the cascade, MWh per hour."""
    return float(sum(s.mu * s.cap for p in system.plants for s in p.segments))


# ---- cascade JSON -----------------------------------------------------------

def system_to_dict(system: HydroSystem) -> dict:
    plants = []
    for p in system.plants:
        entry: dict = {
            "id": p.id,
            "capacity": p.capacity,
            "initial": p.initial,
            "segments": [{"cap": s.cap, "mu": s.mu} for s in p.segments],
            "upstream": [{"id": i, "tau": t} for i, t in p.upstream_q],
        }
        if p.upstream_s != p.upstream_q:
            entry["upstream_spill"] = [{"id": i, "tau": t} for i, t in p.upstream_s]
        hist_q = system.history_discharge.get(p.id)
        hist_s = system.history_spill.get(p.id)
        if hist_q is not None or hist_s is not None:
            entry["history"] = {
                "discharge": list(map(float, hist_q if hist_q is not None else [])),
                "spill": list(map(float, hist_s if hist_s is not None else [])),
            }
        plants.append(entry)
    return {"plants": plants}


def system_from_dict(doc: dict) -> HydroSystem:
    try:
        raw_plants = doc["plants"]
    except (KeyError, TypeError):
        raise HydroError("cascade document must contain a 'plants' list") from None
    plants = []
    hist_q: dict[str, np.ndarray] = {}
    hist_s: dict[str, np.ndarray] = {}
    for raw in raw_plants:
        try:
            upstream = tuple((u["id"], int(u["tau"])) for u in raw.get("upstream", []))
            spill_raw = raw.get("upstream_spill")
            upstream_s = (upstream if spill_raw is None else
                          tuple((u["id"], int(u["tau"])) for u in spill_raw))
            plant = HydroPlant(
                id=str(raw["id"]),
                capacity=float(raw["capacity"]),
                initial=float(raw["initial"]),
                segments=tuple(Segment(float(s["cap"]), float(s["mu"]))
                               for s in raw["segments"]),
                upstream_q=upstream,
                upstream_s=upstream_s,
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise HydroError(f"malformed plant entry: {exc}") from None
        plants.append(plant)
        hist = raw.get("history")
        if hist:
            if hist.get("discharge"):
                hist_q[plant.id] = np.asarray(hist["discharge"], dtype=float)
            if hist.get("spill"):
                hist_s[plant.id] = np.asarray(hist["spill"], dtype=float)
    return HydroSystem(tuple(plants), hist_q, hist_s)


def save_system(path: str, system: HydroSystem) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(system_to_dict(system), fh, indent=2)
        fh.write("\n")


def load_system(path: str) -> HydroSystem:
    with open(path, encoding="utf-8") as fh:
        return system_from_dict(json.load(fh))


def synthetic_cascade(n_plants: int = 15) -> HydroSystem:
    """Deterministic single-chain cascade with reservoirs spanning two
    orders of magnitude from headwater lakes down to the outlet."""
    if n_plants < 1:
        raise HydroError("cascade needs at least one plant")
    plants = []
    for k in range(n_plants):
        frac = k / (n_plants - 1) if n_plants > 1 else 0.0
        capacity = round(2000.0 * 100.0 ** (-frac), 1)
        mu1 = round(1.1 - 0.4 * frac, 4)
        q1 = float(40 + 2 * k)
        upstream = ((plants[k - 1].id, k % 3),) if k > 0 else ()
        plants.append(HydroPlant(
            id=f"plant_{k + 1}",
            capacity=capacity,
            initial=round(capacity / 2.0, 2),
            segments=(Segment(q1, mu1), Segment(q1 / 2.0, round(0.6 * mu1, 4))),
            upstream_q=upstream,
            upstream_s=upstream,
        ))
    return HydroSystem(tuple(plants))


def default_system() -> HydroSystem:
    """The packaged 15-plant cascade."""
    path = resources.files("hydrobid").joinpath("data/cascade15.json")
    return system_from_dict(json.loads(path.read_text(encoding="utf-8")))


# ---- market regulations -----------------------------------------------------

def default_blocks(horizon: int = 24, min_length: int = 3) -> tuple[tuple[int, ...], ...]:
    """All contiguous hour ranges of at least min_length hours."""
    blocks = []
    for length in range(min_length, horizon + 1):
        for start in range(horizon - length + 1):
            blocks.append(tuple(range(start, start + length)))
    return tuple(blocks)


@dataclass(frozen=True)
class TradeRegulations:
    blocks: tuple[tuple[int, ...], ...]
    block_limit: float = 500.0        # per block-order volume bound, MWh/h
    cap_factor: float = 2.0           # hourly order cap as multiple of capacity
    peak_hours: frozenset = frozenset(range(8, 20))
    peak_penalty: float = 0.15
    offpeak_penalty: float = 0.10

    def __post_init__(self) -> None:
        if not self.blocks:
            raise HydroError("block set must not be empty")
        for block in self.blocks:
            if len(block) < 3:
                raise HydroError(f"block {block} shorter than 3 hours")
            if list(block) != list(range(block[0], block[0] + len(block))):
                raise HydroError(f"block {block} is not contiguous")
        if not self.cap_factor > 0:
            raise HydroError("cap factor must be positive")
        if self.peak_penalty < 0 or self.offpeak_penalty < 0:
            raise HydroError("penalties must be nonnegative")
        object.__setattr__(self, "blocks", tuple(tuple(b) for b in self.blocks))

    def penalty(self, t: int) -> float:
        return self.peak_penalty if t in self.peak_hours else self.offpeak_penalty

    def alpha(self, t: int) -> float:
        """Balancing sell price factor for surplus in hour t."""
        return 1.0 - self.penalty(t)

    def beta(self, t: int) -> float:
        """Balancing buy price factor for shortage in hour t."""
        return 1.0 + self.penalty(t)


def default_regulations(blocks: Sequence[Sequence[int]] | None = None,
                        **overrides) -> TradeRegulations:
    chosen = default_blocks() if blocks is None else tuple(tuple(b) for b in blocks)
    return TradeRegulations(blocks=chosen, **overrides)


# ---- scenarios --------------------------------------------------------------

@dataclass(frozen=True)
class Scenario:
    """One day-ahead realization: hourly prices and constant hourly inflows."""

    prices: np.ndarray       # (24,)
    inflows: np.ndarray      # (n_plants,), flow units per hour
    probability: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "prices", np.asarray(self.prices, dtype=float))
        object.__setattr__(self, "inflows", np.asarray(self.inflows, dtype=float))
        if self.prices.shape != (24,):
            raise HydroError(f"prices must have shape (24,), got {self.prices.shape}")
        if self.inflows.ndim != 1:
            raise HydroError("inflows must be a per-plant vector")
        if not (np.all(np.isfinite(self.prices)) and np.all(np.isfinite(self.inflows))):
            raise HydroError("scenario data must be finite")
        if not 0.0 < self.probability <= 1.0:
            raise HydroError(f"probability must lie in (0, 1], got {self.probability}")


def daily_scenario(prices: np.ndarray, daily_inflows: np.ndarray,
                   probability: float = 1.0) -> Scenario:
    """Build a Scenario from a sampled day: daily inflow volumes are spread
    evenly over the 24 hours."""
    daily = np.asarray(daily_inflows, dtype=float)
    return Scenario(prices, daily / 24.0, probability)


def expected_scenario(scenarios: Sequence[Scenario]) -> Scenario:
    """Probability-weighted componentwise mean of a scenario set."""
    if not scenarios:
        raise HydroError("expected scenario of an empty set")
    probs = np.array([s.probability for s in scenarios])
    total = float(probs.sum())
    prices = sum(p * s.prices for p, s in zip(probs, scenarios)) / total
    inflows = sum(p * s.inflows for p, s in zip(probs, scenarios)) / total
    return Scenario(prices, inflows, 1.0)


# ---- order strategy ---------------------------------------------------------

@dataclass(frozen=True)
class OrderStrategy:
    """First-stage decision: price-independent, price-dependent, and block
    order volumes in MWh/h."""

    independent: np.ndarray     # (24,)
    dependent: np.ndarray       # (n_levels, 24), nondecreasing in the level
    block: np.ndarray           # (n_levels, n_blocks)

    def __post_init__(self) -> None:
        object.__setattr__(self, "independent", np.asarray(self.independent, dtype=float))
        object.__setattr__(self, "dependent", np.asarray(self.dependent, dtype=float))
        object.__setattr__(self, "block", np.asarray(self.block, dtype=float))
        if self.independent.shape != (24,):
            raise HydroError("independent orders must cover 24 hours")
        if self.dependent.ndim != 2 or self.dependent.shape[1] != 24:
            raise HydroError("dependent orders must have shape (levels, 24)")
        if self.block.ndim != 2 or self.block.shape[0] != self.dependent.shape[0]:
            raise HydroError("block orders must have one row per price level")
        arrays = (self.independent, self.dependent, self.block)
        if any(np.any(a < -1e-9) for a in arrays):
            raise HydroError("order volumes must be nonnegative")
        if np.any(np.diff(self.dependent, axis=0) < -1e-6):
            raise HydroError("dependent volumes must be nondecreasing in the price level")


def strategy_to_dict(strategy: OrderStrategy, regs: TradeRegulations) -> dict:
    return {
        "independent": [float(v) for v in strategy.independent],
        "dependent": [[float(v) for v in row] for row in strategy.dependent],
        "block": [[float(v) for v in row] for row in strategy.block],
        "blocks": [[int(b[0]), int(b[-1])] for b in regs.blocks],
    }


def strategy_from_dict(doc: dict) -> OrderStrategy:
    try:
        return OrderStrategy(np.asarray(doc["independent"], dtype=float),
                             np.asarray(doc["dependent"], dtype=float),
                             np.asarray(doc["block"], dtype=float))
    except (KeyError, TypeError, ValueError) as exc:
        raise HydroError(f"malformed strategy document: {exc}") from None


def save_strategy(path: str, strategy: OrderStrategy, regs: TradeRegulations) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(strategy_to_dict(strategy, regs), fh, indent=2)
        fh.write("\n")


def load_strategy(path: str) -> OrderStrategy:
    with open(path, encoding="utf-8") as fh:
        return strategy_from_dict(json.load(fh))


def strategy_csv_rows(strategy: OrderStrategy,
                      regs: TradeRegulations) -> list[tuple[str, str, str, str]]:
    """Flat (hour, price_level, volume, order_type) rows for reporting."""
    rows = []
    for t in range(24):
        rows.append((str(t), "", f"{strategy.independent[t]:.6g}", "independent"))
    n_levels = strategy.dependent.shape[0]
    for p in range(n_levels):
        for t in range(24):
            rows.append((str(t), str(p + 1), f"{strategy.dependent[p, t]:.6g}", "dependent"))
    for p in range(n_levels):
        for b, block in enumerate(regs.blocks):
            rows.append((f"{block[0]}-{block[-1]}", str(p + 1),
                         f"{strategy.block[p, b]:.6g}", "block"))
    return rows


def save_strategy_csv(path: str, strategy: OrderStrategy, regs: TradeRegulations) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["hour", "price_level", "volume", "order_type"])
        writer.writerows(strategy_csv_rows(strategy, regs))


# ---- water value ------------------------------------------------------------

@dataclass(frozen=True)
class WaterValueCut:
    gradient: np.ndarray     # per-plant coefficient on final reservoir contents
    rhs: float
    partition: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "gradient", np.asarray(self.gradient, dtype=float))
        if not (np.all(np.isfinite(self.gradient)) and np.isfinite(self.rhs)):
            raise HydroError("water value cut must be finite")


@dataclass(frozen=True)
class WaterValueFunction:
    """Polyhedral water value: per partition, the pointwise minimum of its
    cuts' affine functions; the total value is the sum over partitions."""

    cuts: tuple[WaterValueCut, ...]
    n_partitions: int

    def __post_init__(self) -> None:
        if self.n_partitions < 1:
            raise HydroError("at least one partition required")
        present = {c.partition for c in self.cuts}
        if present != set(range(self.n_partitions)):
            raise HydroError("every partition needs at least one cut")

    def value(self, final_contents: np.ndarray) -> float:
        m = np.asarray(final_contents, dtype=float)
        total = 0.0
        for i in range(self.n_partitions):
            total += min(float(np.dot(c.gradient, m)) - c.rhs
                         for c in self.cuts if c.partition == i)
        return total


def zero_water_value(n_plants: int) -> WaterValueFunction:
    """Water value that is identically zero (no continuation value)."""
    return WaterValueFunction((WaterValueCut(np.zeros(n_plants), 0.0, 0),), 1)


def water_value_to_dict(wv: WaterValueFunction) -> dict:
    return {
        "n_partitions": wv.n_partitions,
        "cuts": [{"partition": c.partition,
                  "gradient": [float(g) for g in c.gradient],
                  "rhs": c.rhs} for c in wv.cuts],
    }


def water_value_from_dict(doc: dict) -> WaterValueFunction:
    try:
        cuts = tuple(WaterValueCut(gradient=np.asarray(c["gradient"], dtype=float),
                                   rhs=float(c["rhs"]),
                                   partition=int(c["partition"]))
                     for c in doc["cuts"])
        return WaterValueFunction(cuts, int(doc["n_partitions"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise HydroError(f"malformed water value document: {exc}") from None


def save_water_value(path: str, wv: WaterValueFunction) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(water_value_to_dict(wv), fh, indent=2)
        fh.write("\n")


def load_water_value(path: str) -> WaterValueFunction:
    with open(path, encoding="utf-8") as fh:
        return water_value_from_dict(json.load(fh))
