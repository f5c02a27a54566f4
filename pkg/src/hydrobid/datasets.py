"""Market and hydrology data handling.

Hourly price history is chunked into daily 24-hour curves and daily inflow
history into weekly 15-plant sequences, the shapes the forecasters train on.
A bundled synthetic generator emits both CSV formats with configurable
seasonal profiles so every pipeline stage can run without external data.
"""

from __future__ import annotations

import datetime as dt
import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import seeds


class DataError(Exception):
    pass


class DataWarning(UserWarning):
    pass


@dataclass(frozen=True)
class SeasonalContext:
    """Calendar position of a sample: month 1-12, week 1-52, hour 0-23, day 1-7."""
    month: int
    week: int
    hour: int
    day: int

    def __post_init__(self):
        if not 1 <= self.month <= 12:
            raise DataError(f"month out of range: {self.month}")
        if not 1 <= self.week <= 52:
            raise DataError(f"week out of range: {self.week}")
        if not 0 <= self.hour <= 23:
            raise DataError(f"hour out of range: {self.hour}")
        if not 1 <= self.day <= 7:
            raise DataError(f"day out of range: {self.day}")


def _iso_week(d: dt.date) -> int:
    return min(d.isocalendar()[1], 52)  # fold ISO week 53 into 52


@dataclass
class PriceDay:
    """One day of hourly prices: 24 EUR/MWh values."""
    date: dt.date
    values: np.ndarray

    @property
    def month(self) -> int:
        return self.date.month

    @property
    def context(self) -> SeasonalContext:
        return SeasonalContext(month=self.date.month, week=_iso_week(self.date),
                               hour=0, day=self.date.isoweekday())


@dataclass
class InflowWeek:
    """One week of daily inflows: plants x 7 days."""
    start: dt.date
    values: np.ndarray

    @property
    def week(self) -> int:
        return _iso_week(self.start)

    @property
    def context(self) -> SeasonalContext:
        return SeasonalContext(month=self.start.month, week=self.week,
                               hour=0, day=1)


# ---- ingestion ----------------------------------------------------------

_PRICE_HEADER = "timestamp,price_eur_mwh"


def _read_lines(path) -> list[str]:
    with open(path, "r", encoding="utf-8") as fh:
        return fh.read().splitlines()


def ingest_price_history(path) -> list[PriceDay]:
    """Read hourly price CSV into daily chunks.

    Each complete day must provide hours 0..23 in order.  An incomplete final
    day is dropped with a warning; an incomplete day anywhere else is an
    error, as is any unparsable row (both reported with line numbers).
    """
    lines = _read_lines(path)
    if not lines or lines[0].strip() != _PRICE_HEADER:
        raise DataError(f"{path}: line 1: expected header '{_PRICE_HEADER}'")
    groups: list[tuple[dt.date, int, list[float], list[int]]] = []
    for i, raw in enumerate(lines[1:], start=2):
        row = raw.strip()
        if not row:
            continue
        parts = row.split(",")
        if len(parts) != 2:
            raise DataError(f"{path}: line {i}: expected 2 fields, got {len(parts)}")
        try:
            ts = dt.datetime.fromisoformat(parts[0])
        except ValueError as exc:
            raise DataError(f"{path}: line {i}: bad timestamp {parts[0]!r}") from exc
        if ts.minute or ts.second or ts.microsecond:
            raise DataError(f"{path}: line {i}: timestamp must fall on the hour")
        try:
            value = float(parts[1])
        except ValueError as exc:
            raise DataError(f"{path}: line {i}: bad price {parts[1]!r}") from exc
        if not math.isfinite(value):
            raise DataError(f"{path}: line {i}: non-finite price")
        day = ts.date()
        if not groups or groups[-1][0] != day:
            groups.append((day, i, [], []))
        groups[-1][2].append(value)
        groups[-1][3].append(ts.hour)

    out: list[PriceDay] = []
    for k, (day, first_line, values, hours) in enumerate(groups):
        if hours != list(range(24)):
            if k == len(groups) - 1:
                warnings.warn(f"{path}: dropping incomplete final day {day} "
                              f"({len(values)} rows)", DataWarning, stacklevel=2)
                continue
            raise DataError(f"{path}: line {first_line}: day {day} does not "
                            f"cover hours 0-23 exactly")
        out.append(PriceDay(date=day, values=np.array(values)))
    return out


def ingest_inflow_history(path) -> list[InflowWeek]:
    """Read daily inflow CSV into weekly chunks of consecutive 7-day runs.

    Dates must advance one day per row; trailing rows short of a full week
    are dropped with a warning.
    """
    lines = _read_lines(path)
    if not lines:
        raise DataError(f"{path}: line 1: empty file")
    header = lines[0].strip().split(",")
    n = len(header) - 1
    if n < 1 or header[0] != "date" or \
            header[1:] != [f"plant_{k}" for k in range(1, n + 1)]:
        raise DataError(f"{path}: line 1: expected header 'date,plant_1,...'")
    dates: list[dt.date] = []
    rows: list[list[float]] = []
    for i, raw in enumerate(lines[1:], start=2):
        row = raw.strip()
        if not row:
            continue
        parts = row.split(",")
        if len(parts) != n + 1:
            raise DataError(f"{path}: line {i}: expected {n + 1} fields, "
                            f"got {len(parts)}")
        try:
            day = dt.date.fromisoformat(parts[0])
        except ValueError as exc:
            raise DataError(f"{path}: line {i}: bad date {parts[0]!r}") from exc
        try:
            values = [float(v) for v in parts[1:]]
        except ValueError as exc:
            raise DataError(f"{path}: line {i}: bad inflow value") from exc
        if not all(math.isfinite(v) for v in values):
            raise DataError(f"{path}: line {i}: non-finite inflow")
        if dates and day != dates[-1] + dt.timedelta(days=1):
            raise DataError(f"{path}: line {i}: dates must advance one day "
                            f"per row (got {day} after {dates[-1]})")
        dates.append(day)
        rows.append(values)

    n_weeks, rem = divmod(len(rows), 7)
    if rem:
        warnings.warn(f"{path}: dropping {rem} trailing rows short of a "
                      f"full week", DataWarning, stacklevel=2)
    out = []
    for w in range(n_weeks):
        block = np.array(rows[7 * w:7 * w + 7]).T  # plants x days
        out.append(InflowWeek(start=dates[7 * w], values=block))
    return out


# ---- emission -------------------------------------------------------------

def write_price_history(path, days: list[PriceDay]) -> None:
    lines = [_PRICE_HEADER]
    for d in days:
        for h in range(24):
            lines.append(f"{d.date.isoformat()}T{h:02d}:00:00,{d.values[h]:.2f}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def write_inflow_history(path, weeks: list[InflowWeek]) -> None:
    n = weeks[0].values.shape[0] if weeks else 15
    lines = ["date," + ",".join(f"plant_{k}" for k in range(1, n + 1))]
    for w in weeks:
        for d in range(7):
            day = w.start + dt.timedelta(days=d)
            vals = ",".join(f"{v:.3f}" for v in w.values[:, d])
            lines.append(f"{day.isoformat()},{vals}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


# ---- synthetic profiles ------------------------------------------------------

def _daily_bump(hours: np.ndarray) -> np.ndarray:
    # morning and evening demand peaks
    return np.exp(-((hours - 8.0) / 2.5) ** 2) + np.exp(-((hours - 19.0) / 2.5) ** 2)


def synthetic_price_mean(month: int, base: float = 30.0,
                         seasonal_amp: float = 12.0,
                         daily_amp: float = 6.0) -> np.ndarray:
    """Expected hourly price curve of the synthetic generator for a month."""
    hours = np.arange(24.0)
    level = base + seasonal_amp * np.cos(2.0 * np.pi * (month - 1) / 12.0)
    return level + daily_amp * _daily_bump(hours)


def synthetic_price_days(seed: int, n_days: int,
                         start: dt.date = dt.date(2022, 1, 1),
                         base: float = 30.0, seasonal_amp: float = 12.0,
                         daily_amp: float = 6.0,
                         noise: float = 2.0) -> list[PriceDay]:
    """Seasonal winter-high/summer-low price history with daily peaks."""
    rng = seeds.stream(seed, seeds.SYNTH_DATA, 1)
    out = []
    for k in range(n_days):
        day = start + dt.timedelta(days=k)
        mean = synthetic_price_mean(day.month, base, seasonal_amp, daily_amp)
        vals = np.round(np.maximum(mean + rng.normal(0.0, noise, 24), 0.01), 2)
        out.append(PriceDay(date=day, values=vals))
    return out


def synthetic_inflow_mean(week: int, n_plants: int = 15,
                          melt: float = 1.5) -> np.ndarray:
    """Expected daily inflow per plant for an ISO week: base level per plant
    amplified by a spring-flood pulse around week 18."""
    levels = 10.0 + 6.0 * np.arange(n_plants)
    pulse = 1.0 + melt * np.exp(-((week - 18.0) / 5.0) ** 2)
    return levels * pulse


def synthetic_inflow_weeks(seed: int, n_weeks: int, n_plants: int = 15,
                           start: dt.date = dt.date(2022, 1, 3),
                           melt: float = 1.5, noise: float = 0.2,
                           pair_noise: float = 0.05) -> list[InflowWeek]:
    """Spring-flood inflow history.  Plants 1 and 2 share their noise
    component (idiosyncratic scale `pair_noise`), the rest are independent."""
    rng = seeds.stream(seed, seeds.SYNTH_DATA, 2)
    out = []
    for k in range(n_weeks):
        day0 = start + dt.timedelta(days=7 * k)
        mean = synthetic_inflow_mean(_iso_week(day0), n_plants, melt)
        vals = np.empty((n_plants, 7))
        for d in range(7):
            eps = rng.normal(0.0, 1.0, n_plants)
            factor = 1.0 + noise * eps
            if n_plants >= 2:
                shared = rng.normal(0.0, 1.0)
                factor[0] = 1.0 + noise * shared + pair_noise * eps[0]
                factor[1] = 1.0 + noise * shared + pair_noise * eps[1]
            vals[:, d] = mean * factor
        out.append(InflowWeek(start=day0, values=np.round(np.maximum(vals, 0.0), 3)))
    return out
