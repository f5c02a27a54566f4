"""Operator command line: synthetic data, training, water values, bidding runs.

Commands form a pipeline over a shared run directory:

    synth-data -> train -> water-value -> solve / saa -> report

Every command resolves a RunConfig from flags plus an optional ``--config``
file (``key = value`` lines under ``[section]`` headers; flags win), writes its
artifacts plus ``config_echo.cfg`` and ``manifest.json`` into ``--out``, and
exits 0 on success, 2 on configuration errors, 3 on solver failures, 4 on bad
data.  All randomness is derived from the mandatory ``--seed``; re-running a
command with the same configuration reproduces every output byte for byte.
"""

from __future__ import annotations

import argparse
import calendar
import dataclasses
import datetime as dt
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import report, seeds
from .datasets import (DataError, ingest_inflow_history, ingest_price_history,
                       synthetic_inflow_weeks, synthetic_price_days,
                       write_inflow_history, write_price_history)
from .dayahead import day_ahead_family, evaluate_strategy, strategy_from_vector
from .forecasting import (N_PLANTS, ForecastError, InflowForecaster,
                          PriceForecaster, forecast_inflow, forecast_price,
                          generate_price_levels, load_forecaster,
                          save_forecaster, train_inflow_forecaster,
                          train_price_forecaster)
from .hydro import (HydroError, TradeRegulations, daily_scenario,
                    default_regulations, load_system, load_water_value,
                    save_strategy, save_strategy_csv, save_system,
                    save_water_value, synthetic_cascade)
from .lp import LpError
from .lshaped import LshapedError, LshapedOptions, solve_lshaped
from .saa import SaaConfig, SaaError, result_to_dict, run_saa
from .weekahead import forecast_weekly_sampler, solve_water_value

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_DATA = 4

DEFAULT_YEARS = 5
DEFAULT_PLANTS = 15
DEFAULT_PRICE_EPOCHS = 150
DEFAULT_INFLOW_EPOCHS = 100
DEFAULT_WV_SCENARIOS = 40
DEFAULT_SCENARIOS = 50
DEFAULT_LEVEL_SAMPLES = 200
DEFAULT_PENALTY_GRID = (0.0, 10.0, 50.0, 100.0, 500.0, 1000.0)

_NEEDS_DATE = {"water-value", "solve", "saa"}
_NEEDS_PATHS = {
    "synth-data": (),
    "train": ("prices", "inflows"),
    "water-value": ("system", "price_weights", "inflow_weights"),
    "solve": ("system", "price_weights", "inflow_weights", "water_value"),
    "saa": ("system", "price_weights", "inflow_weights", "water_value"),
    "report": (),
}
_PATH_KEYS = ("system", "prices", "inflows", "price_weights",
              "inflow_weights", "water_value", "run")


class ConfigError(Exception):
    """Unusable configuration: missing/invalid keys, absent input paths."""


# ---- configuration ---------------------------------------------------------

@dataclasses.dataclass(frozen=True)
class RunConfig:
    """Fully resolved settings for one command invocation."""

    command: str
    out_dir: str
    seed: int
    threads: int
    date: dt.date | None
    paths: dict[str, str | None]
    years: int
    plants: int
    price_epochs: int
    inflow_epochs: int
    wv_scenarios: int
    wv_partitions: int | None
    scenarios: int
    level_samples: int
    saa: SaaConfig
    regulations: TradeRegulations
    months: tuple[int, ...]
    penalties: tuple[float, ...]


def parse_config_text(text: str, source: str = "<config>") -> dict[str, dict[str, str]]:
    """Parse ``key = value`` lines grouped by ``[section]`` headers.

    Blank lines and ``#`` comments are ignored.  Unknown keys are permitted
    (a config echo carries informational entries); malformed lines are not.
    """
    sections: dict[str, dict[str, str]] = {}
    current = sections.setdefault("", {})
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1].strip()
            if not name:
                raise ConfigError(f"{source}: line {lineno}: empty section name")
            current = sections.setdefault(name, {})
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"{source}: line {lineno}: expected 'key = value', got {line!r}")
        current[key.strip()] = value.strip()
    return sections


def _parse_config_file(path: str) -> dict[str, dict[str, str]]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    return parse_config_text(text, source=path)


def _cast_date(raw: str) -> dt.date:
    try:
        return dt.date.fromisoformat(raw)
    except ValueError:
        raise ValueError(f"expected a YYYY-MM-DD date, got {raw!r}") from None


def _cast_int_list(raw: str) -> tuple[int, ...]:
    items = [s.strip() for s in raw.split(",") if s.strip()]
    return tuple(int(s) for s in items)


def _cast_float_list(raw: str) -> tuple[float, ...]:
    items = [s.strip() for s in raw.split(",") if s.strip()]
    return tuple(float(s) for s in items)


def build_config(args: argparse.Namespace) -> RunConfig:
    """Merge flags over the optional config file and validate the result."""
    sections = _parse_config_file(args.config) if getattr(args, "config", None) else {}

    def pick(section: str, key: str, cast, default=None):
        flag = getattr(args, key, None)
        if flag is not None:
            return flag
        raw = sections.get(section, {}).get(key)
        if raw is None:
            return default
        try:
            return cast(raw)
        except ValueError as exc:
            raise ConfigError(f"[{section}] {key}: {exc}") from None

    command = args.command
    out_dir = pick("run", "out", str)
    if out_dir is None:
        raise ConfigError("an output directory is required; pass --out or set [run] out")
    seed = pick("run", "seed", int)
    if seed is None:
        raise ConfigError("a seed is required; pass --seed or set [run] seed "
                          "(there is no wall-clock default)")
    if seed < 0:
        raise ConfigError(f"seed must be non-negative, got {seed}")
    threads = pick("run", "threads", int, 1)
    if threads < 1:
        raise ConfigError(f"threads must be >= 1, got {threads}")
    date = pick("run", "date", _cast_date)
    if command in _NEEDS_DATE and date is None:
        raise ConfigError(f"'{command}' needs a trading date; pass --date or set [run] date")

    paths = {key: pick("paths", key, str) for key in _PATH_KEYS}
    for key in _NEEDS_PATHS[command]:
        flag = "--" + key.replace("_", "-")
        if paths[key] is None:
            raise ConfigError(f"'{command}' needs a {key} path; pass {flag} or set [paths] {key}")
        if not Path(paths[key]).exists():
            raise ConfigError(f"[paths] {key}: no such file: {paths[key]}")

    years = pick("synth", "years", int, DEFAULT_YEARS)
    plants = pick("synth", "plants", int, DEFAULT_PLANTS)
    if years < 1:
        raise ConfigError(f"years must be >= 1, got {years}")
    if not 1 <= plants <= N_PLANTS:
        raise ConfigError(f"plants must lie in 1..{N_PLANTS}, got {plants}")

    price_epochs = pick("train", "price_epochs", int, DEFAULT_PRICE_EPOCHS)
    inflow_epochs = pick("train", "inflow_epochs", int, DEFAULT_INFLOW_EPOCHS)
    wv_scenarios = pick("watervalue", "scenarios", int, DEFAULT_WV_SCENARIOS)
    wv_partitions = pick("watervalue", "partitions", int)
    scenarios = pick("solve", "scenarios", int, DEFAULT_SCENARIOS)
    level_samples = pick("solve", "level_samples", int, DEFAULT_LEVEL_SAMPLES)
    for name, value, least in (("price_epochs", price_epochs, 1),
                               ("inflow_epochs", inflow_epochs, 1),
                               ("watervalue scenarios", wv_scenarios, 1),
                               ("solve scenarios", scenarios, 1),
                               ("level_samples", level_samples, 2)):
        if value < least:
            raise ConfigError(f"{name} must be >= {least}, got {value}")
    if wv_partitions is not None and wv_partitions < 1:
        raise ConfigError(f"partitions must be >= 1, got {wv_partitions}")

    saa_kwargs = {}
    for key, cast in (("n0", int), ("growth", int), ("m_batches", int),
                      ("t_batches", int), ("n_eval", int), ("n_eev", int),
                      ("alpha", float), ("tolerance", float), ("n_cap", int)):
        value = pick("saa", key, cast)
        if value is not None:
            saa_kwargs[key] = value
    try:
        saa_cfg = SaaConfig(threads=threads, **saa_kwargs)
    except (SaaError, ValueError) as exc:
        raise ConfigError(f"[saa] {exc}") from None

    regs_kwargs = {}
    for key in ("block_limit", "cap_factor", "peak_penalty", "offpeak_penalty"):
        value = pick("regulations", key, float)
        if value is not None:
            regs_kwargs[key] = value
    try:
        regulations = default_regulations(**regs_kwargs)
    except HydroError as exc:
        raise ConfigError(f"[regulations] {exc}") from None

    months = pick("sweep", "months", _cast_int_list, ())
    for m in months:
        if not 1 <= m <= 12:
            raise ConfigError(f"[sweep] months: month {m} outside 1..12")
    penalties = pick("sweep", "penalties", _cast_float_list)
    if penalties is None:
        penalties = DEFAULT_PENALTY_GRID if getattr(args, "penalty_sweep", False) else ()
    for pct in penalties:
        if pct < 0:
            raise ConfigError(f"[sweep] penalties: penalty {pct:g}% is negative")

    return RunConfig(command=command, out_dir=out_dir, seed=seed, threads=threads,
                     date=date, paths=paths, years=years, plants=plants,
                     price_epochs=price_epochs, inflow_epochs=inflow_epochs,
                     wv_scenarios=wv_scenarios, wv_partitions=wv_partitions,
                     scenarios=scenarios, level_samples=level_samples,
                     saa=saa_cfg, regulations=regulations,
                     months=months, penalties=penalties)


def config_echo(cfg: RunConfig) -> str:
    """Render the resolved configuration as a reloadable config file."""
    lines = ["# resolved configuration; reuse with --config", "", "[run]",
             f"command = {cfg.command}",
             f"out = {cfg.out_dir}",
             f"seed = {cfg.seed}",
             f"threads = {cfg.threads}"]
    if cfg.date is not None:
        lines.append(f"date = {cfg.date.isoformat()}")
    set_paths = {k: v for k, v in cfg.paths.items() if v is not None}
    if set_paths:
        lines += ["", "[paths]"]
        lines += [f"{k} = {v}" for k, v in set_paths.items()]
    lines += ["", "[synth]",
              f"years = {cfg.years}",
              f"plants = {cfg.plants}",
              "", "[train]",
              f"price_epochs = {cfg.price_epochs}",
              f"inflow_epochs = {cfg.inflow_epochs}",
              "", "[watervalue]",
              f"scenarios = {cfg.wv_scenarios}"]
    if cfg.wv_partitions is not None:
        lines.append(f"partitions = {cfg.wv_partitions}")
    lines += ["", "[solve]",
              f"scenarios = {cfg.scenarios}",
              f"level_samples = {cfg.level_samples}"]
    s = cfg.saa
    lines += ["", "[saa]",
              f"n0 = {s.n0}", f"growth = {s.growth}",
              f"m_batches = {s.m_batches}", f"t_batches = {s.t_batches}",
              f"n_eval = {s.n_eval}", f"n_eev = {s.n_eev}",
              f"alpha = {s.alpha!r}", f"tolerance = {s.tolerance!r}",
              f"n_cap = {s.n_cap}"]
    r = cfg.regulations
    lines += ["", "[regulations]",
              f"block_limit = {r.block_limit!r}",
              f"cap_factor = {r.cap_factor!r}",
              f"peak_penalty = {r.peak_penalty!r}",
              f"offpeak_penalty = {r.offpeak_penalty!r}"]
    sweep = []
    if cfg.months:
        sweep.append("months = " + ",".join(str(m) for m in cfg.months))
    if cfg.penalties:
        sweep.append("penalties = " + ",".join(format(p, "g") for p in cfg.penalties))
    if sweep:
        lines += ["", "[sweep]"] + sweep
    return "\n".join(lines) + "\n"


# ---- shared helpers --------------------------------------------------------

def _write_text(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8")


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _load_model(cfg: RunConfig):
    """Load system + forecasters + water value and cross-check their shapes."""
    system = load_system(cfg.paths["system"])
    price_f = load_forecaster(cfg.paths["price_weights"])
    inflow_f = load_forecaster(cfg.paths["inflow_weights"])
    wv = load_water_value(cfg.paths["water_value"])
    if not isinstance(price_f, PriceForecaster):
        raise DataError(f"{cfg.paths['price_weights']} does not hold a price forecaster")
    if not isinstance(inflow_f, InflowForecaster):
        raise DataError(f"{cfg.paths['inflow_weights']} does not hold an inflow forecaster")
    n = len(system.plants)
    if n > N_PLANTS:
        raise DataError(f"system has {n} plants but inflow forecasts cover {N_PLANTS}")
    width = len(wv.cuts[0].gradient)
    if width != n:
        raise DataError(f"water value spans {width} plants, system has {n}")
    return system, price_f, inflow_f, wv


def _representative(date: dt.date, month: int) -> tuple[int, int]:
    """(iso week, weekday index) of the given date transplanted into month."""
    rep = date.replace(month=month, day=min(date.day, 28))
    week = rep.isocalendar()[1]
    return min(week, 52), rep.isoweekday() - 1


def _scenario_sampler(price_f, inflow_f, month, week, day_index, n_plants):
    def sample(rng: np.random.Generator):
        prices = forecast_price(price_f, month, rng)
        inflows = forecast_inflow(inflow_f, week, rng)[:n_plants, day_index]
        return daily_scenario(prices, inflows)
    return sample


def _save_strategy_files(out: Path, stem: str, strategy, regs) -> list[str]:
    save_strategy(str(out / f"{stem}.json"), strategy, regs)
    save_strategy_csv(str(out / f"{stem}.csv"), strategy, regs)
    return [f"{stem}.json", f"{stem}.csv"]


# ---- commands ---------------------------------------------------------------

def cmd_synth_data(cfg: RunConfig) -> list[str]:
    out = Path(cfg.out_dir)
    days = synthetic_price_days(cfg.seed, n_days=365 * cfg.years)
    # Inflow histories always carry all 15 gauge columns; --plants only sizes
    # the cascade written to system.json.
    weeks = synthetic_inflow_weeks(cfg.seed, n_weeks=52 * cfg.years)
    write_price_history(str(out / "prices.csv"), days)
    write_inflow_history(str(out / "inflows.csv"), weeks)
    save_system(str(out / "system.json"), synthetic_cascade(cfg.plants))
    return ["prices.csv", "inflows.csv", "system.json"]


def cmd_train(cfg: RunConfig) -> list[str]:
    out = Path(cfg.out_dir)
    days = ingest_price_history(cfg.paths["prices"])
    weeks = ingest_inflow_history(cfg.paths["inflows"])
    price_f = train_price_forecaster(days, seed=cfg.seed, epochs=cfg.price_epochs)
    inflow_f = train_inflow_forecaster(weeks, seed=cfg.seed, epochs=cfg.inflow_epochs)
    save_forecaster(str(out / "price.weights"), price_f)
    save_forecaster(str(out / "inflow.weights"), inflow_f)
    _write_text(out / "price_training.csv", price_f.report.to_csv())
    _write_text(out / "inflow_training.csv", inflow_f.report.to_csv())
    return ["price.weights", "inflow.weights", "price_training.csv", "inflow_training.csv"]


def cmd_water_value(cfg: RunConfig) -> list[str]:
    out = Path(cfg.out_dir)
    system = load_system(cfg.paths["system"])
    price_f = load_forecaster(cfg.paths["price_weights"])
    inflow_f = load_forecaster(cfg.paths["inflow_weights"])
    if not isinstance(price_f, PriceForecaster):
        raise DataError(f"{cfg.paths['price_weights']} does not hold a price forecaster")
    if not isinstance(inflow_f, InflowForecaster):
        raise DataError(f"{cfg.paths['inflow_weights']} does not hold an inflow forecaster")
    week, _ = _representative(cfg.date, cfg.date.month)
    sampler = forecast_weekly_sampler(price_f, inflow_f, cfg.date.month, week,
                                      n_plants=len(system.plants))
    wv = solve_water_value(system, sampler, cfg.wv_scenarios, cfg.wv_partitions,
                           rng=seeds.stream(cfg.seed, seeds.SCENARIOS),
                           options=LshapedOptions(threads=cfg.threads))
    save_water_value(str(out / "water_value.json"), wv)
    return ["water_value.json"]


def cmd_solve(cfg: RunConfig) -> list[str]:
    out = Path(cfg.out_dir)
    system, price_f, inflow_f, wv = _load_model(cfg)
    month = cfg.date.month
    week, day_index = _representative(cfg.date, month)
    levels = generate_price_levels(price_f, month, cfg.level_samples,
                                   rng=seeds.stream(cfg.seed, seeds.PRICE_LEVELS))
    sampler = _scenario_sampler(price_f, inflow_f, month, week, day_index,
                                len(system.plants))
    rng = seeds.stream(cfg.seed, seeds.SCENARIOS)
    scenarios = [sampler(rng) for _ in range(cfg.scenarios)]
    regs = cfg.regulations
    family = day_ahead_family(system, regs, levels, wv)
    result = solve_lshaped(family(scenarios), LshapedOptions(threads=cfg.threads))
    strategy = strategy_from_vector(result.x, n_levels=levels.levels.shape[0],
                                    n_blocks=len(regs.blocks))
    files = _save_strategy_files(out, "strategy", strategy, regs)

    rows = ["scenario,objective,net_profit,intraday,stored_value,shortage_total,surplus_total"]
    for i, sc in enumerate(scenarios):
        o = evaluate_strategy(system, regs, levels, wv, sc, strategy)
        rows.append(",".join([str(i), report.fmt(o.objective), report.fmt(o.net_profit),
                              report.fmt(o.intraday), report.fmt(o.stored_value),
                              report.fmt(o.shortage.sum()), report.fmt(o.surplus.sum())]))
    _write_text(out / "outcomes.csv", "\n".join(rows) + "\n")
    _write_json(out / "solve_summary.json", {
        "month": month,
        "n_scenarios": len(scenarios),
        "objective": result.objective,
        "iterations": result.iterations,
        "n_cuts": len(result.cuts),
    })
    return files + ["outcomes.csv", "solve_summary.json"]


def cmd_saa(cfg: RunConfig) -> list[str]:
    out = Path(cfg.out_dir)
    system, price_f, inflow_f, wv = _load_model(cfg)
    n_plants = len(system.plants)
    months = cfg.months or (cfg.date.month,)
    files: list[str] = []
    month_docs = []
    for m in months:
        week, day_index = _representative(cfg.date, m)
        levels = generate_price_levels(price_f, m, cfg.level_samples,
                                       rng=seeds.stream(cfg.seed, seeds.PRICE_LEVELS, m))
        sampler = _scenario_sampler(price_f, inflow_f, m, week, day_index, n_plants)
        family = day_ahead_family(system, cfg.regulations, levels, wv)
        trace_name = f"saa_trace_{m:02d}.csv"
        result = run_saa(family, sampler, cfg.saa,
                         seed=seeds.derive(cfg.seed, seeds.SCENARIOS, m),
                         trace_path=str(out / trace_name))
        files.append(trace_name)
        month_docs.append({"month": m, **result_to_dict(result)})
        if m == months[0]:
            strategy = strategy_from_vector(result.candidate,
                                            n_levels=levels.levels.shape[0],
                                            n_blocks=len(cfg.regulations.blocks))
            files += _save_strategy_files(out, "saa_strategy", strategy, cfg.regulations)
    _write_json(out / "saa_result.json", {"months": month_docs})
    files.append("saa_result.json")

    if cfg.penalties:
        m = cfg.date.month
        week, day_index = _representative(cfg.date, m)
        levels = generate_price_levels(price_f, m, cfg.level_samples,
                                       rng=seeds.stream(cfg.seed, seeds.PRICE_LEVELS, m))
        sampler = _scenario_sampler(price_f, inflow_f, m, week, day_index, n_plants)
        sweep_docs = []
        for k, pct in enumerate(cfg.penalties):
            regs_k = dataclasses.replace(cfg.regulations,
                                         peak_penalty=pct / 100.0,
                                         offpeak_penalty=pct / 100.0)
            family_k = day_ahead_family(system, regs_k, levels, wv)
            result_k = run_saa(family_k, sampler, cfg.saa,
                               seed=seeds.derive(cfg.seed, seeds.PENALTY_SWEEP, k))
            sweep_docs.append({"penalty_pct": pct, **result_to_dict(result_k)})
        _write_json(out / "penalty_sweep.json", {"penalties": sweep_docs})
        files.append("penalty_sweep.json")
    return files


def _interval_pair(ci_doc) -> tuple[float, float] | None:
    if ci_doc is None:
        return None
    return (ci_doc["lo"], ci_doc["hi"])


def cmd_report(cfg: RunConfig) -> list[str]:
    out = Path(cfg.out_dir)
    run_dir = Path(cfg.paths["run"] or cfg.out_dir)
    files: list[str] = []

    saa_path = run_dir / "saa_result.json"
    if saa_path.exists():
        doc = json.loads(saa_path.read_text(encoding="utf-8"))
        bands = [report.Band(calendar.month_abbr[row["month"]],
                             {"VRP": _interval_pair(row["vrp_ci"]),
                              "EEV": _interval_pair(row["eev_ci"]),
                              "VSS": _interval_pair(row["vss_ci"])})
                 for row in doc["months"]]
        _write_text(out / "monthly.svg",
                    report.render_interval_chart(bands, "Monthly VRP, EEV and VSS"))
        _write_text(out / "monthly.csv", report.bands_to_csv(bands, label_header="month"))
        files += ["monthly.svg", "monthly.csv"]

    sweep_path = run_dir / "penalty_sweep.json"
    if sweep_path.exists():
        doc = json.loads(sweep_path.read_text(encoding="utf-8"))
        bands = [report.Band(format(row["penalty_pct"], "g") + "%",
                             {"VSS": _interval_pair(row["vss_ci"])})
                 for row in doc["penalties"]]
        _write_text(out / "penalty.svg",
                    report.render_interval_chart(bands, "VSS under scaled imbalance penalties"))
        _write_text(out / "penalty.csv", report.bands_to_csv(bands, label_header="penalty"))
        files += ["penalty.svg", "penalty.csv"]

    for stem in ("strategy", "saa_strategy"):
        strat_path = run_dir / f"{stem}.json"
        if strat_path.exists():
            doc = json.loads(strat_path.read_text(encoding="utf-8"))
            _write_text(out / f"{stem}.svg",
                        report.render_strategy_chart(doc, "Day-ahead order strategy"))
            _write_text(out / f"{stem}_volumes.csv", report.strategy_report_csv(doc))
            files += [f"{stem}.svg", f"{stem}_volumes.csv"]

    outcomes_path = run_dir / "outcomes.csv"
    if outcomes_path.exists():
        lines = outcomes_path.read_text(encoding="utf-8").splitlines()
        header = lines[0].split(",")
        data = np.array([[float(v) for v in line.split(",")] for line in lines[1:]])
        if data.size:
            rows = ["component,mean"]
            for j, name in enumerate(header[1:], start=1):
                rows.append(f"{name},{report.fmt(data[:, j].mean())}")
            _write_text(out / "decomposition.csv", "\n".join(rows) + "\n")
            files.append("decomposition.csv")

    if not files:
        raise ConfigError(f"nothing to report in {run_dir}: expected saa_result.json, "
                          "penalty_sweep.json, strategy.json, or outcomes.csv")
    return files


_COMMANDS = {
    "synth-data": cmd_synth_data,
    "train": cmd_train,
    "water-value": cmd_water_value,
    "solve": cmd_solve,
    "saa": cmd_saa,
    "report": cmd_report,
}


# ---- entry point -------------------------------------------------------------

def _date_flag(raw: str) -> dt.date:
    try:
        return _cast_date(raw)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _int_list_flag(raw: str) -> tuple[int, ...]:
    try:
        return _cast_int_list(raw)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {raw!r}") from None


def _float_list_flag(raw: str) -> tuple[float, ...]:
    try:
        return _cast_float_list(raw)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {raw!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hydrobid",
        description="Stochastic day-ahead bidding pipeline for a hydropower cascade.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    def common(sp: argparse.ArgumentParser) -> None:
        sp.add_argument("--config", metavar="FILE",
                        help="config file ('key = value' under [section] headers); flags override it")
        sp.add_argument("--out", metavar="DIR", help="output directory (required)")
        sp.add_argument("--seed", type=int, metavar="N",
                        help="root seed; required, every random draw derives from it")
        sp.add_argument("--threads", type=int, metavar="N", help="worker thread cap (default 1)")
        sp.add_argument("--date", type=_date_flag, metavar="YYYY-MM-DD",
                        help="trading date; sets the month/week seasonal inputs")

    sp = sub.add_parser("synth-data", help="write a synthetic price/inflow/system dataset")
    common(sp)
    sp.add_argument("--years", type=int, metavar="N",
                    help=f"calendar years of history (default {DEFAULT_YEARS})")
    sp.add_argument("--plants", type=int, metavar="N",
                    help=f"cascade size for system.json (default {DEFAULT_PLANTS})")

    sp = sub.add_parser("train", help="train price and inflow forecasters")
    common(sp)
    sp.add_argument("--prices", metavar="CSV", help="hourly price history")
    sp.add_argument("--inflows", metavar="CSV", help="daily inflow history")
    sp.add_argument("--price-epochs", type=int, metavar="N",
                    help=f"price training epochs (default {DEFAULT_PRICE_EPOCHS})")
    sp.add_argument("--inflow-epochs", type=int, metavar="N",
                    help=f"inflow training epochs (default {DEFAULT_INFLOW_EPOCHS})")

    def model_flags(sp: argparse.ArgumentParser, water_value: bool) -> None:
        sp.add_argument("--system", metavar="JSON", help="hydro system description")
        sp.add_argument("--price-weights", metavar="FILE", help="trained price forecaster")
        sp.add_argument("--inflow-weights", metavar="FILE", help="trained inflow forecaster")
        if water_value:
            sp.add_argument("--water-value", metavar="JSON", help="end-of-day water value cuts")

    sp = sub.add_parser("water-value", help="estimate end-of-day water values for the date's week")
    common(sp)
    model_flags(sp, water_value=False)
    sp.add_argument("--scenarios", type=int, metavar="N",
                    help=f"weekly scenarios (default {DEFAULT_WV_SCENARIOS})")
    sp.add_argument("--partitions", type=int, metavar="N",
                    help="scenario groups sharing a cut (default: square root of --scenarios)")

    def regulation_flags(sp: argparse.ArgumentParser) -> None:
        sp.add_argument("--block-limit", type=float, metavar="MWH", help="per-block volume limit")
        sp.add_argument("--cap-factor", type=float, metavar="X", help="bid cap as a multiple of capacity")
        sp.add_argument("--peak-penalty", type=float, metavar="X", help="peak imbalance penalty factor")
        sp.add_argument("--offpeak-penalty", type=float, metavar="X", help="off-peak imbalance penalty factor")

    sp = sub.add_parser("solve", help="solve one day-ahead instance and report its strategy")
    common(sp)
    model_flags(sp, water_value=True)
    regulation_flags(sp)
    sp.add_argument("--scenarios", type=int, metavar="N",
                    help=f"sampled scenarios (default {DEFAULT_SCENARIOS})")
    sp.add_argument("--level-samples", type=int, metavar="N",
                    help=f"price curves behind the bid levels (default {DEFAULT_LEVEL_SAMPLES})")

    sp = sub.add_parser("saa", help="run the sequential sampling procedure, optionally over months")
    common(sp)
    model_flags(sp, water_value=True)
    regulation_flags(sp)
    sp.add_argument("--level-samples", type=int, metavar="N",
                    help=f"price curves behind the bid levels (default {DEFAULT_LEVEL_SAMPLES})")
    sp.add_argument("--months", type=_int_list_flag, metavar="M,M,..",
                    help="months to sweep (default: the date's month)")
    sp.add_argument("--penalty-sweep", action="store_true",
                    help="rerun the date's month over the penalty grid "
                         + ",".join(format(p, "g") for p in DEFAULT_PENALTY_GRID) + " (percent)")
    sp.add_argument("--penalties", type=_float_list_flag, metavar="P,P,..",
                    help="custom penalty grid in percent (implies --penalty-sweep)")
    for key in ("n0", "growth", "m_batches", "t_batches", "n_eval", "n_eev", "n_cap"):
        sp.add_argument("--" + key.replace("_", "-"), type=int, metavar="N",
                        help=f"sampling control: {key}")
    sp.add_argument("--alpha", type=float, metavar="A", help="per-interval significance level")
    sp.add_argument("--tolerance", type=float, metavar="T", help="relative gap tolerance")

    sp = sub.add_parser("report", help="render charts and tables from a run directory")
    common(sp)
    sp.add_argument("--run", metavar="DIR", help="run directory to read (default: --out)")

    return parser


def _manifest(cfg: RunConfig, files: list[str]) -> dict:
    out = Path(cfg.out_dir)
    entries = {}
    for name in sorted(set(files)):
        data = (out / name).read_bytes()
        entries[name] = {"bytes": len(data),
                         "sha256": hashlib.sha256(data).hexdigest()}
    return {"command": cfg.command, "seed": cfg.seed, "files": entries}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = build_config(args)
        out = Path(cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        files = _COMMANDS[cfg.command](cfg)
        _write_text(out / "config_echo.cfg", config_echo(cfg))
        files.append("config_echo.cfg")
        _write_json(out / "manifest.json", _manifest(cfg, files))
        return EXIT_OK
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (LshapedError, SaaError, LpError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (DataError, ForecastError, HydroError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
