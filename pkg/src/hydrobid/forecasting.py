"""Noise-driven recurrent forecasters for day-ahead prices and weekly inflows.

Both forecasters share one shape: an initializer network maps Gaussian noise
plus a seasonal indicator to the first value of the sequence, and a sequence
generator rolls the curve forward by feeding each output back in alongside
the season.  Dropout stays active while sampling, so the networks are
stochastic samplers rather than point predictors.  No lagged history enters
anywhere: the inputs are noise and calendar position only.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import nn, seeds


class ForecastError(Exception):
    pass


HOURS = 24
N_PLANTS = 15
WEEK_DAYS = 7
LEVEL_MULTIPLES = (-2.0, -1.0, 0.0, 1.0, 2.0)
_EPS_SPACING = 0.01  # EUR, replaces a degenerate hourly std


# ---- architectures ------------------------------------------------------

def _price_initializer(rng) -> nn.NetworkChain:
    return nn.NetworkChain([
        nn.xavier_dense(rng, 2, 128, "identity"),
        nn.DropoutLayer(0.5),
        nn.xavier_dense(rng, 128, 128, "relu"),
        nn.DropoutLayer(0.5),
        nn.xavier_dense(rng, 128, 128, "relu"),
        nn.DropoutLayer(0.5),
        nn.xavier_dense(rng, 128, 1, "identity"),
    ])


def _price_generator(rng) -> nn.NetworkChain:
    return nn.NetworkChain([
        nn.orthogonal_gru(rng, 3, 64, "identity"),
        nn.DropoutLayer(0.4),
        nn.xavier_dense(rng, 64, 64, "relu"),
        nn.xavier_dense(rng, 64, 1, "identity"),
    ])


def _inflow_initializer(rng) -> nn.NetworkChain:
    return nn.NetworkChain([
        nn.xavier_dense(rng, 16, 128, "identity"),
        nn.DropoutLayer(0.5),
        nn.xavier_dense(rng, 128, 128, "relu"),
        nn.DropoutLayer(0.5),
        nn.xavier_dense(rng, 128, 128, "relu"),
        nn.DropoutLayer(0.5),
        nn.xavier_dense(rng, 128, N_PLANTS, "identity"),
    ])


def _inflow_generator(rng) -> nn.NetworkChain:
    # relu follows each GRU; dropout and relu commute (the kept-mask scaling
    # is positive), so the relu is folded into the GRU output activation
    return nn.NetworkChain([
        nn.orthogonal_gru(rng, 17, 128, "relu"),
        nn.DropoutLayer(0.4),
        nn.orthogonal_gru(rng, 128, 128, "relu"),
        nn.xavier_dense(rng, 128, N_PLANTS, "identity"),
    ])


@dataclass
class PriceForecaster:
    initializer: nn.NetworkChain
    generator: nn.NetworkChain
    offset: float = 0.0
    scale: float = 1.0
    trained: bool = False
    report: nn.TrainingReport | None = field(default=None, repr=False)


@dataclass
class InflowForecaster:
    initializer: nn.NetworkChain
    generator: nn.NetworkChain
    offset: np.ndarray = None
    scale: np.ndarray = None
    trained: bool = False
    report: nn.TrainingReport | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.offset is None:
            self.offset = np.zeros(N_PLANTS)
        if self.scale is None:
            self.scale = np.ones(N_PLANTS)


def new_price_forecaster(seed: int) -> PriceForecaster:
    rng = seeds.stream(seed, seeds.PRICE_MODEL, seeds.INIT_WEIGHTS)
    return PriceForecaster(_price_initializer(rng), _price_generator(rng))


def new_inflow_forecaster(seed: int) -> InflowForecaster:
    rng = seeds.stream(seed, seeds.INFLOW_MODEL, seeds.INIT_WEIGHTS)
    return InflowForecaster(_inflow_initializer(rng), _inflow_generator(rng))


# ---- sampling ------------------------------------------------------------

def _require_trained(f) -> None:
    if not f.trained:
        raise ForecastError("forecaster has no trained or loaded weights; "
                            "train it or load a weights file first")


def forecast_price(f: PriceForecaster, month: int, rng: np.random.Generator
                   ) -> np.ndarray:
    """Sample one 24-hour price curve for a month (EUR/MWh, clamped at 0)."""
    _require_trained(f)
    if not 1 <= month <= 12:
        raise ForecastError(f"month out of range: {month}")
    f.initializer.set_rng(rng)
    f.generator.set_rng(rng)
    nn.reset_state(f.initializer)
    nn.reset_state(f.generator)
    m = month / 12.0
    noise = rng.normal()
    x = nn.forward(f.initializer, np.array([noise, m]), "train")[0]
    values = [x]
    for t in range(1, HOURS):
        x = nn.forward(f.generator, np.array([x, m, t / 23.0]), "train")[0]
        values.append(x)
    nn.reset_state(f.initializer)
    nn.reset_state(f.generator)
    return np.maximum(np.array(values) * f.scale + f.offset, 0.0)


def forecast_inflow(f: InflowForecaster, week: int, rng: np.random.Generator
                    ) -> np.ndarray:
    """Sample one 15-plant x 7-day inflow matrix for an ISO week, clamped at 0."""
    _require_trained(f)
    if not 1 <= week <= 52:
        raise ForecastError(f"week out of range: {week}")
    f.initializer.set_rng(rng)
    f.generator.set_rng(rng)
    nn.reset_state(f.initializer)
    nn.reset_state(f.generator)
    w = week / 52.0
    noise = rng.normal(0.0, 1.0, N_PLANTS)
    x = nn.forward(f.initializer, np.concatenate([noise, [w]]), "train")
    cols = [x]
    for day in range(2, WEEK_DAYS + 1):
        x = nn.forward(f.generator, np.concatenate([x, [w, day / 7.0]]), "train")
        cols.append(x)
    nn.reset_state(f.initializer)
    nn.reset_state(f.generator)
    raw = np.column_stack(cols)  # plants x days
    return np.maximum(raw * f.scale[:, None] + f.offset[:, None], 0.0)


# ---- price levels ------------------------------------------------------------

@dataclass
class PriceLevels:
    """Five strictly increasing price levels per hour (5 x 24)."""
    levels: np.ndarray

    def block_prices(self, blocks) -> np.ndarray:
        """Average each level over the hours of each block: (5 x n_blocks)."""
        out = np.empty((len(LEVEL_MULTIPLES), len(blocks)))
        for j, hours in enumerate(blocks):
            idx = np.asarray(list(hours), dtype=int)
            if idx.size == 0 or idx.min() < 0 or idx.max() >= HOURS:
                raise ForecastError(f"block {j} has hours outside 0-23")
            out[:, j] = self.levels[:, idx].mean(axis=1)
        return out


def levels_from_moments(mu: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    """Levels mu + k*sigma for k in {-2,-1,0,1,2}; a degenerate sigma is
    replaced by a 0.01 EUR spacing so the levels stay strictly increasing."""
    sigma = np.where(sigma > 1e-9, sigma, _EPS_SPACING)
    ks = np.array(LEVEL_MULTIPLES)[:, None]
    return mu[None, :] + ks * sigma[None, :]


def generate_price_levels(f: PriceForecaster, month: int, n_samples: int,
                          rng: np.random.Generator | None = None) -> PriceLevels:
    """Sample n_samples curves and build hourly levels from their moments."""
    if n_samples < 2:
        raise ForecastError("price levels need at least 2 samples")
    if rng is None:
        rng = seeds.stream(0, seeds.PRICE_LEVELS)
    curves = np.array([forecast_price(f, month, rng) for _ in range(n_samples)])
    mu = curves.mean(axis=0)
    sigma = curves.std(axis=0, ddof=1)
    return PriceLevels(levels=levels_from_moments(mu, sigma))


# ---- training ------------------------------------------------------------

def train_price_forecaster(dataset, seed: int = 0, epochs: int = 150,
                           lr: float = 1e-3) -> PriceForecaster:
    """Train initializer + generator on daily price chunks.

    Teacher signals per chunk: the initializer maps (noise, month) toward the
    day's first hour; the generator maps each true hourly value plus season
    to the next hour's value.
    """
    if not dataset:
        raise ForecastError("empty price dataset")
    f = new_price_forecaster(seed)
    values = np.array([d.values for d in dataset])
    f.offset = float(values.mean())
    f.scale = float(values.std()) or 1.0

    noise_rng = seeds.stream(seed, seeds.PRICE_MODEL, seeds.TRAINING)
    chunks = []
    for d in dataset:
        v = (d.values - f.offset) / f.scale
        m = d.month / 12.0
        inputs = np.column_stack([v[:-1], np.full(23, m), np.arange(1, 24) / 23.0])
        chunks.append(nn.TrainingChunk(
            inputs=inputs, targets=v[1:, None],
            init_input=np.array([noise_rng.normal(), m]),
            init_target=v[:1]))
    opts = nn.TrainOptions(epochs=epochs, lr=lr, seed=seed)
    f.report = nn.train((f.initializer, f.generator), chunks, opts)
    f.trained = True
    return f


def train_inflow_forecaster(dataset, seed: int = 0, epochs: int = 100,
                            lr: float = 1e-3) -> InflowForecaster:
    """Train initializer + generator on weekly inflow chunks (15 plants)."""
    if not dataset:
        raise ForecastError("empty inflow dataset")
    shapes = {w.values.shape for w in dataset}
    if shapes != {(N_PLANTS, WEEK_DAYS)}:
        raise ForecastError(f"inflow chunks must be {N_PLANTS}x{WEEK_DAYS}, "
                            f"got {sorted(shapes)}")
    f = new_inflow_forecaster(seed)
    stack = np.array([w.values for w in dataset])  # (W, plants, days)
    f.offset = stack.mean(axis=(0, 2))
    sd = stack.std(axis=(0, 2))
    f.scale = np.where(sd > 0, sd, 1.0)

    noise_rng = seeds.stream(seed, seeds.INFLOW_MODEL, seeds.TRAINING)
    chunks = []
    for wk in dataset:
        v = (wk.values - f.offset[:, None]) / f.scale[:, None]  # plants x 7
        w = wk.week / 52.0
        inputs = np.column_stack([v[:, :-1].T,
                                  np.full(6, w),
                                  np.arange(2, 8) / 7.0])
        chunks.append(nn.TrainingChunk(
            inputs=inputs, targets=v[:, 1:].T,
            init_input=np.concatenate([noise_rng.normal(0.0, 1.0, N_PLANTS), [w]]),
            init_target=v[:, 0]))
    opts = nn.TrainOptions(epochs=epochs, lr=lr, seed=seed)
    f.report = nn.train((f.initializer, f.generator), chunks, opts)
    f.trained = True
    return f


# ---- persistence ---------------------------------------------------------------

_FC_MAGIC = b"HBFC"
_FC_VERSION = 1
_KIND_PRICE, _KIND_INFLOW = 1, 2


def save_forecaster(path, f) -> None:
    """Write a forecaster (weights + normalization) to a single binary file."""
    if isinstance(f, PriceForecaster):
        kind = _KIND_PRICE
        offset = np.array([f.offset])
        scale = np.array([f.scale])
    elif isinstance(f, InflowForecaster):
        kind = _KIND_INFLOW
        offset = np.asarray(f.offset, dtype=float)
        scale = np.asarray(f.scale, dtype=float)
    else:
        raise ForecastError(f"not a forecaster: {type(f).__name__}")
    payload = nn.pack_chains({"initializer": f.initializer,
                              "generator": f.generator})
    with open(path, "wb") as fh:
        fh.write(_FC_MAGIC)
        fh.write(struct.pack("<IB", _FC_VERSION, kind))
        fh.write(struct.pack("<I", offset.size))
        fh.write(offset.astype("<f8").tobytes())
        fh.write(scale.astype("<f8").tobytes())
        fh.write(struct.pack("<I", len(payload)))
        fh.write(payload)


def load_forecaster(path):
    """Read a forecaster written by save_forecaster; the result is ready to
    sample (loading counts as explicit weights provision)."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != _FC_MAGIC:
        raise ForecastError(f"{path}: not a forecaster file (bad magic)")
    version, kind = struct.unpack_from("<IB", buf, 4)
    if version != _FC_VERSION:
        raise ForecastError(f"{path}: unsupported version {version}")
    off = 9
    n = struct.unpack_from("<I", buf, off)[0]
    off += 4
    offset = np.frombuffer(buf, "<f8", n, off).copy()
    off += 8 * n
    scale = np.frombuffer(buf, "<f8", n, off).copy()
    off += 8 * n
    plen = struct.unpack_from("<I", buf, off)[0]
    off += 4
    try:
        chains = nn.unpack_chains(buf[off:off + plen])
        init, gen = chains["initializer"], chains["generator"]
    except (nn.NeuralError, KeyError) as exc:
        raise ForecastError(f"{path}: corrupt forecaster payload: {exc}") from exc
    if kind == _KIND_PRICE:
        return PriceForecaster(init, gen, offset=float(offset[0]),
                               scale=float(scale[0]), trained=True)
    if kind == _KIND_INFLOW:
        return InflowForecaster(init, gen, offset=offset, scale=scale,
                                trained=True)
    raise ForecastError(f"{path}: unknown forecaster kind {kind}")
