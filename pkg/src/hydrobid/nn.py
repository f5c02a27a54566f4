"""Minimal neural kernel: dense, GRU and dropout layers with BPTT and ADAM.

The networks here are small sequence models driven one timestep at a time.
A chain records per-step caches during training-mode forwards, and
`backward` walks that tape in reverse, including back-propagation through
time across GRU state and, optionally, across a sampling loop that feeds
the output back into part of the next input.

Conventions:
  dense    y = act(W x + b)
  GRU      z = sigmoid(Wz x + Uz h + bz)          update gate (keeps memory)
           r = sigmoid(Wr x + Ur h + br)          reset gate
           hc = tanh(Wh x + Uh (r * h) + bh)      candidate
           h' = z * h + (1 - z) * hc
           y = out_act(h')
  dropout  inverted scaling: mask / (1 - rate) in train mode, identity in eval
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np


class NeuralError(Exception):
    pass


class TrainingDivergedError(NeuralError):
    """Loss became non-finite during training."""


def _act(name: str, a: np.ndarray) -> np.ndarray:
    if name == "identity":
        return a
    if name == "relu":
        return np.maximum(a, 0.0)
    raise NeuralError(f"unknown activation {name!r}")


def _act_grad(name: str, a: np.ndarray) -> np.ndarray:
    if name == "identity":
        return np.ones_like(a)
    return (a > 0.0).astype(float)


def _sigmoid(a: np.ndarray) -> np.ndarray:
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    e = np.exp(a[~pos])
    out[~pos] = e / (1.0 + e)
    return out


class DenseLayer:
    def __init__(self, W: np.ndarray, b: np.ndarray, activation: str = "identity"):
        self.W = np.asarray(W, dtype=float)
        self.b = np.asarray(b, dtype=float)
        if self.W.shape[0] != self.b.shape[0]:
            raise NeuralError("dense bias length must match output dimension")
        if activation not in ("identity", "relu"):
            raise NeuralError(f"dense activation must be identity or relu, got {activation!r}")
        self.activation = activation
        self.gW = np.zeros_like(self.W)
        self.gb = np.zeros_like(self.b)

    @property
    def in_dim(self) -> int:
        return self.W.shape[1]

    @property
    def out_dim(self) -> int:
        return self.W.shape[0]

    def step(self, x: np.ndarray, train: bool):
        a = self.W @ x + self.b
        y = _act(self.activation, a)
        return y, (x, a)

    def backstep(self, gy: np.ndarray, cache) -> np.ndarray:
        x, a = cache
        da = gy * _act_grad(self.activation, a)
        self.gW += np.outer(da, x)
        self.gb += da
        return self.W.T @ da

    def params(self):
        return [self.W, self.b]

    def grads(self):
        return [self.gW, self.gb]


class GruLayer:
    def __init__(self, Wz, Wr, Wh, Uz, Ur, Uh, bz, br, bh,
                 out_activation: str = "identity"):
        self.Wz, self.Wr, self.Wh = (np.asarray(m, dtype=float) for m in (Wz, Wr, Wh))
        self.Uz, self.Ur, self.Uh = (np.asarray(m, dtype=float) for m in (Uz, Ur, Uh))
        self.bz, self.br, self.bh = (np.asarray(v, dtype=float) for v in (bz, br, bh))
        if out_activation not in ("identity", "relu"):
            raise NeuralError("GRU output activation must be identity or relu")
        self.out_activation = out_activation
        self.h = np.zeros(self.Wz.shape[0])
        self._zero_grads()

    @property
    def in_dim(self) -> int:
        return self.Wz.shape[1]

    @property
    def out_dim(self) -> int:
        return self.Wz.shape[0]

    def _zero_grads(self):
        self.gWz, self.gWr, self.gWh = (np.zeros_like(m) for m in (self.Wz, self.Wr, self.Wh))
        self.gUz, self.gUr, self.gUh = (np.zeros_like(m) for m in (self.Uz, self.Ur, self.Uh))
        self.gbz, self.gbr, self.gbh = (np.zeros_like(v) for v in (self.bz, self.br, self.bh))

    def step(self, x: np.ndarray, train: bool):
        hp = self.h
        z = _sigmoid(self.Wz @ x + self.Uz @ hp + self.bz)
        r = _sigmoid(self.Wr @ x + self.Ur @ hp + self.br)
        hc = np.tanh(self.Wh @ x + self.Uh @ (r * hp) + self.bh)
        h = z * hp + (1.0 - z) * hc
        self.h = h
        y = _act(self.out_activation, h)
        return y, (x, hp, z, r, hc, h)

    def backstep(self, gy: np.ndarray, cache, gh_next: np.ndarray):
        x, hp, z, r, hc, h = cache
        gh = gy * _act_grad(self.out_activation, h) + gh_next
        dz = gh * (hp - hc)
        dhc = gh * (1.0 - z)
        dac = dhc * (1.0 - hc * hc)
        rh = r * hp
        self.gWh += np.outer(dac, x)
        self.gUh += np.outer(dac, rh)
        self.gbh += dac
        uh_dac = self.Uh.T @ dac
        dr = uh_dac * hp
        daz = dz * z * (1.0 - z)
        dar = dr * r * (1.0 - r)
        self.gWz += np.outer(daz, x)
        self.gUz += np.outer(daz, hp)
        self.gbz += daz
        self.gWr += np.outer(dar, x)
        self.gUr += np.outer(dar, hp)
        self.gbr += dar
        gx = self.Wz.T @ daz + self.Wr.T @ dar + self.Wh.T @ dac
        ghp = gh * z + uh_dac * r + self.Uz.T @ daz + self.Ur.T @ dar
        return gx, ghp

    def params(self):
        return [self.Wz, self.Wr, self.Wh, self.Uz, self.Ur, self.Uh,
                self.bz, self.br, self.bh]

    def grads(self):
        return [self.gWz, self.gWr, self.gWh, self.gUz, self.gUr, self.gUh,
                self.gbz, self.gbr, self.gbh]


class DropoutLayer:
    def __init__(self, rate: float, rng: np.random.Generator | None = None):
        if not 0.0 <= rate < 1.0:
            raise NeuralError(f"dropout rate must lie in [0, 1), got {rate}")
        self.rate = rate
        self.rng = rng if rng is not None else np.random.default_rng(0)

    def step(self, x: np.ndarray, train: bool):
        if not train or self.rate == 0.0:
            return x, None
        mask = (self.rng.random(x.shape) >= self.rate) / (1.0 - self.rate)
        return x * mask, mask

    def backstep(self, gy: np.ndarray, cache) -> np.ndarray:
        if cache is None:
            return gy
        return gy * cache

    def params(self):
        return []

    def grads(self):
        return []


class NetworkChain:
    def __init__(self, layers: list):
        self.layers = layers
        self._tape: list[list] = []

    def set_rng(self, rng: np.random.Generator) -> None:
        for layer in self.layers:
            if isinstance(layer, DropoutLayer):
                layer.rng = rng

    def params(self):
        out = []
        for layer in self.layers:
            out.extend(layer.params())
        return out

    def grads(self):
        out = []
        for layer in self.layers:
            out.extend(layer.grads())
        return out

    def zero_grads(self) -> None:
        for g in self.grads():
            g[...] = 0.0


def forward(chain: NetworkChain, x: np.ndarray, mode: str = "eval") -> np.ndarray:
    """One timestep through the chain.  GRU layers advance their hidden
    state; training mode records a tape entry for backward and activates
    dropout."""
    if mode not in ("train", "eval"):
        raise NeuralError(f"mode must be 'train' or 'eval', got {mode!r}")
    train = mode == "train"
    y = np.asarray(x, dtype=float)
    caches = []
    for layer in chain.layers:
        y, cache = layer.step(y, train)
        caches.append(cache)
    if train:
        chain._tape.append(caches)
    return y


def reset_state(chain: NetworkChain) -> None:
    """Zero every GRU hidden state and drop any recorded tape."""
    for layer in chain.layers:
        if isinstance(layer, GruLayer):
            layer.h = np.zeros(layer.out_dim)
    chain._tape = []


def mse_loss(pred: np.ndarray, target: np.ndarray) -> float:
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise NeuralError("mse_loss shapes differ")
    d = pred - target
    with np.errstate(over="ignore"):  # inf is caught by the divergence guard
        return float(np.mean(d * d))


def backward(chain: NetworkChain, output_grads: list[np.ndarray],
             recursive_slice: slice | None = None) -> list[np.ndarray]:
    """Back-propagate through the recorded forward tape.

    `output_grads[t]` is dL/dy for step t.  When `recursive_slice` is given,
    the forward pass fed step t's output into `input[recursive_slice]` of
    step t+1, and the returned input gradients chain through that loop as
    well.  Parameter gradients accumulate on the layers; the per-step input
    gradients are returned.
    """
    tape = chain._tape
    if len(tape) == 0:
        raise NeuralError("backward called without a cached training-mode forward")
    if len(output_grads) != len(tape):
        raise NeuralError(
            f"got {len(output_grads)} output gradients for {len(tape)} recorded steps")
    gh: dict[int, np.ndarray] = {
        i: np.zeros(l.out_dim) for i, l in enumerate(chain.layers)
        if isinstance(l, GruLayer)
    }
    input_grads: list[np.ndarray | None] = [None] * len(tape)
    carry = None
    for t in range(len(tape) - 1, -1, -1):
        g = np.array(output_grads[t], dtype=float)
        if carry is not None:
            g = g + carry
        for i in range(len(chain.layers) - 1, -1, -1):
            layer = chain.layers[i]
            cache = tape[t][i]
            if isinstance(layer, GruLayer):
                g, gh[i] = layer.backstep(g, cache, gh[i])
            else:
                g = layer.backstep(g, cache)
        input_grads[t] = g
        carry = g[recursive_slice] if recursive_slice is not None and t > 0 else None
    return input_grads


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_chain(cls, chain: NetworkChain, lr: float = 1e-3,
                  beta1: float = 0.9, beta2: float = 0.999,
                  eps: float = 1e-8) -> "AdamState":
        return cls(m=[np.zeros_like(p) for p in chain.params()],
                   v=[np.zeros_like(p) for p in chain.params()],
                   lr=lr, beta1=beta1, beta2=beta2, eps=eps)


def adam_update(chain: NetworkChain, state: AdamState) -> None:
    """One ADAM step from the accumulated gradients, then clear them."""
    state.t += 1
    b1t = 1.0 - state.beta1 ** state.t
    b2t = 1.0 - state.beta2 ** state.t
    for p, g, m, v in zip(chain.params(), chain.grads(), state.m, state.v):
        m[...] = state.beta1 * m + (1.0 - state.beta1) * g
        v[...] = state.beta2 * v + (1.0 - state.beta2) * g * g
        p -= state.lr * (m / b1t) / np.sqrt(v / b2t + state.eps)
    chain.zero_grads()


# ---- weight initialization -------------------------------------------------

def xavier_dense(rng: np.random.Generator, in_dim: int, out_dim: int,
                 activation: str = "identity") -> DenseLayer:
    lim = np.sqrt(6.0 / (in_dim + out_dim))
    W = rng.uniform(-lim, lim, (out_dim, in_dim))
    return DenseLayer(W, np.zeros(out_dim), activation)


def _semi_orthogonal(rng: np.random.Generator, out_dim: int, in_dim: int) -> np.ndarray:
    g = rng.normal(0.0, 1.0, (max(out_dim, in_dim), min(out_dim, in_dim)))
    q, r = np.linalg.qr(g)
    q = q * np.sign(np.diag(r))
    if out_dim >= in_dim:
        return np.ascontiguousarray(q[:out_dim, :in_dim])
    return np.ascontiguousarray(q[:in_dim, :out_dim].T)


def orthogonal_gru(rng: np.random.Generator, in_dim: int, out_dim: int,
                   out_activation: str = "identity") -> GruLayer:
    mats = [_semi_orthogonal(rng, out_dim, in_dim) for _ in range(3)]
    umats = [_semi_orthogonal(rng, out_dim, out_dim) for _ in range(3)]
    zeros = [np.zeros(out_dim) for _ in range(3)]
    return GruLayer(mats[0], mats[1], mats[2], umats[0], umats[1], umats[2],
                    zeros[0], zeros[1], zeros[2], out_activation)


# ---- training ---------------------------------------------------------------


@dataclass
class TrainingChunk:
    """A teacher-forced sequence: inputs (T, in_dim) against targets (T, out_dim).

    When training an (initializer, generator) pair, `init_input`/`init_target`
    carry the initializer's single teacher example for this chunk and the
    sequence fields drive the generator."""
    inputs: np.ndarray
    targets: np.ndarray
    init_input: np.ndarray | None = None
    init_target: np.ndarray | None = None


@dataclass
class TrainOptions:
    epochs: int = 200
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    val_fraction: float = 0.1
    val_every: int = 5
    early_stop_rel: float = 1e-3
    seed: int = 0


@dataclass
class TrainingReport:
    train_losses: list = field(default_factory=list)        # one per epoch
    val_points: list = field(default_factory=list)          # (epoch, val_loss)
    stopped_epoch: int | None = None                        # early-stop epoch
    epochs_run: int = 0
    n_train: int = 0
    n_val: int = 0

    def to_csv(self) -> str:
        vals = dict(self.val_points)
        lines = ["epoch,train_loss,val_loss"]
        if 0 in vals:
            lines.append(f"0,,{format(vals[0], '.17g')}")
        for e, tl in enumerate(self.train_losses, start=1):
            v = format(vals[e], ".17g") if e in vals else ""
            lines.append(f"{e},{format(tl, '.17g')},{v}")
        return "\n".join(lines) + "\n"


def _as_pair(chains) -> tuple:
    if isinstance(chains, NetworkChain):
        return (chains,)
    return tuple(chains)


def _chunk_pass(chain: NetworkChain, inputs: np.ndarray, mode: str):
    reset_state(chain)
    preds = []
    for t in range(inputs.shape[0]):
        preds.append(forward(chain, inputs[t], mode))
    return np.array(preds)


def _chunk_step(chains, chunk: TrainingChunk, mode: str, update=None):
    """Run one chunk through the chain(s); returns the combined MSE over all
    predicted elements.  With `update` (list of AdamState), also backpropagate
    and apply one ADAM step per chain."""
    pair_mode = len(chains) == 2 and chunk.init_input is not None
    pieces = []
    if pair_mode:
        pieces.append((chains[0], chunk.init_input[None, :], chunk.init_target[None, :]))
        pieces.append((chains[1], chunk.inputs, chunk.targets))
    else:
        pieces.append((chains[-1], chunk.inputs, chunk.targets))
    total = sum(t.size for _, _, t in pieces)
    sq_sum = 0.0
    for i, (chain, inputs, targets) in enumerate(pieces):
        preds = _chunk_pass(chain, inputs, mode)
        with np.errstate(over="ignore"):  # inf loss is caught by the caller
            d = preds - targets
            sq_sum += float(np.sum(d * d))
        if update is not None and np.isfinite(sq_sum):
            backward(chain, list(2.0 * d / total))
            adam_update(chain, update[i if pair_mode else -1])
        reset_state(chain)
    return sq_sum / total


def train(chains, dataset: list[TrainingChunk], opts: TrainOptions,
          val_chunks: list[TrainingChunk] | None = None) -> TrainingReport:
    """Epochs of shuffled chunks, one ADAM update per chunk, recurrent memory
    reset around every update.  `chains` is a single NetworkChain or an
    (initializer, generator) pair whose chunks carry both teacher signals.
    Validation runs every `val_every` epochs in eval mode; training stops
    early when the validation loss rises by more than `early_stop_rel`
    against the previous checkpoint while the training loss fell."""
    from . import seeds

    chains = _as_pair(chains)
    rng = seeds.stream(opts.seed, seeds.TRAINING)
    for chain in chains:
        chain.set_rng(seeds.stream(opts.seed, seeds.TRAINING, 1))

    if val_chunks is None:
        if len(dataset) >= 2 and opts.val_fraction > 0.0:
            k = max(1, round(opts.val_fraction * len(dataset)))
            perm = rng.permutation(len(dataset))
            val_chunks = [dataset[i] for i in perm[:k]]
            train_chunks = [dataset[i] for i in perm[k:]]
        else:
            val_chunks = []
            train_chunks = list(dataset)
    else:
        train_chunks = list(dataset)
    if not train_chunks:
        raise NeuralError("training requires at least one chunk")

    states = [AdamState.for_chain(c, opts.lr, opts.beta1, opts.beta2, opts.eps)
              for c in chains]
    report = TrainingReport(n_train=len(train_chunks), n_val=len(val_chunks))
    prev_ckpt: tuple[float, float] | None = None   # (train_loss, val_loss)
    if val_chunks:
        # untrained baseline so the curve shows what training bought
        val0 = float(np.mean([_chunk_step(chains, c, "eval") for c in val_chunks]))
        report.val_points.append((0, val0))
        prev_ckpt = (np.inf, val0)

    for epoch in range(1, opts.epochs + 1):
        order = rng.permutation(len(train_chunks))
        epoch_losses = []
        for k in order:
            loss = _chunk_step(chains, train_chunks[k], "train", update=states)
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite loss {loss} at epoch {epoch}, chunk {int(k)}")
            epoch_losses.append(loss)
        train_loss = float(np.mean(epoch_losses))
        report.train_losses.append(train_loss)
        report.epochs_run = epoch

        at_checkpoint = val_chunks and (epoch % opts.val_every == 0 or epoch == opts.epochs)
        if at_checkpoint:
            val_loss = float(np.mean([_chunk_step(chains, c, "eval")
                                      for c in val_chunks]))
            if not np.isfinite(val_loss):
                raise TrainingDivergedError(
                    f"non-finite validation loss at epoch {epoch}")
            report.val_points.append((epoch, val_loss))
            if prev_ckpt is not None:
                pt, pv = prev_ckpt
                if val_loss > pv * (1.0 + opts.early_stop_rel) and train_loss < pt:
                    report.stopped_epoch = epoch
                    break
            prev_ckpt = (train_loss, val_loss)
    return report


# ---- serialization ----------------------------------------------------------

_MAGIC = b"HBNW"
_VERSION = 1
_DENSE, _GRU, _DROPOUT = 1, 2, 3
_ACTS = {"identity": 0, "relu": 1}
_ACTS_INV = {v: k for k, v in _ACTS.items()}


def _pack_array(a: np.ndarray) -> bytes:
    shape = a.shape
    head = struct.pack("<B", len(shape)) + b"".join(struct.pack("<I", s) for s in shape)
    return head + np.ascontiguousarray(a, dtype="<f8").tobytes()


def _unpack_array(buf: bytes, off: int):
    ndim = struct.unpack_from("<B", buf, off)[0]
    off += 1
    shape = []
    for _ in range(ndim):
        shape.append(struct.unpack_from("<I", buf, off)[0])
        off += 4
    count = int(np.prod(shape)) if shape else 1
    a = np.frombuffer(buf, dtype="<f8", count=count, offset=off).reshape(shape).copy()
    return a, off + 8 * count


def pack_chains(chains: dict[str, NetworkChain]) -> bytes:
    """Versioned binary weights image: magic, layer list, shapes, row-major
    float64 payloads."""
    parts = [_MAGIC, struct.pack("<I", _VERSION), struct.pack("<I", len(chains))]
    for name, chain in chains.items():
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", len(chain.layers)))
        for layer in chain.layers:
            if isinstance(layer, DenseLayer):
                parts.append(struct.pack("<BB", _DENSE, _ACTS[layer.activation]))
                parts.append(_pack_array(layer.W))
                parts.append(_pack_array(layer.b))
            elif isinstance(layer, GruLayer):
                parts.append(struct.pack("<BB", _GRU, _ACTS[layer.out_activation]))
                for a in layer.params():
                    parts.append(_pack_array(a))
            elif isinstance(layer, DropoutLayer):
                parts.append(struct.pack("<B", _DROPOUT))
                parts.append(struct.pack("<d", layer.rate))
            else:
                raise NeuralError(f"cannot serialize layer type {type(layer).__name__}")
    return b"".join(parts)


def save_weights(path, chains: dict[str, NetworkChain]) -> None:
    with open(path, "wb") as fh:
        fh.write(pack_chains(chains))


def unpack_chains(buf: bytes) -> dict[str, NetworkChain]:
    if buf[:4] != _MAGIC:
        raise NeuralError("bad magic bytes: not a weights file")
    version = struct.unpack_from("<I", buf, 4)[0]
    if version != _VERSION:
        raise NeuralError(f"unsupported weights version {version}")
    off = 8
    n_chains = struct.unpack_from("<I", buf, off)[0]
    off += 4
    chains: dict[str, NetworkChain] = {}
    for _ in range(n_chains):
        nlen = struct.unpack_from("<H", buf, off)[0]
        off += 2
        name = buf[off:off + nlen].decode("utf-8")
        off += nlen
        n_layers = struct.unpack_from("<I", buf, off)[0]
        off += 4
        layers = []
        for _ in range(n_layers):
            kind = struct.unpack_from("<B", buf, off)[0]
            off += 1
            if kind == _DENSE:
                act = _ACTS_INV[struct.unpack_from("<B", buf, off)[0]]
                off += 1
                W, off = _unpack_array(buf, off)
                b, off = _unpack_array(buf, off)
                layers.append(DenseLayer(W, b, act))
            elif kind == _GRU:
                act = _ACTS_INV[struct.unpack_from("<B", buf, off)[0]]
                off += 1
                arrs = []
                for _ in range(9):
                    a, off = _unpack_array(buf, off)
                    arrs.append(a)
                layers.append(GruLayer(*arrs, out_activation=act))
            elif kind == _DROPOUT:
                rate = struct.unpack_from("<d", buf, off)[0]
                off += 8
                layers.append(DropoutLayer(rate))
            else:
                raise NeuralError(f"unknown layer code {kind} in weights file")
        chains[name] = NetworkChain(layers)
    return chains


def load_weights(path) -> dict[str, NetworkChain]:
    with open(path, "rb") as fh:
        return unpack_chains(fh.read())
