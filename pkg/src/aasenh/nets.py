"""Acoustic model, enhancer and autoencoding discriminator built on the tape engine.

All networks take time-major T x B x F inputs plus per-utterance lengths.
Padded frames are zeroed after every layer so an utterance's output never
depends on the padding of the batch it was run in.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as tt
from .checkpoint import load_tensors, save_tensors
from .tensor import Tensor


def length_mask(lengths, T: int) -> np.ndarray:
    return (np.arange(T)[:, None] < np.asarray(lengths)[None, :]).astype(np.float32)


def apply_mask(x: Tensor, mask: np.ndarray) -> Tensor:
    return x * Tensor(np.broadcast_to(mask[:, :, None], x.shape), dtype=x.dtype)


def reverse_index(lengths, T: int) -> np.ndarray:
    """Per-column permutation reversing the valid prefix and fixing the padding."""
    t = np.arange(T)[:, None]
    n = np.asarray(lengths)[None, :]
    return np.where(t < n, n - 1 - t, t)


class Module:
    def __init__(self):
        self.params: dict[str, Tensor] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self.training = True

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def num_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def freeze(self) -> "Module":
        for p in self.params.values():
            p.requires_grad = False
            p.grad = None
        return self

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {k: p.data for k, p in self.params.items()}
        out.update({f"buffer:{k}": v for k, v in self.buffers.items()})
        return out

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        expected = set(self.params) | {f"buffer:{k}" for k in self.buffers}
        if set(state) != expected:
            raise KeyError(f"checkpoint keys differ: missing {sorted(expected - set(state))}, "
                           f"unexpected {sorted(set(state) - expected)}")
        for k, p in self.params.items():
            if state[k].shape != p.shape:
                raise ValueError(f"{k}: checkpoint shape {state[k].shape} != {p.shape}")
            p.data = np.array(state[k], dtype=p.dtype)
        for k in self.buffers:
            self.buffers[k] = np.array(state[f"buffer:{k}"], dtype=np.float32)

    def save(self, path) -> None:
        save_tensors(path, self.state_dict())

    def load(self, path) -> "Module":
        self.load_state_dict(load_tensors(path))
        return self

    def _param(self, name: str, shape, rng: np.random.Generator | None, fill: float | None = None) -> Tensor:
        # weights ~ N(0, 0.1^2); biases and norm offsets get a constant fill
        data = np.full(shape, fill) if fill is not None else rng.normal(0.0, 0.1, size=shape)
        t = Tensor(data.astype(tt._dtype()), requires_grad=True, name=name)
        self.params[name] = t
        return t


# ---------------------------------------------------------------- configs


@dataclass
class ConvCfg:
    width: int = 5
    stride: int = 2
    maps: int = 32


@dataclass
class AcousticModelCfg:
    n_in: int = 40
    conv: list = field(default_factory=lambda: [ConvCfg()])
    lstm_units: list = field(default_factory=lambda: [64, 64])
    n_out: int = 7

    def __post_init__(self):
        self.conv = [c if isinstance(c, ConvCfg) else ConvCfg(**c) for c in self.conv]
        if any(c.stride < 1 for c in self.conv):
            raise ValueError("conv strides must be >= 1")

    @property
    def downsample(self) -> int:
        return int(np.prod([c.stride for c in self.conv])) if self.conv else 1

    def out_length(self, n: int) -> int:
        for c in self.conv:
            n = -(-n // c.stride)
        return n


@dataclass
class RecurrentCfg:
    """Shape of the enhancer or discriminator: residual BiLSTM blocks mapping F -> F."""

    n_in: int = 40
    layers: int = 2
    units: int = 64
    residual: bool = True


EnhancerCfg = RecurrentCfg
DiscriminatorCfg = RecurrentCfg


@dataclass
class NetConfig:
    am: AcousticModelCfg = field(default_factory=AcousticModelCfg)
    enhancer: RecurrentCfg = field(default_factory=RecurrentCfg)
    discriminator: RecurrentCfg = field(default_factory=RecurrentCfg)

    @classmethod
    def from_dict(cls, d: dict) -> "NetConfig":
        return cls(
            AcousticModelCfg(**d.get("am", {})),
            RecurrentCfg(**d.get("enhancer", {})),
            RecurrentCfg(**d.get("discriminator", {})),
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def load(cls, path) -> "NetConfig":
        d = json.loads(Path(path).read_text())
        d = {k: v for k, v in d.items() if not k.startswith("_")}
        return cls.from_dict(d)


def lstm_param_count(n_in: int, units: int) -> int:
    return 4 * units * (n_in + units) + 4 * units


def recurrent_param_count(cfg: RecurrentCfg) -> int:
    """Closed form: per block two LSTM directions plus the 2H -> F projection."""
    per = 2 * lstm_param_count(cfg.n_in, cfg.units) + 2 * cfg.units * cfg.n_in + cfg.n_in
    return cfg.layers * per


# ---------------------------------------------------------------- layers


class BiLSTM:
    def __init__(self, owner: Module, prefix: str, n_in: int, units: int, rng):
        self.units = units
        self.fw = [owner._param(f"{prefix}.fw.{n}", s, rng, f)
                   for n, s, f in (("w_x", (n_in, 4 * units), None), ("w_h", (units, 4 * units), None),
                                   ("b", (4 * units,), 0.0))]
        self.bw = [owner._param(f"{prefix}.bw.{n}", s, rng, f)
                   for n, s, f in (("w_x", (n_in, 4 * units), None), ("w_h", (units, 4 * units), None),
                                   ("b", (4 * units,), 0.0))]

    def __call__(self, x: Tensor, lengths) -> Tensor:
        T = x.shape[0]
        fwd = tt.lstm_sequence(x, *self.fw)
        rev = reverse_index(lengths, T)
        back = tt.permute_time(tt.lstm_sequence(tt.permute_time(x, rev), *self.bw), rev)
        return tt.concat([fwd, back], axis=2)


class SeqBatchNorm:
    def __init__(self, owner: Module, prefix: str, n: int):
        self.owner = owner
        self.gamma = owner._param(f"{prefix}.gamma", (n,), None, 1.0)
        self.beta = owner._param(f"{prefix}.beta", (n,), None, 0.0)
        self.mean_key, self.var_key = f"{prefix}.running_mean", f"{prefix}.running_var"
        owner.buffers[self.mean_key] = np.zeros(n, np.float32)
        owner.buffers[self.var_key] = np.ones(n, np.float32)

    def __call__(self, x: Tensor, mask: np.ndarray) -> Tensor:
        b = self.owner.buffers
        return tt.seq_batchnorm(x, self.gamma, self.beta, self.owner.training,
                                b[self.mean_key], b[self.var_key], mask=mask)


# ---------------------------------------------------------------- models


class AcousticModel(Module):
    """Conv (+BN, ReLU) stack, BiLSTM (+sequence-wise BN) stack, linear, log-softmax."""

    def __init__(self, cfg: AcousticModelCfg, seed: int = 0):
        super().__init__()
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        self.convs = []
        n = cfg.n_in
        for i, c in enumerate(cfg.conv):
            w = self._param(f"conv{i}.w", (c.width, n, c.maps), rng)
            b = self._param(f"conv{i}.b", (c.maps,), None, 0.0)
            self.convs.append((c, w, b, SeqBatchNorm(self, f"conv{i}.bn", c.maps)))
            n = c.maps
        self.rnns = []
        for i, units in enumerate(cfg.lstm_units):
            self.rnns.append((BiLSTM(self, f"rnn{i}", n, units, rng), SeqBatchNorm(self, f"rnn{i}.bn", 2 * units)))
            n = 2 * units
        self.out_w = self._param("out.w", (n, cfg.n_out), rng)
        self.out_b = self._param("out.b", (cfg.n_out,), None, 0.0)

    def __call__(self, x: Tensor, lengths) -> tuple[Tensor, list[int]]:
        if x.shape[2] != self.cfg.n_in:
            raise tt.ShapeError(f"acoustic model expects {self.cfg.n_in} features, got {x.shape[2]}")
        lengths = [int(n) for n in lengths]
        x = apply_mask(x, length_mask(lengths, x.shape[0]))
        for c, w, b, bn in self.convs:
            x = tt.conv1d(x, w, stride=c.stride)
            x = x + tt.broadcast_to(b, x.shape)
            lengths = [-(-n // c.stride) for n in lengths]
            x = tt.relu(bn(x, length_mask(lengths, x.shape[0])))
        if min(lengths) < 1:
            raise ValueError("acoustic model: input too short after downsampling")
        mask = length_mask(lengths, x.shape[0])
        for rnn, bn in self.rnns:
            x = bn(rnn(x, lengths), mask)
        logits = tt.linear(x, self.out_w, self.out_b)
        return tt.log_softmax(logits, axis=-1), lengths


class ResidualBiLSTMStack(Module):
    """F -> F network of residual blocks ``x + W BiLSTM(x) + b``; used for E and D."""

    def __init__(self, cfg: RecurrentCfg, seed: int = 0):
        super().__init__()
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        self.blocks = []
        for i in range(cfg.layers):
            rnn = BiLSTM(self, f"block{i}", cfg.n_in, cfg.units, rng)
            w = self._param(f"block{i}.proj.w", (2 * cfg.units, cfg.n_in), rng)
            b = self._param(f"block{i}.proj.b", (cfg.n_in,), None, 0.0)
            self.blocks.append((rnn, w, b))

    def __call__(self, x: Tensor, lengths=None) -> Tensor:
        if x.shape[2] != self.cfg.n_in:
            raise tt.ShapeError(f"expected {self.cfg.n_in} features, got {x.shape[2]}")
        T, B = x.shape[:2]
        lengths = [T] * B if lengths is None else [int(n) for n in lengths]
        mask = length_mask(lengths, T)
        x = apply_mask(x, mask)
        for rnn, w, b in self.blocks:
            y = tt.linear(rnn(x, lengths), w, b)
            x = apply_mask(x + y if self.cfg.residual else y, mask)
        return x

    def zero_weights(self) -> "ResidualBiLSTMStack":
        for p in self.params.values():
            p.data[...] = 0
        return self


class Enhancer(ResidualBiLSTMStack):
    pass


class Discriminator(ResidualBiLSTMStack):
    pass


def init_params(cfg, seed: int = 0) -> Module:
    """Build the network for ``cfg`` with N(0, 0.1^2) weights and zero biases."""
    if isinstance(cfg, AcousticModelCfg):
        return AcousticModel(cfg, seed)
    if isinstance(cfg, RecurrentCfg):
        return ResidualBiLSTMStack(cfg, seed)
    raise TypeError(f"unknown config type {type(cfg).__name__}")
