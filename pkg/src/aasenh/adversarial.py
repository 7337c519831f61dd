"""Unpaired BEGAN objective with an autoencoding discriminator and proportional k_t control."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tt
from .tensor import ShapeError, Tensor

MODES = ("began-standard", "as-printed")


@dataclass
class AdversarialControlState:
    k: float = 0.0
    gamma: float = 0.5
    lam: float = 0.001
    eps: float = 1e-8
    step: int = 0

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if self.lam <= 0:
            raise ValueError("lambda must be positive")
        self.k = min(max(self.k, 0.0), 1.0)


def masked_l1(x: Tensor, y: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Mean |x - y| over valid frames (``mask`` is T x B for T x B x F inputs)."""
    if x.shape != y.shape:
        raise ShapeError(f"l1: shape mismatch {x.shape} vs {y.shape}")
    d = tt.abs_(x - y)
    if mask is None:
        return tt.reduce_mean(d)
    m = np.broadcast_to(mask[:, :, None], x.shape).astype(x.dtype)
    return tt.reduce_sum(d * Tensor(m, dtype=x.dtype)) * (1.0 / float(m.sum()))


def disc_recon_loss(x: Tensor, disc, lengths=None) -> Tensor:
    """l_D(x): mean absolute reconstruction error of the autoencoding discriminator.

    ``disc`` is called as ``disc(x, lengths)``; padding beyond ``lengths`` is excluded.
    """
    recon = disc(x, lengths)
    if recon.shape != x.shape:
        raise ShapeError(f"discriminator output {recon.shape} does not match input {x.shape}")
    mask = None
    if lengths is not None:
        mask = (np.arange(x.shape[0])[:, None] < np.asarray(lengths)[None, :]).astype(x.dtype)
    return masked_l1(x, recon, mask)


def began_objectives(l_real, l_fake, state: AdversarialControlState, mode: str = "began-standard"):
    """Return (loss_D, loss_E); both minimised by their respective players.

    ``as-printed`` weights the real term by 1/(k + eps) and lets D maximise
    V = L_fake - L_real / (k + eps); ``began-standard`` uses the usual
    L_real - k * L_fake discriminator loss. E always minimises L_fake.
    """
    if mode == "as-printed":
        loss_d = l_real * (1.0 / (state.k + state.eps)) - l_fake
    elif mode == "began-standard":
        loss_d = l_real - l_fake * state.k
    else:
        raise ValueError(f"unknown BEGAN mode {mode!r}; expected one of {MODES}")
    return loss_d, l_fake


def value_as_printed(l_real: float, l_fake: float, state: AdversarialControlState) -> float:
    return l_fake - l_real / (state.k + state.eps)


def kt_update(state: AdversarialControlState, l_real: float, l_fake: float) -> AdversarialControlState:
    state.k = float(np.clip(state.k + state.lam * (state.gamma * l_real - l_fake), 0.0, 1.0))
    state.step += 1
    return state


def convergence_measure(l_real: float, l_fake: float, gamma: float) -> tuple[float, bool]:
    """BEGAN's M = L_real + |gamma L_real - L_fake|; the flag marks the degenerate L_real = 0 case."""
    if l_real == 0:
        return float(l_fake), True
    return float(l_real + abs(gamma * l_real - l_fake)), False
