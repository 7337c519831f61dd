"""CTC likelihood, its gradient, and a brute-force enumeration oracle."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .tensor import Tensor, _make

NEG_INF = -np.inf


@dataclass(frozen=True)
class SymbolInventory:
    """Ordered output symbols; ``blank`` indexes the CTC blank."""

    symbols: tuple[str, ...]
    blank: int = 0

    def __post_init__(self):
        if len(self.symbols) < 2:
            raise ValueError("SymbolInventory needs at least a blank and one grapheme")
        if len(set(self.symbols)) != len(self.symbols):
            raise ValueError("SymbolInventory symbols must be distinct")

    @classmethod
    def from_graphemes(cls, graphemes: str | Sequence[str], blank_symbol: str = "<b>") -> "SymbolInventory":
        return cls((blank_symbol, *graphemes), 0)

    @classmethod
    def full(cls) -> "SymbolInventory":
        """26 letters, underscore, apostrophe, whitespace and blank: 30 symbols."""
        return cls.from_graphemes([chr(c) for c in range(ord("a"), ord("z") + 1)] + ["_", "'", " "])

    def __len__(self) -> int:
        return len(self.symbols)

    def encode(self, text: str) -> list[int]:
        index = {s: i for i, s in enumerate(self.symbols)}
        try:
            return [index[ch] for ch in text]
        except KeyError as exc:
            raise ValueError(f"symbol {exc.args[0]!r} not in inventory") from None

    def decode(self, ids: Sequence[int]) -> str:
        return "".join(self.symbols[i] for i in ids)


def expand_with_blanks(t: Sequence[int], blank: int = 0) -> list[int]:
    out = [blank]
    for g in t:
        out += [g, blank]
    return out


def collapse_alignment(path: Sequence[int], blank: int = 0) -> list[int]:
    out = []
    prev = None
    for s in path:
        if s != prev and s != blank:
            out.append(s)
        prev = s
    return out


def min_frames(t: Sequence[int]) -> int:
    return len(t) + sum(1 for a, b in zip(t, t[1:]) if a == b)


def _skip_allowed(ext: list[int], blank: int) -> np.ndarray:
    ext = np.asarray(ext)
    ok = np.zeros(len(ext), dtype=bool)
    ok[2:] = (ext[2:] != blank) & (ext[2:] != ext[:-2])
    return ok


def _alpha(o: np.ndarray, ext: list[int], blank: int) -> np.ndarray:
    T, S = o.shape[0], len(ext)
    skip = _skip_allowed(ext, blank)
    emit = o[:, ext]  # T x S
    a = np.full((T, S), NEG_INF)
    a[0, 0] = emit[0, 0]
    if S > 1:
        a[0, 1] = emit[0, 1]
    for t in range(1, T):
        prev = a[t - 1]
        stay_adv = np.logaddexp(prev, np.concatenate([[NEG_INF], prev[:-1]]))
        two = np.concatenate([[NEG_INF, NEG_INF], prev[:-2]])[:S]
        stay_adv = np.where(skip, np.logaddexp(stay_adv, two), stay_adv)
        a[t] = stay_adv + emit[t]
    return a


def _beta(o: np.ndarray, ext: list[int], blank: int) -> np.ndarray:
    T, S = o.shape[0], len(ext)
    skip = _skip_allowed(ext, blank)
    emit = o[:, ext]
    b = np.full((T, S), NEG_INF)
    b[T - 1, S - 1] = emit[T - 1, S - 1]
    if S > 1:
        b[T - 1, S - 2] = emit[T - 1, S - 2]
    # skip into s+2 is allowed when skip[s+2]
    skip_from = np.concatenate([skip[2:], [False, False]])[-S:]
    for t in range(T - 2, -1, -1):
        nxt = b[t + 1]
        acc = np.logaddexp(nxt, np.concatenate([nxt[1:], [NEG_INF]]))
        two = np.concatenate([nxt[2:], [NEG_INF, NEG_INF]])[-S:]
        acc = np.where(skip_from, np.logaddexp(acc, two), acc)
        b[t] = acc + emit[t]
    return b


def _final(a: np.ndarray) -> float:
    last = a[-1, -1]
    return float(np.logaddexp(last, a[-1, -2])) if a.shape[1] > 1 else float(last)


def ctc_forward(o: np.ndarray, t: Sequence[int], blank: int = 0) -> float:
    """log p(t | o) for T x V per-frame log-probabilities ``o``; -inf when T is too short."""
    o = np.asarray(o, dtype=np.float64)
    t = list(t)
    if o.shape[0] < min_frames(t):
        return NEG_INF
    return _final(_alpha(o, expand_with_blanks(t, blank), blank))


def _log_normalize(o: np.ndarray) -> np.ndarray:
    m = o.max(axis=1, keepdims=True)
    return o - (m + np.log(np.exp(o - m).sum(axis=1, keepdims=True)))


def ctc_loss_grad(o: np.ndarray, t: Sequence[int], blank: int = 0) -> tuple[float, np.ndarray]:
    """Negative log-likelihood and its gradient with respect to the T x V scores ``o``.

    Rows are log-softmax normalised first (a no-op on valid log-probabilities),
    so the gradient is ``softmax(o) - occupancy`` and each row sums to zero.
    Infeasible inputs give ``(inf, zeros)``.
    """
    o = _log_normalize(np.asarray(o, dtype=np.float64))
    t = list(t)
    if o.shape[0] < min_frames(t):
        return float("inf"), np.zeros_like(o)
    ext = expand_with_blanks(t, blank)
    a = _alpha(o, ext, blank)
    b = _beta(o, ext, blank)
    logp = _final(a)
    # alpha*beta double-counts the emission at t
    occ_s = a + b - o[:, ext] - logp  # T x S
    occ = np.zeros_like(o)
    post = np.exp(occ_s)
    for s, k in enumerate(ext):
        occ[:, k] += post[:, s]
    return -logp, np.exp(o) - occ


def brute_force_likelihood(o: np.ndarray, t: Sequence[int], blank: int = 0, limit: int = 10**7) -> float:
    """Sum over every frame-label sequence whose collapse equals ``t``."""
    o = np.asarray(o, dtype=np.float64)
    T, V = o.shape
    if V**T > limit:
        raise ValueError(f"brute_force_likelihood: {V}^{T} paths exceeds the guard of {limit}")
    t = np.asarray(list(t), dtype=np.int64)
    paths = np.indices((V,) * T).reshape(T, -1).T  # every sequence, one per row
    keep = paths != blank
    keep[:, 1:] &= paths[:, 1:] != paths[:, :-1]
    n_kept = keep.sum(axis=1)
    match = n_kept == len(t)
    if len(t):
        pos = np.cumsum(keep, axis=1) - 1
        target = t[np.clip(pos, 0, len(t) - 1)]
        match &= np.all(~keep | (paths == target), axis=1)
    if not match.any():
        return NEG_INF
    scores = o[np.arange(T)[None, :], paths[match]].sum(axis=1)
    m = scores.max()
    return float(m + np.log(np.exp(scores - m).sum()))


class CTCLoss:
    """Batched CTC loss as a tape primitive.

    Per-utterance negative log-likelihoods are averaged over the utterances
    with a feasible length; infeasible ones contribute nothing and are counted
    in ``skipped``.
    """

    def __init__(self, blank: int = 0):
        self.blank = blank
        self.skipped = 0

    def __call__(self, logp: Tensor, targets: Sequence[Sequence[int]], lengths: Sequence[int]) -> Tensor:
        T, B, V = logp.shape
        if len(targets) != B or len(lengths) != B:
            raise ValueError(f"CTCLoss: batch of {B} with {len(targets)} targets and {len(lengths)} lengths")
        data = logp.data
        grad = np.zeros(data.shape, dtype=np.float64)
        total, used = 0.0, 0
        for i, (tgt, n) in enumerate(zip(targets, lengths)):
            if n < min_frames(tgt):
                self.skipped += 1
                continue
            # non-finite scores propagate so callers can detect divergence
            nll, g = ctc_loss_grad(data[:n, i, :], tgt, self.blank)
            total += nll
            grad[:n, i, :] = g
            used += 1
        denom = max(used, 1)
        grad /= denom
        grad = grad.astype(data.dtype)
        value = np.asarray(total / denom, dtype=data.dtype)
        return _make(value, (logp,), lambda g: (grad * g,), "ctc_loss")
