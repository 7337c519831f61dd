"""Feature sets, global normalisation and padded minibatches."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .checkpoint import FEAT_MAGIC, load_tensors, save_tensors
from .frontend import AudioSignal, lmfb, wiener_filter


@dataclass
class FeatureSet:
    """Per-utterance T x F log-mel matrices with their transcripts, in a fixed id order."""

    feats: dict[str, np.ndarray]
    texts: dict[str, str]

    @property
    def ids(self) -> list[str]:
        return list(self.feats)

    def __len__(self) -> int:
        return len(self.feats)

    def lengths(self, ids: Sequence[str] | None = None) -> list[int]:
        return [self.feats[i].shape[0] for i in (ids or self.ids)]

    def subset(self, ids: Iterable[str]) -> "FeatureSet":
        ids = list(ids)
        return FeatureSet({i: self.feats[i] for i in ids}, {i: self.texts[i] for i in ids})

    def map(self, fn) -> "FeatureSet":
        return FeatureSet({i: fn(f) for i, f in self.feats.items()}, dict(self.texts))

    def save(self, path) -> None:
        """FEAT container keyed by utterance id plus a sibling ``.txt`` with ``id<TAB>transcript`` rows."""
        save_tensors(path, self.feats, magic=FEAT_MAGIC)
        Path(str(path) + ".txt").write_text("".join(f"{i}\t{self.texts.get(i, '')}\n" for i in self.feats))

    @classmethod
    def load(cls, path) -> "FeatureSet":
        feats = load_tensors(path, magic=FEAT_MAGIC)
        texts = {}
        side = Path(str(path) + ".txt")
        if side.exists():
            for line in side.read_text().splitlines():
                uid, text = line.split("\t", 1)
                texts[uid] = text
        return cls(feats, {i: texts.get(i, "") for i in feats})


def extract(utts: Iterable[tuple[str, AudioSignal, str]], wiener: bool = False) -> FeatureSet:
    feats, texts = {}, {}
    for uid, sig, text in utts:
        if wiener:
            sig = wiener_filter(sig)
        feats[uid] = lmfb(sig).frames.astype(np.float32)
        texts[uid] = text
    return FeatureSet(feats, texts)


@dataclass
class FeatureStats:
    """Per-dimension mean and standard deviation shared by every network input."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, fs: FeatureSet) -> "FeatureStats":
        allf = np.concatenate([f.astype(np.float64) for f in fs.feats.values()])
        return cls(allf.mean(axis=0).astype(np.float32), np.maximum(allf.std(axis=0), 1e-3).astype(np.float32))

    def normalize(self, f: np.ndarray) -> np.ndarray:
        return ((f - self.mean) / self.std).astype(np.float32)

    def denormalize(self, f: np.ndarray) -> np.ndarray:
        return (f * self.std + self.mean).astype(np.float32)

    def save(self, path) -> None:
        save_tensors(path, {"mean": self.mean, "std": self.std}, magic=FEAT_MAGIC)

    @classmethod
    def load(cls, path) -> "FeatureStats":
        d = load_tensors(path, magic=FEAT_MAGIC)
        return cls(d["mean"], d["std"])


def pad_batch(mats: Sequence[np.ndarray]) -> tuple[np.ndarray, list[int]]:
    """Stack T_i x F matrices into a zero-padded T x B x F array."""
    lengths = [m.shape[0] for m in mats]
    out = np.zeros((max(lengths), len(mats), mats[0].shape[1]), dtype=np.float32)
    for i, m in enumerate(mats):
        out[: m.shape[0], i] = m
    return out, lengths


def bucketed_batches(ids: Sequence[str], lengths: Sequence[int], batch_size: int,
                     rng: np.random.Generator | None) -> list[list[str]]:
    """Group utterances of similar length; order is shuffled when ``rng`` is given.

    Lengths get a small random jitter before sorting so batch membership varies
    between epochs while padding stays low.
    """
    lengths = np.asarray(lengths, dtype=np.float64)
    if rng is not None:
        lengths = lengths * rng.uniform(0.9, 1.1, size=len(lengths))
    order = np.argsort(lengths, kind="stable")
    batches = [[ids[i] for i in order[k : k + batch_size]] for k in range(0, len(order), batch_size)]
    if rng is not None:
        batches = [batches[i] for i in rng.permutation(len(batches))]
    return batches
