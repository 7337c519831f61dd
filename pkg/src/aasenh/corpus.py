"""Synthetic tone-stack "speech" corpus with a seeded noise bank.

Each grapheme is rendered as a short stack of sinusoids (its signature);
whitespace is silence. Sentences are drawn from a small seeded lexicon via a
word bigram chain, so a word n-gram LM has something to learn.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .frontend import AudioSignal, mix_at_snr, read_wav, write_wav

DEFAULT_SIGNATURES = {
    "a": (600.0, 1800.0),
    "b": (900.0, 2600.0),
    "c": (1200.0, 3300.0),
    "d": (450.0, 2200.0),
    "e": (1500.0, 3000.0),
}


@dataclass
class ToyCorpusSpec:
    letters: str = "abcde"
    signatures: dict = field(default_factory=lambda: dict(DEFAULT_SIGNATURES))
    grapheme_ms: tuple = (70.0, 120.0)  # uniform per letter
    space_ms: tuple = (50.0, 90.0)
    lead_ms: float = 260.0  # noise-only prefix for the Wiener noise estimate
    tail_ms: float = 60.0
    crossfade_ms: float = 5.0
    amplitude: tuple = (0.15, 0.3)  # per-tone peak amplitude
    pitch_jitter: float = 0.03
    dither: float = 3e-3  # background floor about 36 dB below the tones
    lexicon_size: int = 12
    word_length_probs: dict = field(default_factory=lambda: {1: 0.2, 2: 0.5, 3: 0.3})
    words_per_utt_probs: dict = field(default_factory=lambda: {1: 0.25, 2: 0.4, 3: 0.35})
    noise_types: tuple = ("white", "pink", "brown", "buzz")
    train_snrs: tuple = (15.0, 10.0, 5.0, 0.0)
    test_snrs: tuple = (17.5, 12.5, 7.5, 2.5)
    noise_seconds: float = 20.0
    sample_rate: int = 16000
    seed: int = 0

    def validate(self) -> None:
        if not self.letters:
            raise ValueError("ToyCorpusSpec: empty grapheme inventory")
        missing = [c for c in self.letters if c not in self.signatures]
        if missing:
            raise ValueError(f"ToyCorpusSpec: no signature for {missing}")
        sigs = [tuple(sorted(self.signatures[c])) for c in self.letters]
        if len(set(sigs)) != len(sigs):
            raise ValueError("ToyCorpusSpec: grapheme signatures must be pairwise distinct")
        if not all(np.isfinite(s) for s in (*self.train_snrs, *self.test_snrs)):
            raise ValueError("ToyCorpusSpec: SNR grid must be finite")

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["signatures"] = {k: list(v) for k, v in self.signatures.items()}
        d["word_length_probs"] = {str(k): v for k, v in self.word_length_probs.items()}
        d["words_per_utt_probs"] = {str(k): v for k, v in self.words_per_utt_probs.items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ToyCorpusSpec":
        d = dict(d)
        for key in ("word_length_probs", "words_per_utt_probs"):
            if key in d:
                d[key] = {int(k): float(v) for k, v in d[key].items()}
        if "signatures" in d:
            d["signatures"] = {k: tuple(v) for k, v in d["signatures"].items()}
        for key in ("grapheme_ms", "space_ms", "amplitude", "noise_types", "train_snrs", "test_snrs"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass
class Utterance:
    utt_id: str
    samples: np.ndarray
    transcript: str
    clean: np.ndarray | None = None  # paired clean source of a mixture
    snr: float | None = None
    noise_type: str | None = None


def split_rng(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng([seed, zlib.crc32(name.encode())])


def _categorical(rng, probs: dict) -> int:
    keys = sorted(probs)
    p = np.array([probs[k] for k in keys], dtype=float)
    return keys[int(rng.choice(len(keys), p=p / p.sum()))]


class Lexicon:
    """Seeded word list plus a sparse bigram chain over it."""

    def __init__(self, spec: ToyCorpusSpec):
        rng = split_rng(spec.seed, "lexicon")
        words: list[str] = []
        tries = 0
        while len(words) < spec.lexicon_size:
            n = _categorical(rng, spec.word_length_probs)
            w = "".join(rng.choice(list(spec.letters), size=n))
            tries += 1
            if w not in words:
                words.append(w)
            elif tries > 10000:
                raise ValueError("Lexicon: cannot draw enough distinct words; raise word lengths")
        self.words = words
        k = len(words)
        self.start = rng.dirichlet(np.full(k, 0.5))
        self.trans = rng.dirichlet(np.full(k, 0.3), size=k)

    def sentence(self, rng, n_words: int) -> str:
        idx = [int(rng.choice(len(self.words), p=self.start))]
        for _ in range(n_words - 1):
            idx.append(int(rng.choice(len(self.words), p=self.trans[idx[-1]])))
        return " ".join(self.words[i] for i in idx)


def draw_transcript(spec: ToyCorpusSpec, lexicon: Lexicon, rng) -> str:
    return lexicon.sentence(rng, _categorical(rng, spec.words_per_utt_probs))


def _ramp(n: int, fade: int) -> np.ndarray:
    env = np.ones(n)
    f = min(fade, n // 2)
    if f > 0:
        r = 0.5 - 0.5 * np.cos(np.pi * (np.arange(f) + 0.5) / f)
        env[:f] = r
        env[n - f :] = r[::-1]
    return env


def render(spec: ToyCorpusSpec, transcript: str, rng) -> np.ndarray:
    """Waveform for a transcript: tone stacks per letter, silence per space, 5 ms cross-fades."""
    sr = spec.sample_rate
    fade = int(round(sr * spec.crossfade_ms / 1000))
    pitch = 1.0 + rng.uniform(-spec.pitch_jitter, spec.pitch_jitter)
    segments = []
    for ch in transcript:
        lo, hi = spec.space_ms if ch == " " else spec.grapheme_ms
        n = int(round(sr * rng.uniform(lo, hi) / 1000)) + fade
        if ch == " ":
            segments.append(np.zeros(n))
            continue
        t = np.arange(n) / sr
        seg = np.zeros(n)
        for f in spec.signatures[ch]:
            amp = rng.uniform(*spec.amplitude)
            seg += amp * np.sin(2 * np.pi * f * pitch * t + rng.uniform(0, 2 * np.pi))
        segments.append(seg * _ramp(n, fade))
    lead = int(round(sr * spec.lead_ms / 1000))
    tail = int(round(sr * spec.tail_ms / 1000))
    total = lead + tail + sum(len(s) for s in segments) - fade * max(len(segments) - 1, 0)
    out = np.zeros(total)
    pos = lead
    for seg in segments:
        out[pos : pos + len(seg)] += seg
        pos += len(seg) - fade
    out += rng.normal(0.0, spec.dither, size=total)
    return np.clip(out, -1.0, 1.0)


def make_noise(kind: str, n: int, rng, sample_rate: int = 16000) -> np.ndarray:
    if kind == "white":
        x = rng.standard_normal(n)
    elif kind in ("pink", "brown"):
        spec = np.fft.rfft(rng.standard_normal(n))
        f = np.arange(spec.size, dtype=float)
        f[0] = 1.0
        spec /= np.sqrt(f) if kind == "pink" else f
        spec[0] = 0.0
        x = np.fft.irfft(spec, n=n)
    elif kind == "buzz":
        t = np.arange(n) / sample_rate
        f0 = rng.uniform(110, 140)
        x = sum(np.sin(2 * np.pi * k * f0 * t + rng.uniform(0, 2 * np.pi)) / np.sqrt(k) for k in range(1, 30))
        x = x + 0.3 * rng.standard_normal(n)
    else:
        raise ValueError(f"unknown noise type {kind!r}")
    return 0.3 * x / np.max(np.abs(x))


def noise_bank(spec: ToyCorpusSpec, name: str) -> dict[str, np.ndarray]:
    rng = split_rng(spec.seed, f"noise/{name}")
    n = int(spec.noise_seconds * spec.sample_rate)
    return {kind: make_noise(kind, n, rng, spec.sample_rate) for kind in spec.noise_types}


# split name -> (noisy?, SNR grid attribute, noise bank)
SPLITS = {
    "am-train": (False, None, None),
    "am-valid": (False, None, None),
    "noisy-train": (True, "train_snrs", "train"),
    "noisy-valid": (True, "train_snrs", "train"),
    "noisy-test": (True, "test_snrs", "test"),
}


def synth_split(spec: ToyCorpusSpec, name: str, size: int, lexicon: Lexicon | None = None,
                banks: dict | None = None) -> list[Utterance]:
    spec.validate()
    if name not in SPLITS:
        raise ValueError(f"unknown split {name!r}; expected one of {sorted(SPLITS)}")
    lexicon = lexicon or Lexicon(spec)
    noisy, grid_attr, bank_name = SPLITS[name]
    rng = split_rng(spec.seed, name)
    bank = None
    if noisy:
        bank = (banks or {}).get(bank_name) or noise_bank(spec, bank_name)
    out = []
    for i in range(size):
        text = draw_transcript(spec, lexicon, rng)
        clean = render(spec, text, rng)
        uid = f"{name}-{i:05d}"
        if not noisy:
            out.append(Utterance(uid, clean, text))
            continue
        kind = spec.noise_types[int(rng.integers(len(spec.noise_types)))]
        grid = getattr(spec, grid_attr)
        snr = float(grid[int(rng.integers(len(grid)))])
        mix, s, _ = mix_at_snr(AudioSignal(clean, spec.sample_rate), AudioSignal(bank[kind], spec.sample_rate),
                               snr, rng, return_parts=True)
        out.append(Utterance(uid, mix.samples, text, clean=s, snr=snr, noise_type=kind))
    return out


def synth_toy_corpus(spec: ToyCorpusSpec, sizes: dict[str, int]) -> dict[str, list[Utterance]]:
    spec.validate()
    lexicon = Lexicon(spec)
    banks = {"train": noise_bank(spec, "train"), "test": noise_bank(spec, "test")}
    return {name: synth_split(spec, name, n, lexicon, banks) for name, n in sizes.items()}


# ---------------------------------------------------------------- on-disk layout


def write_manifest(path, rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for uid, wav, text in rows:
            fh.write(f"{uid}\t{wav}\t{text}\n")


def read_manifest(path) -> list[tuple[str, str, str]]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ValueError(f"{path}:{lineno}: expected 3 tab-separated fields")
            rows.append((parts[0], parts[1], parts[2]))
    return rows


def write_corpus(corpus: dict[str, list[Utterance]], data_dir, sample_rate: int = 16000) -> None:
    """Write WAVs plus ``<split>.tsv`` manifests; mixtures also get a ``<split>-clean`` paired manifest."""
    data_dir = Path(data_dir)
    for split, utts in corpus.items():
        wav_dir = data_dir / "wav" / split
        wav_dir.mkdir(parents=True, exist_ok=True)
        rows, clean_rows = [], []
        for u in utts:
            rel = Path("wav") / split / f"{u.utt_id}.wav"
            write_wav(AudioSignal(u.samples, sample_rate), data_dir / rel)
            rows.append((u.utt_id, str(rel), u.transcript))
            if u.clean is not None:
                crel = Path("wav") / split / f"{u.utt_id}.clean.wav"
                write_wav(AudioSignal(u.clean, sample_rate), data_dir / crel)
                clean_rows.append((u.utt_id, str(crel), u.transcript))
        write_manifest(data_dir / f"{split}.tsv", rows)
        if clean_rows:
            write_manifest(data_dir / f"{split}-clean.tsv", clean_rows)


def load_split(data_dir, split: str) -> list[tuple[str, AudioSignal, str]]:
    data_dir = Path(data_dir)
    return [(uid, read_wav(data_dir / wav), text) for uid, wav, text in read_manifest(data_dir / f"{split}.tsv")]
