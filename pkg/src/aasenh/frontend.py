"""Waveform I/O, STFT, log-mel features, SNR mixing and the Wiener baseline."""
from __future__ import annotations

import wave
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

LOG_FLOOR = 1e-10


class AudioFormatError(ValueError):
    pass


@dataclass
class AudioSignal:
    samples: np.ndarray
    sample_rate: int = 16000

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise ValueError("AudioSignal needs a non-empty 1-D sample array")

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass
class FeatureMatrix:
    frames: np.ndarray  # T x F
    frame_shift_ms: float = 10.0
    frame_length_ms: float = 25.0

    @property
    def shape(self):
        return self.frames.shape


# ---------------------------------------------------------------- WAV


def read_wav(path) -> AudioSignal:
    try:
        with wave.open(str(path), "rb") as w:
            channels, width, rate, n = w.getnchannels(), w.getsampwidth(), w.getframerate(), w.getnframes()
            if channels != 1:
                raise AudioFormatError(f"{path}: expected mono, got {channels} channels")
            if width != 2:
                raise AudioFormatError(f"{path}: expected 16-bit PCM, got {8 * width}-bit samples")
            raw = w.readframes(n)
    except wave.Error as exc:
        raise AudioFormatError(f"{path}: not a PCM RIFF/WAVE file ({exc})") from exc
    except EOFError as exc:
        raise AudioFormatError(f"{path}: truncated header") from exc
    if len(raw) != 2 * n:
        raise AudioFormatError(f"{path}: truncated data ({len(raw) // 2} of {n} samples)")
    if n == 0:
        raise AudioFormatError(f"{path}: no samples")
    return AudioSignal(np.frombuffer(raw, dtype="<i2") / 32768.0, rate)


def to_pcm16(samples: np.ndarray) -> np.ndarray:
    return np.clip(np.round(np.asarray(samples) * 32768.0), -32768, 32767).astype("<i2")


def write_wav(signal: AudioSignal, path) -> None:
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(signal.sample_rate)
        w.writeframes(to_pcm16(signal.samples).tobytes())


# ---------------------------------------------------------------- spectral analysis


def frame_params(sample_rate: int, frame_length_ms: float = 25.0, frame_shift_ms: float = 10.0):
    length = int(round(sample_rate * frame_length_ms / 1000))
    shift = int(round(sample_rate * frame_shift_ms / 1000))
    n_fft = 1 << (length - 1).bit_length()
    return length, shift, n_fft


def hann(length: int) -> np.ndarray:
    # periodic Hann
    return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(length) / length)


def frames_of(x: np.ndarray, length: int, shift: int) -> np.ndarray:
    n = 1 + (x.size - length) // shift
    idx = np.arange(n)[:, None] * shift + np.arange(length)[None, :]
    return x[idx]


def stft(signal: AudioSignal, frame_length_ms: float = 25.0, frame_shift_ms: float = 10.0) -> np.ndarray:
    """Hann-windowed STFT, T x (n_fft/2 + 1), with n_fft the next power of two above the frame."""
    length, shift, n_fft = frame_params(signal.sample_rate, frame_length_ms, frame_shift_ms)
    if len(signal) < length:
        raise ValueError(f"stft: signal has {len(signal)} samples, shorter than one frame ({length})")
    fr = frames_of(signal.samples, length, shift) * hann(length)
    return np.fft.rfft(fr, n=n_fft, axis=1)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


@lru_cache(maxsize=8)
def mel_filterbank(n_mels: int = 40, n_fft: int = 512, sample_rate: int = 16000,
                   f_min: float = 0.0, f_max: float | None = None) -> np.ndarray:
    """Triangular HTK-mel filters, n_mels x (n_fft/2 + 1), each normalised to unit sum.

    Unit-sum rows make every band a weighted average of the power spectrum, so
    a flat spectrum yields flat band energies regardless of filter width.
    """
    f_max = sample_rate / 2 if f_max is None else f_max
    edges = mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2))
    freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (freqs - lo) / (mid - lo)
    down = (hi - freqs) / (hi - mid)
    fb = np.maximum(0.0, np.minimum(up, down))
    sums = fb.sum(axis=1, keepdims=True)
    if np.any(sums == 0):
        raise ValueError("mel_filterbank: a filter covers no FFT bin; lower n_mels or raise n_fft")
    fb = fb / sums
    fb.setflags(write=False)
    return fb


def lmfb(signal: AudioSignal, n_mels: int = 40, frame_length_ms: float = 25.0,
         frame_shift_ms: float = 10.0, floor: float = LOG_FLOOR) -> FeatureMatrix:
    """Log mel filterbank energies, T x n_mels."""
    spec = stft(signal, frame_length_ms, frame_shift_ms)
    _, _, n_fft = frame_params(signal.sample_rate, frame_length_ms, frame_shift_ms)
    power = spec.real**2 + spec.imag**2
    mel = power @ mel_filterbank(n_mels, n_fft, signal.sample_rate).T
    return FeatureMatrix(np.log(np.maximum(mel, floor)), frame_shift_ms, frame_length_ms)


# ---------------------------------------------------------------- mixing


def power(x: np.ndarray) -> float:
    return float(np.mean(np.square(x)))


def snr_db(clean: np.ndarray, noise: np.ndarray) -> float:
    return 10.0 * np.log10(power(clean) / power(noise))


def mix_at_snr(clean: AudioSignal, noise: AudioSignal, snr: float, rng: np.random.Generator | None = None,
               offset: int | None = None, return_parts: bool = False):
    """Add a contiguous noise segment to ``clean`` at the requested SNR in dB.

    ``snr=inf`` returns the clean signal unchanged. The mixture is scaled down
    if its peak exceeds 1; the same factor is applied to both returned parts.
    """
    if power(clean.samples) == 0:
        raise ValueError("mix_at_snr: clean signal has zero power")
    if np.isinf(snr) and snr > 0:
        out = AudioSignal(clean.samples.copy(), clean.sample_rate)
        return (out, clean.samples.copy(), np.zeros_like(clean.samples)) if return_parts else out
    n = len(clean)
    if len(noise) < n:
        raise ValueError(f"mix_at_snr: noise ({len(noise)} samples) shorter than clean ({n})")
    if offset is None:
        rng = rng or np.random.default_rng()
        offset = int(rng.integers(0, len(noise) - n + 1))
    seg = noise.samples[offset : offset + n]
    pn = power(seg)
    if pn == 0:
        raise ValueError("mix_at_snr: noise segment has zero power")
    gain = np.sqrt(power(clean.samples) / (pn * 10.0 ** (snr / 10.0)))
    s, v = clean.samples, seg * gain
    mix = s + v
    peak = np.max(np.abs(mix))
    if peak > 1.0:
        s, v, mix = s / peak, v / peak, mix / peak
    out = AudioSignal(mix, clean.sample_rate)
    return (out, s, v) if return_parts else out


# ---------------------------------------------------------------- Wiener baseline


def istft(spec: np.ndarray, length: int, frame_len: int, shift: int, n_fft: int) -> np.ndarray:
    """Weighted overlap-add inverse of :func:`stft` (least-squares synthesis with the Hann window)."""
    win = hann(frame_len)
    frames = np.fft.irfft(spec, n=n_fft, axis=1)[:, :frame_len] * win
    out = np.zeros(length)
    norm = np.zeros(length)
    for t in range(frames.shape[0]):
        s = t * shift
        out[s : s + frame_len] += frames[t]
        norm[s : s + frame_len] += win * win
    nz = norm > 1e-8
    out[nz] /= norm[nz]
    return out


def wiener_filter(noisy: AudioSignal, smoothing: float = 0.98, gain_floor: float = 0.1,
                  noise_ms: float = 250.0, frame_length_ms: float = 25.0, frame_shift_ms: float = 10.0) -> AudioSignal:
    """Decision-directed Wiener filter with the noise PSD taken from the leading ``noise_ms``."""
    sr = noisy.sample_rate
    x = noisy.samples
    n_noise = int(round(sr * noise_ms / 1000))
    if len(x) < n_noise:
        raise ValueError(f"wiener_filter: {len(x)} samples is shorter than the {noise_ms} ms noise prefix")
    L, S, n_fft = frame_params(sr, frame_length_ms, frame_shift_ms)
    # pad so every original sample is covered by full windows
    n_frames = -(-(len(x) + 2 * L) // S)
    padded = np.zeros((n_frames - 1) * S + L)
    padded[L : L + len(x)] = x
    win = hann(L)
    spec = np.fft.rfft(frames_of(padded, L, S) * win, n=n_fft, axis=1)
    pw = np.abs(spec) ** 2

    noise_frames = frames_of(np.concatenate([x[:n_noise], np.zeros(max(L - n_noise, 0))]), L, S)
    noise_psd = np.mean(np.abs(np.fft.rfft(noise_frames * win, n=n_fft, axis=1)) ** 2, axis=0)
    noise_psd = np.maximum(noise_psd, 1e-12)

    gains = np.empty_like(pw)
    g_prev = np.ones(pw.shape[1])
    post_prev = np.ones(pw.shape[1])
    for t in range(pw.shape[0]):
        post = pw[t] / noise_psd
        ml = np.maximum(post - 1.0, 0.0)
        xi = smoothing * g_prev**2 * post_prev + (1 - smoothing) * ml
        g = np.maximum(xi / (1.0 + xi), gain_floor)
        gains[t] = g
        g_prev, post_prev = g, post
    y = istft(spec * gains, len(padded), L, S, n_fft)[L : L + len(x)]
    return AudioSignal(y, sr)
