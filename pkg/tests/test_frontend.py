import wave

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aasenh.frontend import (
    LOG_FLOOR, AudioFormatError, AudioSignal, frame_params, frames_of, hann, lmfb, mel_filterbank,
    mix_at_snr, read_wav, snr_db, stft, wiener_filter, write_wav,
)

SR = 16000


def _tone(freq, seconds=0.5, amp=0.5):
    t = np.arange(int(SR * seconds)) / SR
    return AudioSignal(amp * np.sin(2 * np.pi * freq * t), SR)


def _white(seconds, seed=0, std=0.1):
    return AudioSignal(np.random.default_rng(seed).normal(0, std, int(SR * seconds)), SR)


# ---------------------------------------------------------------- WAV


def _write_raw(path, data, channels=1, width=2):
    with wave.open(str(path), "wb") as w:
        w.setnchannels(channels)
        w.setsampwidth(width)
        w.setframerate(SR)
        w.writeframes(data)


def test_read_scaling(tmp_path):
    _write_raw(tmp_path / "a.wav", np.array([16384, -32768, 0], "<i2").tobytes())
    np.testing.assert_array_equal(read_wav(tmp_path / "a.wav").samples, [0.5, -1.0, 0.0])


def test_write_read_byte_identical(tmp_path):
    data = np.random.default_rng(0).integers(-32768, 32767, 4000).astype("<i2")
    _write_raw(tmp_path / "a.wav", data.tobytes())
    write_wav(read_wav(tmp_path / "a.wav"), tmp_path / "b.wav")
    assert (tmp_path / "a.wav").read_bytes() == (tmp_path / "b.wav").read_bytes()


def test_write_saturates(tmp_path):
    write_wav(AudioSignal([1.5, -2.0, 0.25]), tmp_path / "s.wav")
    np.testing.assert_array_equal(read_wav(tmp_path / "s.wav").samples, [32767 / 32768, -1.0, 0.25])


def test_stereo_rejected(tmp_path):
    _write_raw(tmp_path / "s.wav", np.zeros(8, "<i2").tobytes(), channels=2)
    with pytest.raises(AudioFormatError, match="expected mono"):
        read_wav(tmp_path / "s.wav")


def test_non_pcm16_and_truncated(tmp_path):
    _write_raw(tmp_path / "u8.wav", bytes(10), width=1)
    with pytest.raises(AudioFormatError, match="16-bit"):
        read_wav(tmp_path / "u8.wav")
    _write_raw(tmp_path / "t.wav", np.zeros(100, "<i2").tobytes())
    raw = (tmp_path / "t.wav").read_bytes()
    (tmp_path / "t2.wav").write_bytes(raw[:-50])
    with pytest.raises(AudioFormatError, match="truncated"):
        read_wav(tmp_path / "t2.wav")
    (tmp_path / "junk.wav").write_bytes(b"RIFF\x00\x00\x00\x00WAVEjunk")
    with pytest.raises(AudioFormatError):
        read_wav(tmp_path / "junk.wav")


# ---------------------------------------------------------------- STFT


def test_stft_shape():
    sig = _white(1.0)
    L, S, n_fft = frame_params(SR)
    assert (L, S, n_fft) == (400, 160, 512)
    spec = stft(sig)
    assert spec.shape == (1 + (SR - L) // S, 257)


def test_stft_too_short():
    with pytest.raises(ValueError, match="shorter than one frame"):
        stft(AudioSignal(np.zeros(100)))


def test_stft_tone_peak():
    spec = stft(_tone(1000.0))
    expected = int(round(1000.0 * 512 / SR))
    assert np.all(np.argmax(np.abs(spec), axis=1) == expected)


def test_stft_zero_signal():
    assert np.all(np.abs(stft(AudioSignal(np.zeros(2000)))) == 0)


def test_parseval():
    sig = _white(0.3, seed=3)
    L, S, n_fft = frame_params(SR)
    frames = frames_of(sig.samples, L, S) * hann(L)
    spec = stft(sig)
    # rebuild the two-sided energy from the one-sided spectrum
    p = np.abs(spec) ** 2
    two_sided = p[:, 0] + p[:, -1] + 2 * p[:, 1:-1].sum(axis=1)
    np.testing.assert_allclose(two_sided / n_fft, (frames**2).sum(axis=1), rtol=1e-6)


# ---------------------------------------------------------------- mel / LMFB


def test_filterbank_invariants():
    fb = mel_filterbank(40, 512, SR)
    assert fb.shape == (40, 257)
    assert np.all(fb >= 0)
    for row in fb:
        nz = np.flatnonzero(row)
        assert nz.size and np.all(np.diff(nz) == 1)  # contiguous support
    for a, b in zip(fb[:-1], fb[1:]):
        assert np.any((a > 0) & (b > 0))  # adjacent overlap
    interior = fb[:, 1:-1]  # bins strictly between 0 Hz and 8 kHz
    assert np.all(interior.sum(axis=0) > 0)


def test_lmfb_zero_signal():
    feats = lmfb(AudioSignal(np.zeros(4000))).frames
    assert feats.shape[1] == 40
    np.testing.assert_allclose(feats, np.log(LOG_FLOOR))


def test_lmfb_white_noise_flat():
    feats = lmfb(_white(3.0, seed=1)).frames
    band_db = 10 * np.log10(np.exp(feats).mean(axis=0))
    assert band_db.max() - band_db.min() < 6.0


def test_lmfb_amplitude_homogeneity():
    sig = _white(0.5, seed=2)
    a = lmfb(sig).frames
    b = lmfb(AudioSignal(sig.samples * 2)).frames
    np.testing.assert_allclose(b - a, np.log(4.0), atol=1e-9)


def test_lmfb_band_monotone():
    base = _white(0.5, seed=4, std=0.01)
    fb = mel_filterbank(40, 512, SR)
    band = 12
    centre_bin = int(np.argmax(fb[band]))
    freq = centre_bin * SR / 512
    louder = AudioSignal(base.samples + _tone(freq, 0.5, 0.05).samples)
    assert np.all(lmfb(louder).frames[:, band] >= lmfb(base).frames[:, band] - 1e-12)


def test_lmfb_shift_covariant():
    sig = _white(0.6, seed=5)
    delayed = AudioSignal(np.concatenate([np.zeros(160), sig.samples]))
    a, b = lmfb(sig).frames, lmfb(delayed).frames
    np.testing.assert_allclose(b[1 : a.shape[0]], a[: a.shape[0] - 1], atol=1e-5)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=400, max_size=1200))
def test_lmfb_finite(xs):
    assert np.all(np.isfinite(lmfb(AudioSignal(np.array(xs))).frames))


# ---------------------------------------------------------------- mixing


def test_mix_zero_db_equal_power():
    clean, noise = _tone(700, 0.5), _white(1.0)
    _, s, v = mix_at_snr(clean, noise, 0.0, np.random.default_rng(0), return_parts=True)
    np.testing.assert_allclose(np.mean(v**2), np.mean(s**2), rtol=1e-6)


def test_mix_clean_sentinel():
    clean = _tone(700, 0.5)
    out = mix_at_snr(clean, _white(1.0), float("inf"))
    np.testing.assert_array_equal(out.samples, clean.samples)


@pytest.mark.parametrize("snr", [15.0, 10.0, 5.0, 0.0, 17.5, 12.5, 7.5, 2.5])
def test_mix_measured_snr(snr):
    clean, noise = _tone(700, 0.5, amp=0.9), _white(2.0, std=0.5)
    mix, s, v = mix_at_snr(clean, noise, snr, np.random.default_rng(1), return_parts=True)
    np.testing.assert_allclose(mix.samples, s + v)
    assert abs(snr_db(s, v) - snr) < 0.1
    assert np.max(np.abs(mix.samples)) <= 1.0


def test_mix_known_offset_recovers_snr():
    clean, noise = _tone(700, 0.5, amp=0.3), _white(2.0)
    mix = mix_at_snr(clean, noise, 5.0, offset=1234)
    assert np.max(np.abs(mix.samples)) < 1.0  # no peak rescaling in play
    seg = noise.samples[1234 : 1234 + len(clean)]
    # mixture minus clean is a scaled copy of the known segment
    resid = mix.samples - clean.samples
    scale = np.dot(resid, seg) / np.dot(seg, seg)
    np.testing.assert_allclose(resid, scale * seg, atol=1e-12)
    assert abs(snr_db(clean.samples, resid) - 5.0) < 0.1


@settings(max_examples=30, deadline=None)
@given(st.floats(-5, 20), st.integers(0, 2**16))
def test_mix_snr_property(snr, seed):
    clean, noise = _tone(900, 0.2), _white(0.5, seed=seed % 7)
    _, s, v = mix_at_snr(clean, noise, snr, np.random.default_rng(seed), return_parts=True)
    assert abs(snr_db(s, v) - snr) < 0.1


def test_mix_errors():
    with pytest.raises(ValueError, match="zero power"):
        mix_at_snr(AudioSignal(np.zeros(100)), _white(1.0), 5.0)
    with pytest.raises(ValueError, match="zero power"):
        mix_at_snr(_tone(500, 0.01), AudioSignal(np.zeros(1000)), 5.0)
    with pytest.raises(ValueError, match="shorter"):
        mix_at_snr(_tone(500, 0.5), _white(0.1), 5.0)


# ---------------------------------------------------------------- Wiener


def test_wiener_stationary_noise_reduction():
    noise = _white(2.0, seed=6)
    out = wiener_filter(noise)
    assert len(out) == len(noise)
    reduction = 10 * np.log10(np.sum(noise.samples**2) / np.sum(out.samples**2))
    assert reduction >= 6.0


def test_wiener_passes_clean_tone():
    sig = _tone(1000, 1.0)
    # quiet noise-only prefix stands in for a silent lead-in
    x = np.concatenate([np.random.default_rng(0).normal(0, 1e-4, 4000), sig.samples])
    out = wiener_filter(AudioSignal(x)).samples
    assert np.corrcoef(out, x)[0, 1] > 0.9


def test_wiener_unit_floor_is_identity():
    noisy = AudioSignal(_tone(800, 0.6).samples + _white(0.6, seed=7).samples)
    out = wiener_filter(noisy, gain_floor=1.0)
    assert np.max(np.abs(out.samples - noisy.samples)) < 1e-3


def test_wiener_too_short():
    with pytest.raises(ValueError, match="noise prefix"):
        wiener_filter(AudioSignal(np.ones(1000) * 0.1))
