import numpy as np
import pytest

from aasenh.corpus import (
    Lexicon, ToyCorpusSpec, load_split, make_noise, read_manifest, render, split_rng, synth_split, synth_toy_corpus,
    write_corpus,
)
from aasenh.frontend import AudioSignal, lmfb, snr_db


def test_spec_round_trip():
    spec = ToyCorpusSpec(seed=7)
    assert ToyCorpusSpec.from_dict(spec.to_dict()) == spec


def test_spec_validation():
    with pytest.raises(ValueError):
        ToyCorpusSpec(letters="abz").validate()
    with pytest.raises(ValueError):
        ToyCorpusSpec(signatures={**ToyCorpusSpec().signatures, "b": (600.0, 1800.0)}).validate()


def test_lexicon_deterministic_and_in_alphabet():
    spec = ToyCorpusSpec()
    a, b = Lexicon(spec), Lexicon(spec)
    assert a.words == b.words and len(set(a.words)) == spec.lexicon_size
    assert all(set(w) <= set(spec.letters) for w in a.words)
    assert np.allclose(a.trans.sum(axis=1), 1)


def test_render_has_silent_lead():
    spec = ToyCorpusSpec()
    x = render(spec, "ab c", split_rng(0, "t"))
    lead = int(spec.lead_ms * spec.sample_rate / 1000)
    assert np.std(x[:lead]) < 2 * spec.dither
    assert np.std(x[lead:]) > 10 * spec.dither


def test_letters_are_spectrally_distinct():
    spec = ToyCorpusSpec(pitch_jitter=0.0)
    means = {c: lmfb(AudioSignal(render(spec, c * 3, split_rng(0, c)))).frames[30:-10].mean(axis=0)
             for c in spec.letters}
    for c in spec.letters:
        for d in spec.letters:
            if c != d:
                assert np.abs(means[c] - means[d]).max() > 2.0


@pytest.mark.parametrize("kind", ["white", "pink", "brown", "buzz"])
def test_noise_types(kind):
    x = make_noise(kind, 16000, np.random.default_rng(0))
    assert x.shape == (16000,) and np.isfinite(x).all() and np.abs(x).max() == pytest.approx(0.3)


def test_unknown_noise():
    with pytest.raises(ValueError):
        make_noise("rain", 10, np.random.default_rng(0))


def test_noisy_split_snrs_and_pairs():
    spec = ToyCorpusSpec(noise_seconds=5.0)
    utts = synth_split(spec, "noisy-test", 12)
    for u in utts:
        assert u.snr in spec.test_snrs and u.noise_type in spec.noise_types
        assert snr_db(u.clean, u.samples - u.clean) == pytest.approx(u.snr, abs=1e-6)


def test_splits_deterministic_and_distinct():
    spec = ToyCorpusSpec(noise_seconds=5.0)
    a = synth_split(spec, "am-train", 5)
    b = synth_split(spec, "am-train", 5)
    c = synth_split(spec, "am-valid", 5)
    assert all(np.array_equal(x.samples, y.samples) for x, y in zip(a, b))
    assert not np.array_equal(a[0].samples, c[0].samples)
    assert {u.utt_id for u in a}.isdisjoint({u.utt_id for u in c})


def test_unknown_split():
    with pytest.raises(ValueError):
        synth_split(ToyCorpusSpec(), "dev", 1)


def test_write_and_load(tmp_path):
    corpus = synth_toy_corpus(ToyCorpusSpec(noise_seconds=5.0), {"am-train": 2, "noisy-valid": 2})
    write_corpus(corpus, tmp_path)
    rows = read_manifest(tmp_path / "noisy-valid.tsv")
    assert [r[0] for r in rows] == [u.utt_id for u in corpus["noisy-valid"]]
    clean = load_split(tmp_path, "noisy-valid-clean")
    assert np.allclose(clean[0][1].samples, corpus["noisy-valid"][0].clean, atol=1 / 32768)
    assert load_split(tmp_path, "am-train")[1][2] == corpus["am-train"][1].transcript


def test_manifest_bad_row(tmp_path):
    (tmp_path / "m.tsv").write_text("only\ttwo\n")
    with pytest.raises(ValueError):
        read_manifest(tmp_path / "m.tsv")
