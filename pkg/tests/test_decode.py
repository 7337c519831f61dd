import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aasenh.ctc import ctc_forward
from aasenh.decode import (
    Hypothesis, NGramLM, RescoreCfg, beam_nbest, corpus_wer, dce, edit_distance, greedy_decode, lm_logprob,
    rescore, rescore_score, train_ngram, wer, write_nbest,
)


def _rand_logp(rng, T, V, scale=1.5):
    x = rng.standard_normal((T, V)) * scale
    return x - np.log(np.exp(x).sum(axis=1, keepdims=True))


def _one_hot(path, V, low=-30.0):
    o = np.full((len(path), V), low)
    o[np.arange(len(path)), path] = 0.0
    return o


def _all_transcripts(T, V):
    syms = range(1, V)
    return [t for n in range(T + 1) for t in itertools.product(syms, repeat=n)]


# ---------------------------------------------------------------- greedy / beam


def test_greedy_one_hot():
    assert greedy_decode(_one_hot([0, 1, 0], 3)) == [1]


def test_greedy_all_blank():
    assert greedy_decode(_one_hot([0, 0, 0, 0], 3)) == []


def test_greedy_below_exact_best_path():
    rng = np.random.default_rng(0)
    for _ in range(20):
        o = _rand_logp(rng, 6, 3)
        greedy_path = np.argmax(o, axis=1)
        g_score = o[np.arange(6), greedy_path].sum()
        best = max(sum(o[f, p[f]] for f in range(6)) for p in itertools.product(range(3), repeat=6))
        assert g_score <= best + 1e-12
        # the argmax path is the best single path by construction
        assert g_score == pytest.approx(best)


def test_beam_n1_peaked_equals_greedy():
    o = _one_hot([1, 1, 0, 2, 2, 0, 1], 3, low=-8.0)
    assert list(beam_nbest(o, 1)[0].y) == greedy_decode(o)


def test_beam_top1_exact_on_tiny():
    rng = np.random.default_rng(1)
    for _ in range(10):
        o = _rand_logp(rng, 5, 3)
        allt = _all_transcripts(5, 3)
        exact = max(allt, key=lambda t: ctc_forward(o, t))
        hyps = beam_nbest(o, len(allt))
        assert hyps[0].y == exact
        assert hyps[0].am_score == pytest.approx(ctc_forward(o, exact), abs=1e-9)


def test_beam_full_width_recovers_posterior_ranking():
    rng = np.random.default_rng(2)
    o = _rand_logp(rng, 4, 3)
    allt = _all_transcripts(4, 3)
    hyps = beam_nbest(o, len(allt))
    scores = {h.y: h.am_score for h in hyps}
    for t in allt:
        lp = ctc_forward(o, t)
        if np.isfinite(lp):
            assert scores[t] == pytest.approx(lp, abs=1e-9)
    assert [h.am_score for h in hyps] == sorted((h.am_score for h in hyps), reverse=True)


def test_beam_scores_sorted_and_bounded():
    rng = np.random.default_rng(3)
    hyps = beam_nbest(_rand_logp(rng, 12, 5), 10, symbols="_abcd")
    scores = [h.am_score for h in hyps]
    assert len(hyps) <= 10
    assert scores == sorted(scores, reverse=True)
    assert all(s <= 0 for s in scores)
    assert all(h.text == "".join("_abcd"[i] for i in h.y) for h in hyps)


def test_beam_rejects_zero_width():
    with pytest.raises(ValueError):
        beam_nbest(np.zeros((2, 2)), 0)


# ---------------------------------------------------------------- LM


def test_ngram_deterministic_bigram():
    lm = train_ngram(["a b"] * 100, n=2, k=0.01)
    # add-k closed form: (100 + k) / (100 + k |V|), V = {a, b, </s>, <unk>}
    assert lm.prob("b", ["a"]) == pytest.approx((100 + 0.01) / (100 + 0.01 * 4))
    assert lm.prob("b", ["a"]) > 0.999


def test_ngram_unigram_uniform():
    rng = np.random.default_rng(4)
    words = [f"w{i}" for i in range(8)]
    corpus = [" ".join(rng.choice(words, size=2000)) for _ in range(50)]
    lm = train_ngram(corpus, n=1, k=1.0)
    for w in words:
        assert math.log(lm.prob(w, [])) == pytest.approx(math.log(1 / 8), abs=0.05)


def test_ngram_normalised():
    rng = np.random.default_rng(5)
    words = ["a", "ab", "c", "dd", "e"]
    lm = train_ngram([" ".join(rng.choice(words, size=rng.integers(1, 6))) for _ in range(300)], n=3, k=0.1)
    for _ in range(100):
        ctx = list(rng.choice(words + ["<s>", "zz"], size=2))
        assert sum(lm.prob(w, ctx) for w in lm.vocab) == pytest.approx(1.0, abs=1e-9)


def test_ngram_unknown_word_maps_to_unk():
    lm = train_ngram(["a b", "b a"], n=2, k=0.5)
    assert lm.prob("zzz", ["a"]) == lm.prob("<unk>", ["a"])
    assert np.isfinite(lm_logprob(lm, "qq a"))


def test_ngram_save_load(tmp_path):
    lm = train_ngram(["a b c", "a c", "b"], n=3, k=0.2)
    lm.save(tmp_path / "lm.txt")
    back = NGramLM.load(tmp_path / "lm.txt")
    for s in ["a b c", "c c", "b a"]:
        assert back.logprob(s.split()) == lm.logprob(s.split())


def test_ngram_empty_corpus():
    with pytest.raises(ValueError):
        train_ngram([])


# ---------------------------------------------------------------- rescoring


def _hyp(text, am):
    return Hypothesis(tuple(), am, text)


class _FixedLM:
    def __init__(self, table):
        self.table = table

    def logprob(self, words):
        return self.table[" ".join(words)]


def test_rescore_alpha_zero_keeps_am_order():
    rng = np.random.default_rng(6)
    lm = train_ngram(["a b", "b c"], n=2)
    hyps = [_hyp(t, s) for t, s in zip(["a", "b c", "c", "a b"], sorted(rng.normal(size=4), reverse=True))]
    out = rescore(hyps, lm, RescoreCfg(alpha=0.0, beta=0.7))
    assert [h.text for h in out] == [h.text for h in hyps]


def test_rescore_plug_in():
    lm = _FixedLM({"x": -1.0, "y": -2.0})
    out = rescore([_hyp("y", -3.0), _hyp("x", -3.0)], lm, RescoreCfg(alpha=1.0, beta=0.0))
    assert out[0].text == "x"
    assert out[0].score - out[1].score == pytest.approx(1.0)


def test_rescore_matches_direct_formula():
    rng = np.random.default_rng(7)
    vocab = ["a", "bb", "c", "de"]
    lm = train_ngram([" ".join(rng.choice(vocab, size=3)) for _ in range(50)], n=2)
    hyps = [_hyp(" ".join(rng.choice(vocab, size=rng.integers(1, 4))), -abs(rng.normal() * 5)) for _ in range(10)]
    cfg = RescoreCfg(alpha=0.8, beta=0.5)
    direct = [h.am_score + cfg.alpha * math.log(math.exp(lm.logprob(h.words)) / len(h.words) ** cfg.beta)
              for h in hyps]
    out = rescore(hyps, lm, cfg)
    expected = [hyps[i].text for i in np.argsort(-np.array(direct), kind="stable")]
    assert [h.text for h in out] == expected


def test_rescore_empty_hypothesis_flagged():
    out = rescore([_hyp("", -1.0), _hyp("a", -2.0)], train_ngram(["a"]), RescoreCfg(alpha=1.0))
    empty = [h for h in out if h.text == ""][0]
    assert empty.empty_flag and empty.score == -1.0


def test_rescore_negative_alpha():
    with pytest.raises(ValueError):
        RescoreCfg(alpha=-1.0)


def test_rescore_lm_scaling_argmax_invariant():
    rng = np.random.default_rng(8)
    table = {w: float(rng.normal()) for w in ["a", "b", "c", "d"]}
    hyps = [_hyp(w, float(rng.normal())) for w in table]
    cfg = RescoreCfg(alpha=1.3, beta=0.0)
    top = rescore(hyps, _FixedLM(table), cfg)[0].text
    shifted = {k: v + math.log(7.5) for k, v in table.items()}
    assert rescore(hyps, _FixedLM(shifted), cfg)[0].text == top


def test_nbest_dump(tmp_path):
    h = Hypothesis((1,), -1.5, "a", -0.5, -2.0)
    write_nbest(tmp_path / "nb.tsv", [("u1", [h])])
    assert (tmp_path / "nb.tsv").read_text() == "u1\t1\t-1.500000\t-0.500000\t-2.000000\ta\n"


def test_rescore_score_formula():
    assert rescore_score(-2.0, -3.0, 4, 0.5, 1.0) == pytest.approx(-2.0 + 0.5 * (-3.0 - math.log(4)))


# ---------------------------------------------------------------- metrics


def _lev_reference(a, b):
    # memoised recursion; independent of the iterative DP under test
    from functools import lru_cache

    @lru_cache(maxsize=None)
    def d(i, j):
        if i == 0:
            return j
        if j == 0:
            return i
        return min(d(i - 1, j) + 1, d(i, j - 1) + 1, d(i - 1, j - 1) + (a[i - 1] != b[j - 1]))

    return d(len(a), len(b))


def test_wer_identical_and_deletion():
    assert wer("a b c", "a b c") == 0
    assert wer("a b c", "a c") == pytest.approx(1 / 3)


def test_wer_empty_reference():
    with pytest.raises(ValueError):
        wer("", "a")


@settings(max_examples=200, deadline=None)
@given(st.lists(st.sampled_from("abc"), max_size=7), st.lists(st.sampled_from("abc"), max_size=7))
def test_edit_distance_reference_and_symmetry(a, b):
    d = edit_distance(a, b)
    assert d == _lev_reference(tuple(a), tuple(b)) == edit_distance(b, a)


def test_corpus_wer():
    assert corpus_wer(["a b", "c d e"], ["a b", "c e"]) == pytest.approx(1 / 5)


def test_dce():
    rng = np.random.default_rng(9)
    c = rng.normal(size=(10, 40))
    assert dce(c, c) == 0
    assert dce(c, c + 0.5) == pytest.approx(20.0)
    assert dce(c, c + rng.normal(scale=0.1, size=c.shape)) > 0
    with pytest.raises(ValueError):
        dce(c, c[:5])
