"""CTC decoding (greedy and prefix beam search), word n-gram LM, N-best rescoring, WER and DCE."""
from __future__ import annotations

import heapq
import math
from collections import Counter
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .ctc import collapse_alignment

BOS, EOS, UNK = "<s>", "</s>", "<unk>"
NEG_INF = -math.inf


def _logaddexp(a: float, b: float) -> float:
    if a < b:
        a, b = b, a
    if b == NEG_INF:
        return a
    return a + math.log1p(math.exp(b - a))


@dataclass
class Hypothesis:
    y: tuple[int, ...]
    am_score: float
    text: str = ""
    lm_score: float = 0.0
    score: float = 0.0
    empty_flag: bool = False

    @property
    def words(self) -> list[str]:
        return self.text.split()


@dataclass
class RescoreCfg:
    alpha: float = 0.0
    beta: float = 0.0
    n_best: int = 100

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("RescoreCfg: alpha must be >= 0")
        if self.n_best < 1:
            raise ValueError("RescoreCfg: n_best must be >= 1")


# ---------------------------------------------------------------- decoding


def greedy_decode(o: np.ndarray, blank: int = 0) -> list[int]:
    return collapse_alignment(np.argmax(o, axis=1).tolist(), blank)


def beam_nbest(o: np.ndarray, n: int, blank: int = 0, symbols: Sequence[str] | None = None) -> list[Hypothesis]:
    """CTC prefix beam search keeping ``n`` prefixes.

    ``am_score`` is log p(prefix | o) summed over the alignments that survived
    pruning (exact when nothing was pruned). ``symbols`` maps ids to text.
    """
    if n < 1:
        raise ValueError("beam_nbest: N must be >= 1")
    o = np.asarray(o, dtype=np.float64)
    T, V = o.shape
    la = _logaddexp
    # prefix -> (log p ending in blank, log p ending in non-blank)
    beams: dict[tuple, tuple[float, float]] = {(): (0.0, NEG_INF)}
    emitting = [s for s in range(V) if s != blank]
    for row in o.tolist():
        nxt: dict[tuple, list[float]] = {}
        p_blank = row[blank]
        for prefix, (pb, pnb) in beams.items():
            total = la(pb, pnb)
            e = nxt.get(prefix)
            if e is None:
                e = nxt[prefix] = [NEG_INF, NEG_INF]
            e[0] = la(e[0], total + p_blank)
            last = prefix[-1] if prefix else None
            for s in emitting:
                ext = prefix + (s,)
                en = nxt.get(ext)
                if en is None:
                    en = nxt[ext] = [NEG_INF, NEG_INF]
                if s == last:
                    # repeat without a blank stays on the same prefix
                    e[1] = la(e[1], pnb + row[s])
                    en[1] = la(en[1], pb + row[s])
                else:
                    en[1] = la(en[1], total + row[s])
        scored = [(la(v[0], v[1]), k) for k, v in nxt.items()]
        if len(scored) > n:
            scored = heapq.nsmallest(n, scored, key=lambda sk: (-sk[0], sk[1]))
        beams = {k: tuple(nxt[k]) for _, k in scored}
    hyps = [Hypothesis(k, la(*v), "".join(symbols[i] for i in k) if symbols else "")
            for k, v in beams.items()]
    hyps.sort(key=lambda h: (-h.am_score, h.y))
    return hyps


# ---------------------------------------------------------------- n-gram LM


class NGramLM:
    """Add-k smoothed word n-gram model with sentence boundary and unknown-word tokens."""

    def __init__(self, n: int, k: float, vocab: Iterable[str]):
        if n < 1 or k <= 0:
            raise ValueError("NGramLM: need n >= 1 and k > 0")
        self.n = n
        self.k = k
        self.vocab = sorted(set(vocab) | {EOS, UNK})  # predictable tokens
        self._vocab_set = set(self.vocab)
        self.counts: Counter = Counter()  # full n-gram tuples
        self.context_counts: Counter = Counter()

    def _norm(self, w: str) -> str:
        return w if w in self._vocab_set and w not in (EOS,) else UNK

    def _events(self, words: Sequence[str]):
        toks = [BOS] * (self.n - 1) + [self._norm(w) for w in words] + [EOS]
        for i in range(self.n - 1, len(toks)):
            yield tuple(toks[i - self.n + 1 : i]), toks[i]

    def add(self, words: Sequence[str]) -> None:
        for ctx, w in self._events(words):
            self.counts[ctx + (w,)] += 1
            self.context_counts[ctx] += 1

    def prob(self, word: str, context: Sequence[str]) -> float:
        ctx = tuple(context)[-(self.n - 1) :] if self.n > 1 else ()
        ctx = tuple(c if c == BOS else self._norm(c) for c in ctx)
        w = EOS if word == EOS else self._norm(word)
        return (self.counts[ctx + (w,)] + self.k) / (self.context_counts[ctx] + self.k * len(self.vocab))

    def logprob(self, words: Sequence[str]) -> float:
        """Natural-log sentence probability, end token included."""
        return float(sum(math.log(self.prob(w, ctx)) for ctx, w in self._events(words)))

    def save(self, path) -> None:
        """Plain text: a header line ``ngram n k``, a ``vocab`` line, then ``count<TAB>tokens`` rows."""
        lines = [f"ngram\t{self.n}\t{self.k!r}", "vocab\t" + " ".join(self.vocab)]
        for gram, c in sorted(self.counts.items()):
            lines.append(f"{c}\t{' '.join(gram)}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "NGramLM":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        tag, n, k = lines[0].split("\t")
        if tag != "ngram":
            raise ValueError(f"{path}: not an n-gram count file")
        vocab = lines[1].split("\t", 1)[1].split()
        lm = cls(int(n), float(k), vocab)
        for line in lines[2:]:
            c, gram = line.split("\t")
            gram = tuple(gram.split(" "))
            lm.counts[gram] += int(c)
            lm.context_counts[gram[:-1]] += int(c)
        return lm


def train_ngram(texts: Iterable[str], n: int = 3, k: float = 0.1) -> NGramLM:
    texts = [t.split() for t in texts]
    if not texts:
        raise ValueError("train_ngram: empty corpus")
    lm = NGramLM(n, k, {w for t in texts for w in t})
    for words in texts:
        lm.add(words)
    return lm


def lm_logprob(lm: NGramLM, text: str) -> float:
    return lm.logprob(text.split())


# ---------------------------------------------------------------- rescoring


def rescore_score(am: float, lm: float, n_words: int, alpha: float, beta: float) -> float:
    """S = am + alpha * log(p(y) / |y|^beta), natural logs."""
    return am + alpha * (lm - beta * math.log(n_words))


def rescore(hyps: Sequence[Hypothesis], lm: NGramLM | None, cfg: RescoreCfg) -> list[Hypothesis]:
    """Attach LM and combined scores and stable-sort by the combined score.

    Hypotheses with no words keep S = am_score and carry ``empty_flag``.
    """
    out = []
    for h in hyps:
        words = h.words
        lm_score = lm.logprob(words) if lm is not None and words else 0.0
        if words:
            s = rescore_score(h.am_score, lm_score, len(words), cfg.alpha, cfg.beta)
            out.append(replace(h, lm_score=lm_score, score=s, empty_flag=False))
        else:
            out.append(replace(h, lm_score=lm_score, score=h.am_score, empty_flag=True))
    order = sorted(range(len(out)), key=lambda i: -out[i].score)  # sorted() is stable
    return [out[i] for i in order]


def write_nbest(path, entries: Iterable[tuple[str, Sequence[Hypothesis]]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for uid, hyps in entries:
            for rank, h in enumerate(hyps, 1):
                fh.write(f"{uid}\t{rank}\t{h.am_score:.6f}\t{h.lm_score:.6f}\t{h.score:.6f}\t{h.text}\n")


# ---------------------------------------------------------------- metrics


def edit_distance(ref: Sequence, hyp: Sequence) -> int:
    prev = list(range(len(hyp) + 1))
    for i, r in enumerate(ref, 1):
        cur = [i] + [0] * len(hyp)
        for j, h in enumerate(hyp, 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (r != h))
        prev = cur
    return prev[-1]


def wer(ref: Sequence[str] | str, hyp: Sequence[str] | str) -> float:
    ref = ref.split() if isinstance(ref, str) else list(ref)
    hyp = hyp.split() if isinstance(hyp, str) else list(hyp)
    if not ref:
        raise ValueError("wer: empty reference")
    return edit_distance(ref, hyp) / len(ref)


def corpus_wer(refs: Sequence[str], hyps: Sequence[str]) -> float:
    errors = sum(edit_distance(r.split(), h.split()) for r, h in zip(refs, hyps))
    return errors / sum(len(r.split()) for r in refs)


def dce(clean: np.ndarray, enhanced: np.ndarray) -> float:
    """Per-frame L1 distance between two T x F feature matrices, averaged over frames."""
    clean, enhanced = np.asarray(clean), np.asarray(enhanced)
    if clean.shape != enhanced.shape:
        raise ValueError(f"dce: shape mismatch {clean.shape} vs {enhanced.shape}")
    return float(np.abs(clean - enhanced).sum(axis=1).mean())
