"""Experiment orchestration on an experiment directory: data, AM, enhancers, sweep and evaluation.

Directory layout under ``exp_dir``::

    config.json              resolved configuration
    data/                    WAVs and manifests
    features/<split>.feat    raw log-mel features (FEAT container) + transcripts
    features/stats.feat      global normalisation statistics
    lm.txt                   word n-gram counts
    am/                      acoustic model checkpoint and epoch log
    enh/<name>/              enhancer checkpoint, epoch and step logs
    reports/                 evaluation reports and the sweep CSV
"""
from __future__ import annotations

import json
import logging
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import ExperimentCfg, TrainCfg
from .corpus import SPLITS, load_split, synth_toy_corpus, write_corpus
from .ctc import SymbolInventory
from .decode import NGramLM, RescoreCfg, beam_nbest, corpus_wer, rescore, train_ngram, write_nbest
from .features import FeatureSet, FeatureStats, extract
from .nets import AcousticModel, Enhancer
from .train import am_logprobs, enhance_set, greedy_texts, mean_dce, pretrain_am, train_enhancer, write_rows

log = logging.getLogger(__name__)

BASELINES = ("none", "wiener", "clean")


def inventory(cfg: ExperimentCfg) -> SymbolInventory:
    """Blank, word separator, then the corpus graphemes."""
    return SymbolInventory.from_graphemes(" " + cfg.corpus.letters)


def _feat_path(exp_dir, split: str) -> Path:
    return Path(exp_dir) / "features" / f"{split}.feat"


def prepare_data(cfg: ExperimentCfg, exp_dir) -> None:
    """Synthesise the corpus, write WAVs, extract features and train the LM."""
    exp_dir = Path(exp_dir)
    exp_dir.mkdir(parents=True, exist_ok=True)
    cfg.save(exp_dir / "config.json")
    corpus = synth_toy_corpus(cfg.corpus, cfg.sizes)
    write_corpus(corpus, exp_dir / "data", cfg.corpus.sample_rate)
    (exp_dir / "features").mkdir(exist_ok=True)
    for split in cfg.sizes:
        # features come from the quantised WAVs so the CLI and the library see identical inputs
        extract(load_split(exp_dir / "data", split)).save(_feat_path(exp_dir, split))
        if SPLITS[split][0]:
            extract(load_split(exp_dir / "data", f"{split}-clean")).save(_feat_path(exp_dir, f"{split}-clean"))
            if split != "noisy-train":
                extract(load_split(exp_dir / "data", split), wiener=True).save(_feat_path(exp_dir, f"{split}-wiener"))
    FeatureStats.fit(FeatureSet.load(_feat_path(exp_dir, "am-train"))).save(exp_dir / "features" / "stats.feat")
    texts = [u.transcript for split in ("am-train", "noisy-train") if split in corpus for u in corpus[split]]
    train_ngram(texts, cfg.decode.lm_order, cfg.decode.lm_k).save(exp_dir / "lm.txt")


class Workspace:
    """Lazy, cached access to the artefacts of one experiment directory."""

    def __init__(self, cfg: ExperimentCfg, exp_dir):
        self.cfg = cfg
        self.dir = Path(exp_dir)
        self.inv = inventory(cfg)
        self._feats: dict[str, FeatureSet] = {}
        self._stats: FeatureStats | None = None

    @property
    def stats(self) -> FeatureStats:
        if self._stats is None:
            self._stats = FeatureStats.load(self.dir / "features" / "stats.feat")
        return self._stats

    def features(self, split: str) -> FeatureSet:
        """Normalised features of a split (``-clean`` and ``-wiener`` variants included)."""
        if split not in self._feats:
            path = _feat_path(self.dir, split)
            if not path.exists():
                raise FileNotFoundError(f"{path} not found; run synth-data first")
            self._feats[split] = FeatureSet.load(path).map(self.stats.normalize)
        return self._feats[split]

    def has(self, split: str) -> bool:
        return _feat_path(self.dir, split).exists()

    def lm(self) -> NGramLM:
        return NGramLM.load(self.dir / "lm.txt")

    def am_path(self) -> Path:
        return self.dir / "am" / "am.bin"

    def load_am(self) -> AcousticModel:
        path = self.am_path()
        if not path.exists():
            raise FileNotFoundError(f"{path} not found; run train-am first")
        return AcousticModel(self.cfg.nets.am).load(path).eval().freeze()

    def load_enhancer(self, path) -> Enhancer:
        return Enhancer(self.cfg.nets.enhancer).load(path).eval()


def train_am(ws: Workspace) -> AcousticModel:
    am, rec = pretrain_am(ws.features("am-train"), ws.features("am-valid"), ws.inv, ws.cfg.nets, ws.cfg.am_train,
                          ws.dir / "am")
    log.info("acoustic model: best epoch %d, valid WER %.4f", rec.best_epoch, rec.best_valid_wer)
    return am


def run_enhancer(ws: Workspace, name: str, train_cfg: TrainCfg):
    """Train one enhancer into ``enh/<name>``; the AM is reloaded from disk so every run starts from the same bytes."""
    return train_enhancer(
        ws.features("noisy-train"), ws.features("am-train"), ws.load_am(), ws.inv, ws.cfg.nets, train_cfg,
        ws.features("noisy-valid"), ws.stats, paired=ws.features("noisy-train-clean"),
        valid_clean=ws.features("noisy-valid-clean"), out_dir=ws.dir / "enh" / name,
    )


# ---------------------------------------------------------------- evaluation


def system_features(ws: Workspace, system: str, split: str, enhancer: Enhancer | None = None) -> FeatureSet:
    if enhancer is not None:
        return enhance_set(enhancer, ws.features(split))
    if system == "none":
        return ws.features(split)
    if system in ("wiener", "clean"):
        return ws.features(f"{split}-{system}")
    raise ValueError(f"unknown system {system!r}; expected one of {BASELINES} or an enhancer checkpoint")


def nbest_lists(am: AcousticModel, fs: FeatureSet, inv: SymbolInventory, n: int) -> dict:
    return {uid: beam_nbest(o, n, inv.blank, inv.symbols) for uid, o in am_logprobs(am, fs).items()}


def rescored_texts(nbest: dict, lm: NGramLM, cfg: RescoreCfg) -> dict[str, str]:
    return {uid: (rescore(h, lm, cfg)[0].text if h else "") for uid, h in nbest.items()}


def tune_rescoring(nbest: dict, refs: dict[str, str], lm: NGramLM, alphas, betas, n_best: int):
    """Grid search (alpha, beta) for the lowest WER; ties keep the earliest grid point."""
    best = None
    ids = list(refs)
    for a in alphas:
        for b in betas:
            cfg = RescoreCfg(a, b, n_best)
            hyps = rescored_texts(nbest, lm, cfg)
            w = corpus_wer([refs[i] for i in ids], [hyps[i] for i in ids])
            if best is None or w < best[0]:
                best = (w, cfg)
    return best[1], best[0]


def evaluate(ws: Workspace, system: str, am: AcousticModel | None = None, enhancer: Enhancer | None = None,
             lm: NGramLM | None = None, nbest_dir=None) -> dict:
    """Greedy and rescored WER plus DCE on the noisy validation and test sets for one system.

    (alpha, beta) are tuned on validation WER and applied unchanged to test.
    """
    am = am or ws.load_am()
    lm = lm or ws.lm()
    dcfg = ws.cfg.decode
    report: dict = {"system": system}
    nb = {}
    for split in ("noisy-valid", "noisy-test"):
        fs = system_features(ws, system, split, enhancer)
        refs = {i: fs.texts[i] for i in fs.ids}
        greedy = greedy_texts(am_logprobs(am, fs), ws.inv)
        tag = split.split("-")[1]
        report[f"{tag}_greedy_wer"] = corpus_wer(list(refs.values()), [greedy[i] for i in refs])
        nb[split] = nbest_lists(am, fs, ws.inv, dcfg.n_best)
        if ws.has(f"{split}-clean"):
            report[f"{tag}_dce"] = mean_dce(fs, ws.features(f"{split}-clean"), ws.stats)
        else:
            report[f"{tag}_dce"] = None
            report["note"] = "no paired clean features; DCE omitted"
    valid = ws.features("noisy-valid")
    rcfg, valid_wer = tune_rescoring(nb["noisy-valid"], {i: valid.texts[i] for i in valid.ids}, lm,
                                     dcfg.alphas, dcfg.betas, dcfg.n_best)
    report.update(alpha=rcfg.alpha, beta=rcfg.beta, valid_rescored_wer=valid_wer)
    test = ws.features("noisy-test")
    hyps = rescored_texts(nb["noisy-test"], lm, rcfg)
    report["test_rescored_wer"] = corpus_wer([test.texts[i] for i in test.ids], [hyps[i] for i in test.ids])
    if nbest_dir is not None:
        Path(nbest_dir).mkdir(parents=True, exist_ok=True)
        write_nbest(Path(nbest_dir) / f"{system}.nbest.tsv",
                    [(uid, rescore(h, lm, rcfg)) for uid, h in nb["noisy-test"].items()])
    log.info("eval %s: %s", system, {k: v for k, v in report.items() if k != "system"})
    return report


def sweep_wad(ws: Workspace, grid, base: TrainCfg | None = None, am=None, lm=None) -> list[dict]:
    """One independent aas run per w_AD (fresh E and D, same seed); writes ``reports/sweep.csv``."""
    base = base or ws.cfg.enhancer
    rows = []
    for w in grid:
        cfg = replace(base, objective="aas", w_ad=float(w))
        enh, rec = run_enhancer(ws, sweep_name(w), cfg)
        rep = evaluate(ws, sweep_name(w), am, enh, lm)
        rows.append({"w_ad": float(w), "valid_wer": rep["valid_rescored_wer"], "test_wer": rep["test_rescored_wer"],
                     "valid_greedy_wer": rec.best_valid_wer, "best_epoch": rec.best_epoch})
    (ws.dir / "reports").mkdir(parents=True, exist_ok=True)
    write_rows(ws.dir / "reports" / "sweep.csv", rows)
    return rows


def sweep_name(w: float) -> str:
    return f"aas-wad{float(w):g}"


def run_experiment(cfg: ExperimentCfg, exp_dir, prepare: bool = True, train_acoustic: bool = True) -> dict:
    """Full desk recipe: data, AM, sweep (tuned AAS and acoustic-only), adversarial-only, dce and baselines.

    ``prepare`` / ``train_acoustic`` = False reuse the data and AM already in ``exp_dir``.
    """
    if prepare:
        prepare_data(cfg, exp_dir)
    ws = Workspace(cfg, exp_dir)
    if train_acoustic:
        train_am(ws)
    am, lm = ws.load_am(), ws.lm()
    reports = {b: evaluate(ws, b, am, lm=lm) for b in BASELINES}
    grid = list(cfg.sweep_grid)
    sweep = sweep_wad(ws, grid, am=am, lm=lm)
    # tuned AAS: lowest validation WER over the grid (w_AD = 0 included); ties go to the smaller weight
    tuned = min(sweep, key=lambda r: (r["valid_wer"], r["w_ad"]))
    reports["aas-tuned"] = evaluate(ws, "aas-tuned", am, ws.load_enhancer(ws.dir / "enh" / sweep_name(tuned["w_ad"])
                                                                       / "enhancer.bin"), lm)
    reports["aas-tuned"]["w_ad"] = tuned["w_ad"]
    for objective in ("acoustic_only", "adversarial_only", "dce"):
        enh_cfg = replace(cfg.enhancer, objective=objective)
        if objective == "acoustic_only" and 0.0 in grid:
            enh = ws.load_enhancer(ws.dir / "enh" / sweep_name(0.0) / "enhancer.bin")
        else:
            enh, _ = run_enhancer(ws, objective, enh_cfg)
        reports[objective] = evaluate(ws, objective, am, enh, lm)
    summary = {"reports": reports, "sweep": sweep}
    (ws.dir / "reports").mkdir(parents=True, exist_ok=True)
    (ws.dir / "reports" / "summary.json").write_text(json.dumps(summary, indent=2, default=float) + "\n")
    write_rows(ws.dir / "reports" / "results.csv", [
        {"system": k, **{m: (np.nan if v.get(m) is None else v[m]) for m in
                         ("valid_greedy_wer", "test_greedy_wer", "valid_rescored_wer", "test_rescored_wer",
                          "test_dce", "alpha", "beta")}}
        for k, v in reports.items()])
    return summary
