"""Training loops: CTC pre-training of the acoustic model and enhancer training under four objectives."""
from __future__ import annotations

import csv
import logging
import math
import time
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as tt
from .adversarial import AdversarialControlState, began_objectives, convergence_measure, disc_recon_loss, kt_update, masked_l1
from .config import AMTrainCfg, ConfigError, TrainCfg
from .ctc import CTCLoss, SymbolInventory
from .decode import corpus_wer, dce, greedy_decode
from .features import FeatureSet, FeatureStats, bucketed_batches, pad_batch
from .nets import AcousticModel, Discriminator, Enhancer, NetConfig, length_mask
from .optim import Adam
from .tensor import Tensor, no_grad

log = logging.getLogger(__name__)

EVAL_BATCH = 50


class TrainingDiverged(RuntimeError):
    pass


def make_rng(seed: int, tag: str) -> np.random.Generator:
    return np.random.default_rng([seed, zlib.crc32(tag.encode())])


def _finite(value: float, what: str, epoch: int, step: int) -> float:
    if not math.isfinite(value):
        raise TrainingDiverged(f"non-finite {what} ({value}) at epoch {epoch}, step {step}; "
                               "lower the learning rate or check the input features")
    return value


@dataclass
class ExperimentRecord:
    rows: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_valid_wer: float = math.inf
    checkpoint: str | None = None

    def write_csv(self, path) -> None:
        write_rows(path, self.rows)


def write_rows(path, rows: Sequence[dict]) -> None:
    if not rows:
        Path(path).write_text("")
        return
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})


# ---------------------------------------------------------------- inference helpers


def run_batched(fn, fs: FeatureSet, batch_size: int = EVAL_BATCH) -> dict[str, np.ndarray]:
    """Apply ``fn(x, lengths) -> (T x B x K array, out_lengths)`` over ``fs``; returns per-utterance outputs."""
    out = {}
    with no_grad():
        for ids in bucketed_batches(fs.ids, fs.lengths(), batch_size, None):
            x, lengths = pad_batch([fs.feats[i] for i in ids])
            y, out_lengths = fn(Tensor(x), lengths)
            for j, uid in enumerate(ids):
                out[uid] = y[: out_lengths[j], j].copy()
    return {uid: out[uid] for uid in fs.ids}


def am_logprobs(am: AcousticModel, fs: FeatureSet) -> dict[str, np.ndarray]:
    am.eval()

    def fn(x, lengths):
        logp, out_lengths = am(x, lengths)
        return logp.data.astype(np.float64), out_lengths

    return run_batched(fn, fs)


def enhance_set(enh: Enhancer, fs: FeatureSet) -> FeatureSet:
    outs = run_batched(lambda x, lengths: (enh(x, lengths).data, lengths), fs)
    return FeatureSet(outs, dict(fs.texts))


def greedy_texts(logps: dict[str, np.ndarray], inv: SymbolInventory) -> dict[str, str]:
    return {uid: inv.decode(greedy_decode(o, inv.blank)) for uid, o in logps.items()}


def greedy_wer(am: AcousticModel, fs: FeatureSet, inv: SymbolInventory) -> float:
    hyps = greedy_texts(am_logprobs(am, fs), inv)
    return corpus_wer([fs.texts[i] for i in fs.ids], [hyps[i] for i in fs.ids])


def mean_dce(enhanced: FeatureSet, clean: FeatureSet, stats: FeatureStats) -> float:
    """Average per-utterance DCE in un-normalised log-mel space."""
    return float(np.mean([dce(stats.denormalize(clean.feats[i]), stats.denormalize(enhanced.feats[i]))
                          for i in enhanced.ids]))


# ---------------------------------------------------------------- acoustic model


def pretrain_am(train: FeatureSet, valid: FeatureSet, inv: SymbolInventory, net_cfg: NetConfig,
                cfg: AMTrainCfg, out_dir=None) -> tuple[AcousticModel, ExperimentRecord]:
    """CTC training on clean normalised features; keeps the epoch with the lowest validation greedy WER."""
    if net_cfg.am.n_out != len(inv):
        raise ConfigError(f"acoustic model has {net_cfg.am.n_out} outputs but the inventory has {len(inv)} symbols")
    am = AcousticModel(net_cfg.am, seed=cfg.seed)
    opt = Adam(am.parameters(), lr=cfg.lr)
    ctc = CTCLoss(inv.blank)
    rng = make_rng(cfg.seed, "am-batches")
    targets = {i: inv.encode(t) for i, t in train.texts.items()}
    record = ExperimentRecord()
    best_state = None
    stale = 0
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        am.train()
        losses = []
        for ids in bucketed_batches(train.ids, train.lengths(), cfg.batch_size, rng):
            x, lengths = pad_batch([train.feats[i] for i in ids])
            logp, out_lengths = am(Tensor(x), lengths)
            loss = ctc(logp, [targets[i] for i in ids], out_lengths)
            step += 1
            losses.append(_finite(loss.item(), "CTC loss", epoch, step))
            opt.zero_grad()
            tt.backward(loss)
            opt.step()
        wer = greedy_wer(am, valid, inv)
        record.rows.append({"epoch": epoch, "train_ctc": float(np.mean(losses)), "valid_wer": float(wer)})
        log.info("am epoch %d ctc %.4f valid WER %.4f (%.1fs)", epoch, np.mean(losses), wer, time.perf_counter() - t0)
        if wer < record.best_valid_wer:
            record.best_valid_wer, record.best_epoch = wer, epoch
            best_state = {k: v.copy() for k, v in am.state_dict().items()}
            stale = 0
        else:
            stale += 1
        if cfg.patience and stale >= cfg.patience:
            break
    am.load_state_dict(best_state)
    am.eval()
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        am.save(out_dir / "am.bin")
        record.checkpoint = str(out_dir / "am.bin")
        record.write_csv(out_dir / "epochs.csv")
    return am, record


# ---------------------------------------------------------------- enhancer


@dataclass
class EnhancerBatch:
    x: np.ndarray
    lengths: list[int]
    targets: list[list[int]]
    clean_x: np.ndarray | None = None  # unpaired real data for D
    clean_lengths: list[int] | None = None
    paired: np.ndarray | None = None  # paired clean, dce objective only


def enhancer_losses(enh: Enhancer, disc: Discriminator | None, am: AcousticModel, batch: EnhancerBatch,
                    cfg: TrainCfg, state: AdversarialControlState, ctc: CTCLoss) -> dict:
    """Forward pass of one enhancer step; returns the loss tensors by name.

    ``loss_e`` is w_AC * ``ctc`` + w_AD * ``adv_e`` for the aas family and the
    masked L1 to the paired clean features for the dce objective.
    """
    w_ac, w_ad = cfg.weights
    s_hat = enh(Tensor(batch.x), batch.lengths)
    out: dict = {"s_hat": s_hat}
    if cfg.objective == "dce":
        out["loss_e"] = out["dce"] = masked_l1(s_hat, Tensor(batch.paired), length_mask(batch.lengths, s_hat.shape[0]))
        return out
    terms = []
    if w_ac > 0:
        logp, out_lengths = am(s_hat, batch.lengths)
        out["ctc"] = ctc(logp, batch.targets, out_lengths)
        terms.append(out["ctc"] * w_ac)
    if w_ad > 0:
        l_real = disc_recon_loss(Tensor(batch.clean_x), disc, batch.clean_lengths)
        l_fake = disc_recon_loss(s_hat, disc, batch.lengths)
        loss_d, adv_e = began_objectives(l_real, l_fake, state, cfg.began_mode)
        out.update(l_real=l_real, l_fake=l_fake, loss_d=loss_d, adv_e=adv_e)
        terms.append(adv_e * w_ad)
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    out["loss_e"] = total
    return out


def train_enhancer(noisy: FeatureSet, clean_pool: FeatureSet | None, am: AcousticModel, inv: SymbolInventory,
                   net_cfg: NetConfig, cfg: TrainCfg, valid: FeatureSet, stats: FeatureStats,
                   paired: FeatureSet | None = None, valid_clean: FeatureSet | None = None,
                   out_dir=None) -> tuple[Enhancer, ExperimentRecord]:
    """Train E against the frozen acoustic model and/or an unpaired BEGAN discriminator.

    ``clean_pool`` feeds D and must not share utterance ids with ``noisy``;
    ``paired`` holds the clean sources of ``noisy`` and is used only by the
    dce objective. All feature sets are already normalised.
    """
    w_ac, w_ad = cfg.weights
    if cfg.objective == "dce" and paired is None:
        raise ConfigError("the dce objective needs paired clean features")
    if w_ad > 0:
        if clean_pool is None:
            raise ConfigError("adversarial supervision needs a clean pool")
        shared = set(noisy.ids) & set(clean_pool.ids)
        if shared:
            raise ConfigError(f"clean pool and noisy set share {len(shared)} utterance ids; the data must be unpaired")
    am.eval().freeze()
    enh = Enhancer(net_cfg.enhancer, seed=cfg.seed)
    disc = Discriminator(net_cfg.discriminator, seed=cfg.seed + 1) if w_ad > 0 else None
    opt_e = Adam(enh.parameters(), lr=cfg.lr)
    opt_d = Adam(disc.parameters(), lr=cfg.lr) if disc else None
    state = AdversarialControlState(gamma=cfg.gamma, lam=cfg.lam)
    ctc = CTCLoss(inv.blank)
    rng = make_rng(cfg.seed, "noisy-batches")
    clean_rng = make_rng(cfg.seed, "clean-batches")
    clean_queue: list[list[str]] = []
    targets = {i: inv.encode(t) for i, t in noisy.texts.items()}
    record = ExperimentRecord()
    steps: list[dict] = []
    best_state = None
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        sums: dict[str, list[float]] = {}
        for ids in bucketed_batches(noisy.ids, noisy.lengths(), cfg.batch_size, rng):
            x, lengths = pad_batch([noisy.feats[i] for i in ids])
            batch = EnhancerBatch(x, lengths, [targets[i] for i in ids])
            if disc is not None:
                if not clean_queue:
                    clean_queue = bucketed_batches(clean_pool.ids, clean_pool.lengths(), cfg.batch_size, clean_rng)
                batch.clean_x, batch.clean_lengths = pad_batch([clean_pool.feats[i] for i in clean_queue.pop()])
            if paired is not None and cfg.objective == "dce":
                batch.paired, _ = pad_batch([paired.feats[i] for i in ids])
            step += 1
            out = enhancer_losses(enh, disc, am, batch, cfg, state, ctc)
            for name in ("loss_e", "ctc", "dce", "l_real", "l_fake"):
                if name in out:
                    sums.setdefault(name, []).append(_finite(out[name].item(), name, epoch, step))
            # both backward passes run before either update: they share D's weights
            opt_e.zero_grad()
            tt.backward(out["loss_e"], only=enh.parameters())
            if disc is not None:
                opt_d.zero_grad()
                tt.backward(out["loss_d"], only=disc.parameters())
            opt_e.step()
            if disc is not None:
                opt_d.step()
                l_real, l_fake = out["l_real"].item(), out["l_fake"].item()
                kt_update(state, l_real, l_fake)
                m, _ = convergence_measure(l_real, l_fake, state.gamma)
                steps.append({"step": step, "l_real": l_real, "l_fake": l_fake, "k_t": state.k, "m": m})
        enhanced = enhance_set(enh, valid)
        wer = greedy_wer(am, enhanced, inv)
        row = {"epoch": epoch}
        for name in ("loss_e", "ctc", "dce", "l_real", "l_fake"):
            row[f"train_{name}"] = float(np.mean(sums[name])) if name in sums else float("nan")
        row["k_t"] = float(state.k)
        row["valid_wer"] = float(wer)
        row["valid_dce"] = mean_dce(enhanced, valid_clean, stats) if valid_clean is not None else float("nan")
        record.rows.append(row)
        log.info("enhancer[%s w_ad=%g] epoch %d loss %.4f valid WER %.4f DCE %.4f (%.1fs)", cfg.objective, w_ad,
                 epoch, row["train_loss_e"], wer, row["valid_dce"], time.perf_counter() - t0)
        if wer < record.best_valid_wer:
            record.best_valid_wer, record.best_epoch = wer, epoch
            best_state = {k: v.copy() for k, v in enh.state_dict().items()}
    enh.load_state_dict(best_state)
    enh.eval()
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        enh.save(out_dir / "enhancer.bin")
        record.checkpoint = str(out_dir / "enhancer.bin")
        record.write_csv(out_dir / "epochs.csv")
        write_rows(out_dir / "steps.csv", steps)
    return enh, record
