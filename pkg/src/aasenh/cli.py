"""Command-line interface: ``aasenh <subcommand> --exp-dir DIR [--config FILE] [--set key=value ...]``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .checkpoint import CheckpointError
from .config import OBJECTIVES, ConfigError, load_config
from .decode import RescoreCfg, rescore, write_nbest
from .experiment import (
    BASELINES, Workspace, evaluate, nbest_lists, prepare_data, run_enhancer, run_experiment,
    sweep_name, sweep_wad, system_features, train_am,
)
from .features import FeatureSet
from .frontend import AudioFormatError
from .plot import export_curves, to_image, triptych, write_pgm
from .train import TrainingDiverged, enhance_set

log = logging.getLogger("aasenh")


class UsageError(Exception):
    pass


def _workspace(args) -> Workspace:
    exp = Path(args.exp_dir)
    config = args.config
    if config is None and (exp / "config.json").exists():
        config = exp / "config.json"
    if config is not None and not Path(config).exists():
        raise UsageError(f"config file {config} not found")
    return Workspace(load_config(config, args.set), exp)


def _system(ws: Workspace, name: str):
    """Baseline name or enhancer checkpoint path -> (label, enhancer or None)."""
    if name in BASELINES:
        return name, None
    path = Path(name)
    if not path.exists():
        raise UsageError(f"system {name!r} is neither one of {BASELINES} nor an existing enhancer checkpoint")
    return path.parent.name or path.stem, ws.load_enhancer(path)


def cmd_synth_data(args):
    ws = _workspace(args)
    prepare_data(ws.cfg, ws.dir)
    print(f"wrote corpus, features and LM under {ws.dir}")


def cmd_train_am(args):
    ws = _workspace(args)
    train_am(ws)
    print(f"acoustic model saved to {ws.am_path()}")


def cmd_train_enhancer(args):
    ws = _workspace(args)
    cfg = ws.cfg.enhancer
    changes = {k: v for k, v in (("objective", args.objective), ("w_ad", args.w_ad), ("w_ac", args.w_ac)) if v is not None}
    cfg = replace(cfg, **changes)
    name = args.name or (sweep_name(cfg.w_ad) if cfg.objective == "aas" else cfg.objective)
    _, rec = run_enhancer(ws, name, cfg)
    print(f"enhancer saved to {rec.checkpoint} (best epoch {rec.best_epoch}, valid WER {rec.best_valid_wer:.4f})")


def cmd_sweep(args):
    ws = _workspace(args)
    grid = [float(x) for x in args.grid.split(",")] if args.grid else ws.cfg.sweep_grid
    rows = sweep_wad(ws, grid)
    for r in rows:
        print(f"w_AD={r['w_ad']:g}\tvalid WER {r['valid_wer']:.4f}\ttest WER {r['test_wer']:.4f}")


def cmd_enhance(args):
    ws = _workspace(args)
    if not Path(args.enhancer).exists():
        raise UsageError(f"enhancer checkpoint {args.enhancer} not found")
    enh = ws.load_enhancer(args.enhancer)
    out = enhance_set(enh, ws.features(args.split)).map(ws.stats.denormalize)
    out.save(args.out)
    print(f"wrote {len(out)} enhanced feature matrices to {args.out}")


def cmd_decode(args):
    ws = _workspace(args)
    label, enh = _system(ws, args.system)
    fs = system_features(ws, args.system, args.split, enh)
    lm = ws.lm()
    rcfg = RescoreCfg(args.alpha, args.beta, ws.cfg.decode.n_best)
    nb = nbest_lists(ws.load_am(), fs, ws.inv, rcfg.n_best)
    ranked = [(uid, rescore(h, lm, rcfg)) for uid, h in nb.items()]
    out = Path(args.out or ws.dir / "reports" / f"{label}.{args.split}.nbest.tsv")
    out.parent.mkdir(parents=True, exist_ok=True)
    write_nbest(out, ranked)
    print(f"wrote N-best lists for {len(ranked)} utterances to {out}")


def cmd_eval(args):
    ws = _workspace(args)
    am, lm = ws.load_am(), ws.lm()
    reports = []
    for name in args.system:
        label, enh = _system(ws, name)
        rep = evaluate(ws, label, am, enh, lm, nbest_dir=ws.dir / "reports")
        reports.append(rep)
        (ws.dir / "reports").mkdir(parents=True, exist_ok=True)
        (ws.dir / "reports" / f"eval-{label}.json").write_text(json.dumps(rep, indent=2) + "\n")
    for rep in reports:
        dce = "n/a" if rep["test_dce"] is None else f"{rep['test_dce']:.3f}"
        print(f"{rep['system']}\tgreedy WER {rep['test_greedy_wer']:.4f}\trescored WER "
              f"{rep['test_rescored_wer']:.4f}\tDCE {dce}")


def cmd_plot(args):
    if args.curves:
        for p in export_curves(args.curves, args.out):
            print(f"wrote {p}")
        return
    if args.feat:
        if not Path(args.feat).exists():
            raise UsageError(f"feature file {args.feat} not found")
        fs = FeatureSet.load(args.feat)
        uid = args.utt or fs.ids[0]
        if uid not in fs.feats:
            raise UsageError(f"utterance {uid!r} not in {args.feat}")
        write_pgm(args.out, to_image(fs.feats[uid]))
        print(f"wrote {args.out}")
        return
    ws = _workspace(args)
    if not args.enhancer or not Path(args.enhancer).exists():
        raise UsageError("plot needs --feat, --curves, or --triptych with an existing --enhancer checkpoint")
    noisy = ws.features(args.split)
    if args.triptych not in noisy.feats:
        raise UsageError(f"utterance {args.triptych!r} not in split {args.split}")
    one = noisy.subset([args.triptych])
    enh = enhance_set(ws.load_enhancer(args.enhancer), one)
    clean = ws.features(f"{args.split}-clean")
    den = ws.stats.denormalize
    img = triptych(den(one.feats[args.triptych]), den(enh.feats[args.triptych]), den(clean.feats[args.triptych]))
    write_pgm(args.out, img)
    print(f"wrote {args.out}")


def cmd_run(args):
    ws = _workspace(args)
    summary = run_experiment(ws.cfg, ws.dir)
    for name, rep in summary["reports"].items():
        print(f"{name}\tWER {rep['test_rescored_wer']:.4f}\tDCE {rep['test_dce']:.3f}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--exp-dir", required=True, help="experiment directory; all artefacts live here")
    common.add_argument("--config", help="JSON config (defaults to <exp-dir>/config.json when present)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config entry, e.g. enhancer.lr=0.003 (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="aasenh", description="Unpaired speech enhancement with acoustic and "
                                "adversarial supervision on a synthetic corpus.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("synth-data", parents=[common], help="synthesise the corpus, features and LM")
    sub.add_parser("train-am", parents=[common], help="pre-train the acoustic model on clean speech")
    s = sub.add_parser("train-enhancer", parents=[common], help="train one enhancer")
    s.add_argument("--objective", choices=OBJECTIVES)
    s.add_argument("--w-ad", type=float)
    s.add_argument("--w-ac", type=float)
    s.add_argument("--name", help="run name under enh/ (default derived from the objective)")
    s = sub.add_parser("sweep", parents=[common], help="aas runs over a grid of adversarial weights")
    s.add_argument("--grid", help="comma-separated w_AD values (default: config sweep_grid)")
    s = sub.add_parser("enhance", parents=[common], help="write enhanced features for a split")
    s.add_argument("--enhancer", required=True)
    s.add_argument("--split", default="noisy-test")
    s.add_argument("--out", required=True)
    s = sub.add_parser("decode", parents=[common], help="beam search plus LM rescoring, N-best dump")
    s.add_argument("--system", default="none", help=f"one of {BASELINES} or an enhancer checkpoint")
    s.add_argument("--split", default="noisy-test")
    s.add_argument("--alpha", type=float, default=0.0)
    s.add_argument("--beta", type=float, default=0.0)
    s.add_argument("--out")
    s = sub.add_parser("eval", parents=[common], help="WER (greedy and rescored) and DCE report")
    s.add_argument("--system", action="append", default=None,
                   help=f"one of {BASELINES} or an enhancer checkpoint (repeatable; default none)")
    s = sub.add_parser("plot", parents=[common], help="PGM feature images and CSV loss curves")
    s.add_argument("--feat", help="FEAT file to render (image width T, height F)")
    s.add_argument("--utt", help="utterance id inside --feat (default: first)")
    s.add_argument("--triptych", metavar="UTT", help="noisy / enhanced / clean panels for this utterance")
    s.add_argument("--enhancer", help="enhancer checkpoint for --triptych")
    s.add_argument("--split", default="noisy-test")
    s.add_argument("--curves", metavar="RUN_DIR", help="export the epoch and step logs of a run")
    s.add_argument("--out", required=True)
    sub.add_parser("run", parents=[common], help="full recipe: data, AM, sweep, baselines, evaluation")
    return p


COMMANDS = {
    "synth-data": cmd_synth_data, "train-am": cmd_train_am, "train-enhancer": cmd_train_enhancer,
    "sweep": cmd_sweep, "enhance": cmd_enhance, "decode": cmd_decode, "eval": cmd_eval, "plot": cmd_plot,
    "run": cmd_run,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command == "eval" and not args.system:
        args.system = ["none"]
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        COMMANDS[args.command](args)
    except (UsageError, FileNotFoundError) as exc:
        print(f"aasenh {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, CheckpointError, AudioFormatError, TrainingDiverged, ValueError, KeyError) as exc:
        print(f"aasenh {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
