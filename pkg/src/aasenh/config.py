"""Experiment configuration: one JSON file with nested sections plus ``key.path=value`` overrides."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .corpus import ToyCorpusSpec
from .nets import NetConfig

OBJECTIVES = ("aas", "dce", "acoustic_only", "adversarial_only")


class ConfigError(ValueError):
    pass


@dataclass
class AMTrainCfg:
    epochs: int = 50
    batch_size: int = 30
    lr: float = 1e-3
    seed: int = 0
    patience: int = 0  # stop after this many epochs without improvement; 0 disables


@dataclass
class TrainCfg:
    """Enhancer training; weights follow the joint objective w_AC * CTC + w_AD * adversarial."""

    objective: str = "aas"
    w_ac: float = 1.0
    w_ad: float = 1e5
    epochs: int = 100
    batch_size: int = 30
    lr: float = 1e-5
    seed: int = 0
    began_mode: str = "began-standard"
    gamma: float = 0.5
    lam: float = 0.001
    normalization: str = "global-clean"

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ConfigError(f"unknown objective {self.objective!r}; expected one of {OBJECTIVES}")
        if self.w_ac < 0 or self.w_ad < 0:
            raise ConfigError("loss weights must be >= 0")
        if self.objective == "aas" and self.w_ac == 0 and self.w_ad == 0:
            raise ConfigError("aas objective needs w_ac > 0 or w_ad > 0")
        if self.normalization != "global-clean":
            raise ConfigError("only the 'global-clean' normalization policy is implemented")

    @property
    def weights(self) -> tuple[float, float]:
        """Effective (w_AC, w_AD) for the chosen objective."""
        if self.objective == "acoustic_only":
            return self.w_ac or 1.0, 0.0
        if self.objective == "adversarial_only":
            return 0.0, self.w_ad or 1.0
        if self.objective == "dce":
            return 0.0, 0.0
        return self.w_ac, self.w_ad


@dataclass
class DecodeCfg:
    n_best: int = 100
    alphas: list = field(default_factory=lambda: [0.0, 0.5, 1.0, 2.0])
    betas: list = field(default_factory=lambda: [0.0, 0.5, 1.0])
    lm_order: int = 3
    lm_k: float = 0.1


@dataclass
class ExperimentCfg:
    corpus: ToyCorpusSpec = field(default_factory=ToyCorpusSpec)
    sizes: dict = field(default_factory=lambda: {
        "am-train": 2000, "am-valid": 200, "noisy-train": 600, "noisy-valid": 150, "noisy-test": 200})
    nets: NetConfig = field(default_factory=NetConfig)
    am_train: AMTrainCfg = field(default_factory=AMTrainCfg)
    enhancer: TrainCfg = field(default_factory=TrainCfg)
    sweep_grid: list = field(default_factory=lambda: [0.0, 1e3, 1e5, 1e7])
    decode: DecodeCfg = field(default_factory=DecodeCfg)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentCfg":
        d = {k: v for k, v in d.items() if not k.startswith("_")}
        known = {"corpus", "sizes", "nets", "am_train", "enhancer", "sweep_grid", "decode"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config sections {sorted(unknown)}")
        try:
            return cls(
                corpus=ToyCorpusSpec.from_dict(d.get("corpus", {})),
                sizes={**cls().sizes, **d.get("sizes", {})},
                nets=NetConfig.from_dict(d.get("nets", {})),
                am_train=AMTrainCfg(**d.get("am_train", {})),
                enhancer=TrainCfg(**d.get("enhancer", {})),
                sweep_grid=[float(w) for w in d.get("sweep_grid", cls().sweep_grid)],
                decode=DecodeCfg(**d.get("decode", {})),
            )
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def to_dict(self) -> dict:
        return {
            "corpus": self.corpus.to_dict(),
            "sizes": dict(self.sizes),
            "nets": self.nets.to_dict(),
            "am_train": asdict(self.am_train),
            "enhancer": asdict(self.enhancer),
            "sweep_grid": list(self.sweep_grid),
            "decode": asdict(self.decode),
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


def apply_overrides(d: dict, overrides: list[str]) -> dict:
    """Apply ``a.b.c=value`` overrides in place; values are parsed as JSON when possible."""
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = d
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r}: {p!r} is not a section")
        node[parts[-1]] = value
    return d


def load_config(path=None, overrides: list[str] | None = None) -> ExperimentCfg:
    d = json.loads(Path(path).read_text()) if path else {}
    return ExperimentCfg.from_dict(apply_overrides(d, overrides or []))
