"""Run configuration: a strict JSON document driving the whole pipeline.

Unknown keys are rejected at every level so ablation axes are spelled
exactly. Every field has a default except the paths section.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .features import FeatureConfig
from .model import ModelConfig

_FEATURE_KEYS = {"sample_rate", "frame_length_ms", "hop_ms", "n_fft", "n_mels",
                 "f_min", "f_max"}
_TEXT_KEYS = {"mode", "tokenizer", "target_sr"}
_TRAIN_KEYS = {"epochs", "batch", "lr", "seed", "max_steps"}
_BACKEND_KEYS = {"lda_dim", "em_iters"}
_PATH_KEYS = {"manifest", "work_dir"}
_TOP_KEYS = {"features", "text", "model", "train", "backend", "paths"}


@dataclass
class TextConfig:
    mode: str = "transcript"         # "transcript" or "alignment"
    tokenizer: str = "char"          # "char" or "word" (transcripts only)
    target_sr: int | None = None     # upsample alignments to this rate

    def __post_init__(self):
        if self.mode not in ("transcript", "alignment"):
            raise ConfigError(f"text.mode must be transcript or alignment, got {self.mode!r}")
        if self.tokenizer not in ("char", "word"):
            raise ConfigError(f"text.tokenizer must be char or word, got {self.tokenizer!r}")


@dataclass
class TrainConfig:
    epochs: int = 10
    batch: int = 4
    lr: float = 1e-3
    seed: int = 0
    max_steps: int | None = None


@dataclass
class BackendConfig:
    lda_dim: int = 150               # clamped to min(n_classes-1, D_e-1)
    em_iters: int = 20


@dataclass
class RunConfig:
    features: FeatureConfig = field(default_factory=FeatureConfig)
    text: TextConfig = field(default_factory=TextConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    backend: BackendConfig = field(default_factory=BackendConfig)
    manifest: str = ""
    work_dir: str = ""

    def __post_init__(self):
        if self.model.n_mels != self.features.n_mels:
            self.model.n_mels = self.features.n_mels

    def to_dict(self) -> dict:
        return {
            "features": {k: getattr(self.features, k) for k in sorted(_FEATURE_KEYS)},
            "text": {k: getattr(self.text, k) for k in sorted(_TEXT_KEYS)},
            "model": self.model.to_dict(),
            "train": {k: getattr(self.train, k) for k in sorted(_TRAIN_KEYS)},
            "backend": {k: getattr(self.backend, k) for k in sorted(_BACKEND_KEYS)},
            "paths": {"manifest": self.manifest, "work_dir": self.work_dir},
        }


def _check_keys(section: str, doc: dict, allowed: set):
    unknown = set(doc) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {section}: {sorted(unknown)}")


def config_from_dict(doc: dict) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("run config must be a JSON object")
    _check_keys("config", doc, _TOP_KEYS)
    feats = doc.get("features", {})
    _check_keys("features", feats, _FEATURE_KEYS)
    text = doc.get("text", {})
    _check_keys("text", text, _TEXT_KEYS)
    model = doc.get("model", {})
    train = doc.get("train", {})
    _check_keys("train", train, _TRAIN_KEYS)
    backend = doc.get("backend", {})
    _check_keys("backend", backend, _BACKEND_KEYS)
    paths = doc.get("paths", {})
    _check_keys("paths", paths, _PATH_KEYS)
    try:
        cfg = RunConfig(
            features=FeatureConfig(**feats),
            text=TextConfig(**text),
            model=ModelConfig.from_dict(model),
            train=TrainConfig(**train),
            backend=BackendConfig(**backend),
            manifest=paths.get("manifest", ""),
            work_dir=paths.get("work_dir", ""),
        )
    except TypeError as e:
        raise ConfigError(f"bad run config: {e}")
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    with open(path, encoding="utf-8") as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON ({e})")
    return config_from_dict(doc)


def save_config(path, cfg: RunConfig):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(cfg.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")
