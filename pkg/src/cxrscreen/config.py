"""Experiment configuration: one grid cell of architecture x protocol x policy.

A config carries everything a single run needs and hashes to a stable
fingerprint, so results can be stored, resumed and traced per grid cell.
Configs load from a human-editable YAML file; CLI flags override file values.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import yaml

from .labels import LabelPolicy
from .models import AdaptationProtocol
from .preprocess import IMAGENET_MEAN, IMAGENET_STD


@dataclass(frozen=True)
class Hyperparameters:
    """Fixed training hyperparameters; defaults match the benchmark setup."""

    epochs: int = 6
    batch_size: int = 16
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 1e-5

    def __post_init__(self) -> None:
        if self.epochs <= 0 or self.batch_size <= 0:
            raise ValueError("epochs and batch_size must be positive")
        if self.learning_rate <= 0 or self.weight_decay < 0:
            raise ValueError("learning_rate must be positive, weight_decay non-negative")


@dataclass(frozen=True)
class ExperimentConfig:
    """One grid cell plus paths, seed and device."""

    arch: str
    protocol: AdaptationProtocol
    policy: LabelPolicy
    hyper: Hyperparameters = field(default_factory=Hyperparameters)
    data_root: str = "."
    train_manifest: str = "train.csv"
    eval_manifest: str = "valid.csv"
    output_dir: str = "runs"
    seed: int = 0
    device: str = "cpu"
    image_size: int = 320
    flip_probability: float = 0.5
    crop_scale_range: tuple[float, float] = (0.8, 1.0)
    normalization_mean: tuple[float, float, float] = IMAGENET_MEAN
    normalization_std: tuple[float, float, float] = IMAGENET_STD
    missing_as_negative: bool = False
    frontal_only: bool = False
    # Loss denominator: unmasked-entry count (default) or fixed batch x 14.
    fixed_loss_denominator: bool = False
    # Checkpoint selection: final epoch (default) or best mean eval AUC.
    select_best_on_eval: bool = False

    def to_dict(self) -> dict:
        raw = asdict(self)
        raw["protocol"] = self.protocol.value
        raw["policy"] = self.policy.value
        raw["crop_scale_range"] = list(self.crop_scale_range)
        raw["normalization_mean"] = list(self.normalization_mean)
        raw["normalization_std"] = list(self.normalization_std)
        return raw

    def fingerprint(self) -> str:
        """Stable hash of every field; unique per grid cell."""
        canonical = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(canonical.encode()).hexdigest()[:16]

    def off_the_shelf_sibling(self) -> "ExperimentConfig":
        """The matching O-protocol config a fine-tune run warm-starts from."""
        return replace(self, protocol=AdaptationProtocol.OFF_THE_SHELF)

    def checkpoint_path(self, kind: str = "final") -> Path:
        return Path(self.output_dir) / "checkpoints" / f"{self.fingerprint()}_{kind}.pt"

    def predictions_path(self) -> Path:
        return Path(self.output_dir) / "predictions" / f"{self.fingerprint()}.csv"

    def log_path(self) -> Path:
        return Path(self.output_dir) / "logs" / f"{self.fingerprint()}.jsonl"


def config_from_dict(raw: dict) -> ExperimentConfig:
    raw = dict(raw)
    hyper = Hyperparameters(**raw.pop("hyper", {}))
    raw["protocol"] = AdaptationProtocol(raw["protocol"])
    raw["policy"] = LabelPolicy(raw["policy"])
    for key in ("crop_scale_range", "normalization_mean", "normalization_std"):
        if key in raw:
            raw[key] = tuple(raw[key])
    return ExperimentConfig(hyper=hyper, **raw)


def load_config(path: str | Path, overrides: dict | None = None) -> ExperimentConfig:
    """Read a YAML config file; overrides (e.g. CLI flags) win over file values."""
    with open(path) as handle:
        raw = yaml.safe_load(handle) or {}
    if overrides:
        hyper_overrides = overrides.pop("hyper", None)
        if hyper_overrides:
            raw.setdefault("hyper", {}).update(hyper_overrides)
        raw.update({k: v for k, v in overrides.items() if v is not None})
    return config_from_dict(raw)


def save_config(config: ExperimentConfig, path: str | Path) -> None:
    """Archive the fully resolved config next to the run outputs."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as handle:
        yaml.safe_dump(config.to_dict(), handle, sort_keys=True)
