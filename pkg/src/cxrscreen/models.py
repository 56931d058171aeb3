"""Candidate architectures with a shared GAP + 14-way sigmoid head.

Each backbone ends in convolutional feature maps; the classification layers
of the source architecture are dropped and replaced by global average
pooling followed by a single fully-connected layer with one output per
pathology. Outputs are independent sigmoid scores (multi-hot), never a
softmax distribution.
"""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import torch
import torch.nn as nn

from .labels import NUM_CLASSES, LabelPolicy
from .xception import XceptionFeatures


class ArchitectureId(enum.Enum):
    """The seven candidate CNN architectures."""

    VGG16_BN = "vgg16_bn"
    VGG19_BN = "vgg19_bn"
    INCEPTION_V3 = "inception_v3"
    RESNET18 = "resnet18"
    RESNET50 = "resnet50"
    DENSENET121 = "densenet121"
    XCEPTION = "xception"


class AdaptationProtocol(enum.Enum):
    """How pretrained weights are used during adaptation."""

    RANDOM_INIT = "R"
    OFF_THE_SHELF = "O"
    FINE_TUNE = "F"


class WeightsUnavailableError(RuntimeError):
    """Raised when required pretrained weights cannot be obtained."""


class CheckpointMismatchError(ValueError):
    """Raised when a checkpoint does not match the target run's spec."""


@dataclass(frozen=True)
class BackboneEntry:
    """Registry entry: how to build a trunk and where its weights come from."""

    name: str
    feature_dim: int
    build: Callable[[bool], nn.Module]
    pretrained_source: str  # "torchvision", "package", or "seeded-random"


class ScreeningModel(nn.Module):
    """Backbone + GAP + 14-way linear head; forward returns logits."""

    def __init__(self, arch: str, backbone: nn.Module, feature_dim: int):
        super().__init__()
        self.arch = arch
        self.backbone = backbone
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.head = nn.Linear(feature_dim, NUM_CLASSES)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        features = self.backbone(x)
        pooled = self.pool(features).flatten(1)
        return self.head(pooled)

    def predict_scores(self, x: torch.Tensor) -> torch.Tensor:
        """Per-class sigmoid scores in (0, 1); no softmax anywhere."""
        return torch.sigmoid(self.forward(x))


def _torchvision_backbone(factory_name: str) -> Callable[[bool], nn.Module]:
    def build(pretrained: bool) -> nn.Module:
        from torchvision import models as tvm

        factory = getattr(tvm, factory_name)
        weights = "IMAGENET1K_V1" if pretrained else None
        try:
            if factory_name == "inception_v3":
                # Single-head design: the auxiliary classifier is disabled.
                model = factory(weights=weights, aux_logits=False, init_weights=not pretrained)
            else:
                model = factory(weights=weights)
        except Exception as exc:
            raise WeightsUnavailableError(
                f"pretrained ImageNet weights for {factory_name!r} could not be loaded "
                f"({exc}); download them on a connected machine into TORCH_HOME "
                "or run with the random-init protocol"
            ) from exc

        if factory_name.startswith("vgg"):
            return model.features
        if factory_name.startswith("resnet"):
            return nn.Sequential(*list(model.children())[:-2])
        if factory_name == "densenet121":
            return nn.Sequential(model.features, nn.ReLU(inplace=False))
        if factory_name == "inception_v3":
            # Drop avgpool, dropout and fc; aux head is absent.
            return nn.Sequential(*list(model.children())[:-3])
        raise ValueError(f"no feature-extraction rule for {factory_name}")

    return build


def _xception_backbone(pretrained: bool) -> nn.Module:
    if pretrained:
        raise WeightsUnavailableError(
            "pretrained Xception weights are not bundled; convert a community "
            "checkpoint to this layout and load it via init-from-checkpoint"
        )
    return XceptionFeatures()


class TinyBackbone(nn.Module):
    """One 8-channel conv; the minimal trunk used in tests and demos."""

    out_channels = 8

    def __init__(self):
        super().__init__()
        self.conv = nn.Conv2d(3, 8, 3, padding=1)
        self.act = nn.ReLU(inplace=False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.act(self.conv(x))


class SmallBackbone(nn.Module):
    """Three strided conv blocks; cheap enough for CPU end-to-end runs."""

    out_channels = 32

    def __init__(self):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(3, 8, 3, stride=2, padding=1),
            nn.BatchNorm2d(8),
            nn.ReLU(inplace=False),
            nn.Conv2d(8, 16, 3, stride=2, padding=1),
            nn.BatchNorm2d(16),
            nn.ReLU(inplace=False),
            nn.Conv2d(16, 32, 3, stride=2, padding=1),
            nn.BatchNorm2d(32),
            nn.ReLU(inplace=False),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)


REGISTRY: dict[str, BackboneEntry] = {}


def register_backbone(entry: BackboneEntry) -> None:
    REGISTRY[entry.name] = entry


for _name, _factory, _dim in [
    ("vgg16_bn", "vgg16_bn", 512),
    ("vgg19_bn", "vgg19_bn", 512),
    ("inception_v3", "inception_v3", 2048),
    ("resnet18", "resnet18", 512),
    ("resnet50", "resnet50", 2048),
    ("densenet121", "densenet121", 1024),
]:
    register_backbone(
        BackboneEntry(_name, _dim, _torchvision_backbone(_factory), "torchvision")
    )
register_backbone(BackboneEntry("xception", 2048, _xception_backbone, "package"))

# Small trunks without an ImageNet counterpart: under O/F their "pretrained"
# initialization is a fixed-seed random draw, recorded as such.
register_backbone(BackboneEntry("tiny8", 8, lambda pretrained: TinyBackbone(), "seeded-random"))
register_backbone(BackboneEntry("small32", 32, lambda pretrained: SmallBackbone(), "seeded-random"))


def _resolve(arch: ArchitectureId | str) -> BackboneEntry:
    name = arch.value if isinstance(arch, ArchitectureId) else arch
    if name not in REGISTRY:
        raise ValueError(f"unknown architecture {name!r}; registered: {sorted(REGISTRY)}")
    return REGISTRY[name]


def build_model(
    arch: ArchitectureId | str,
    protocol: AdaptationProtocol = AdaptationProtocol.RANDOM_INIT,
    seed: int | None = None,
) -> ScreeningModel:
    """Build an architecture with the replaced GAP + 14-way head.

    Protocols O and F start from pretrained backbone weights; R starts from
    random weights. The head is always freshly initialized here (F warm-starts
    it later from an O checkpoint via init_head_from).
    """
    entry = _resolve(arch)
    if seed is not None:
        torch.manual_seed(seed)
    pretrained = protocol in (AdaptationProtocol.OFF_THE_SHELF, AdaptationProtocol.FINE_TUNE)
    if entry.pretrained_source == "seeded-random" and pretrained:
        # Deterministic surrogate for an off-the-shelf initialization.
        torch.manual_seed(0 if seed is None else seed)
        backbone = entry.build(False)
    else:
        backbone = entry.build(pretrained)
    model = ScreeningModel(entry.name, backbone, entry.feature_dim)
    set_trainable(model, protocol)
    return model


def set_trainable(model: ScreeningModel, protocol: AdaptationProtocol) -> None:
    """Partition parameters per protocol: O freezes the backbone, R/F train all."""
    freeze_backbone = protocol is AdaptationProtocol.OFF_THE_SHELF
    for param in model.backbone.parameters():
        param.requires_grad = not freeze_backbone
    for param in model.head.parameters():
        param.requires_grad = True
    if freeze_backbone:
        # Frozen features: keep batch-norm running statistics fixed too.
        model.backbone.eval()


def trainable_parameters(model: nn.Module) -> list[nn.Parameter]:
    return [p for p in model.parameters() if p.requires_grad]


def count_parameters(model: nn.Module) -> int:
    """Total scalar parameter count, trainable or not."""
    return sum(p.numel() for p in model.parameters())


def parameter_hash(module: nn.Module) -> str:
    """SHA-256 over all parameters and buffers, in state-dict order."""
    digest = hashlib.sha256()
    state = module.state_dict()
    for key in sorted(state):
        digest.update(key.encode())
        digest.update(state[key].detach().cpu().numpy().tobytes())
    return digest.hexdigest()


def save_checkpoint(
    model: ScreeningModel,
    path: str | Path,
    protocol: AdaptationProtocol,
    policy: LabelPolicy,
    epoch: int,
    config_fingerprint: str = "",
    rng_state: dict | None = None,
    extra: dict | None = None,
) -> None:
    """Write a self-describing checkpoint archive."""
    payload = {
        "arch": model.arch,
        "protocol": protocol.value,
        "policy": policy.value,
        "epoch": epoch,
        "config_fingerprint": config_fingerprint,
        "state_dict": model.state_dict(),
        "rng_state": rng_state or {},
        "extra": extra or {},
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)


def load_checkpoint(path: str | Path) -> dict:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return torch.load(path, map_location="cpu", weights_only=False)


def restore_model(payload: dict) -> ScreeningModel:
    """Rebuild the model described by a checkpoint and load its weights.

    Built with random init regardless of the recorded protocol: the weights
    come from the checkpoint, so no pretrained fetch is needed.
    """
    model = build_model(payload["arch"], AdaptationProtocol.RANDOM_INIT)
    model.load_state_dict(payload["state_dict"])
    set_trainable(model, AdaptationProtocol(payload["protocol"]))
    return model


def init_head_from(
    model: ScreeningModel,
    checkpoint_path: str | Path,
    policy: LabelPolicy | None = None,
) -> ScreeningModel:
    """Warm-start the head from an off-the-shelf checkpoint of the same run spec."""
    payload = load_checkpoint(checkpoint_path)
    if payload["arch"] != model.arch:
        raise CheckpointMismatchError(
            f"checkpoint is for arch {payload['arch']!r}, model is {model.arch!r}"
        )
    if payload["protocol"] != AdaptationProtocol.OFF_THE_SHELF.value:
        raise CheckpointMismatchError(
            f"head warm-start requires an off-the-shelf checkpoint, got protocol "
            f"{payload['protocol']!r}"
        )
    if policy is not None and payload["policy"] != policy.value:
        raise CheckpointMismatchError(
            f"checkpoint policy {payload['policy']!r} does not match run policy "
            f"{policy.value!r}"
        )
    head_state = {
        key.removeprefix("head."): value
        for key, value in payload["state_dict"].items()
        if key.startswith("head.")
    }
    model.head.load_state_dict(head_state)
    return model
