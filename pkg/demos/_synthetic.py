"""Shared support for the demo scripts: tiny synthetic radiograph datasets.

Three pathologies get visual signatures that survive global average pooling
(brightness, vertical stripes, horizontal stripes); everything else stays
blank. Good enough to train a small backbone in seconds on a CPU.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np
from PIL import Image

from cxrscreen import CLASS_NAMES

ACTIVE_CLASSES = ("Cardiomegaly", "Pleural Effusion", "Edema")


def render_study_image(rng: np.random.Generator, bits: tuple[int, int, int], size: int = 64) -> np.ndarray:
    bright, vertical, horizontal = bits
    img = np.full((size, size), 0.35) + rng.uniform(0.0, 0.05, (size, size))
    if bright:
        img += 0.30
    phase = 2.0 * np.pi * np.arange(size) / 4.0
    if vertical:
        img += 0.18 * (np.sin(phase)[None, :] * 0.5 + 0.5)
    if horizontal:
        img += 0.18 * (np.sin(phase)[:, None] * 0.5 + 0.5)
    return np.clip(img, 0.0, 1.0)


def save_gray(path, array: np.ndarray) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    as_u8 = np.clip(np.asarray(array) * 255.0, 0, 255).round().astype(np.uint8)
    Image.fromarray(as_u8, mode="L").save(path)
    return path


def build_task(
    root,
    n_train: int,
    n_eval: int,
    size: int = 64,
    seed: int = 0,
    uncertain_fraction: float = 0.1,
) -> tuple[Path, Path]:
    """Write train/valid manifests plus images under ``root``.

    Train labels on the active classes flip to uncertain with the given
    probability; eval labels are always certain; inactive classes are blank.
    """
    root = Path(root)
    rng = np.random.default_rng(seed)
    manifests = {}
    for split, n in (("train", n_train), ("valid", n_eval)):
        rows = []
        for i in range(n):
            bits = tuple(int(b) for b in rng.integers(0, 2, size=3))
            rel = f"{split}/patient{i:04d}/study1/view1_frontal.png"
            save_gray(root / rel, render_study_image(rng, bits, size))
            labels = {name: "" for name in CLASS_NAMES}
            for name, bit in zip(ACTIVE_CLASSES, bits):
                value = float(bit)
                if split == "train" and rng.uniform() < uncertain_fraction:
                    value = -1.0
                labels[name] = f"{value:.1f}"
            rows.append((rel, labels))
        manifest = root / f"{split}.csv"
        with open(manifest, "w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(["Path", "Frontal/Lateral", "AP/PA", *CLASS_NAMES])
            for rel, labels in rows:
                writer.writerow([rel, "Frontal", "AP", *(labels[name] for name in CLASS_NAMES)])
        manifests[split] = manifest
    return manifests["train"], manifests["valid"]
