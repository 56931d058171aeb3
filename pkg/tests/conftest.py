"""Shared fixtures: manifest writers, tiny images, separable synthetic tasks."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from cxrscreen import CLASS_INDEX, CLASS_NAMES

MANIFEST_HEADER = ["Path", "Frontal/Lateral", "AP/PA", *CLASS_NAMES]

# The three synthetically separable pathologies and their image signatures:
# global brightness, vertical stripes, horizontal stripes. All three survive
# global average pooling.
ACTIVE_CLASSES = ("Cardiomegaly", "Pleural Effusion", "Edema")


def blank_labels() -> dict[str, str]:
    return {name: "" for name in CLASS_NAMES}


def write_manifest(path, rows) -> Path:
    """rows: iterable of (image_path, labels dict, view, projection)."""
    path = Path(path)
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(MANIFEST_HEADER)
        for image_path, labels, view, projection in rows:
            writer.writerow(
                [image_path, view, projection, *(labels[name] for name in CLASS_NAMES)]
            )
    return path


def save_gray(path, array: np.ndarray) -> Path:
    """Write a [0, 1] float array as an 8-bit grayscale PNG."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    as_u8 = np.clip(np.asarray(array) * 255.0, 0, 255).round().astype(np.uint8)
    Image.fromarray(as_u8, mode="L").save(path)
    return path


def render_study_image(rng: np.random.Generator, bits: tuple[int, int, int], size: int = 64) -> np.ndarray:
    """Render one synthetic radiograph whose three class signatures are the bits."""
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


def build_separable_task(
    root,
    n_train: int,
    n_eval: int,
    source_size: int = 64,
    seed: int = 0,
    uncertain_fraction: float = 0.1,
) -> tuple[Path, Path]:
    """Write a 3-class-active separable dataset under ``root``.

    Train labels for the active classes are flipped to uncertain with the
    given probability (the image still reflects the true bit); eval labels
    are always certain. The 11 inactive classes stay blank.
    """
    root = Path(root)
    rng = np.random.default_rng(seed)
    manifests = {}
    for split, n in (("train", n_train), ("valid", n_eval)):
        rows = []
        for i in range(n):
            bits = tuple(int(b) for b in rng.integers(0, 2, size=3))
            image_path = root / "images" / f"{split}_{i}.png"
            save_gray(image_path, render_study_image(rng, bits, size=source_size))
            labels = blank_labels()
            for name, bit in zip(ACTIVE_CLASSES, bits):
                cell = "1.0" if bit else "0.0"
                if split == "train" and rng.random() < uncertain_fraction:
                    cell = "-1.0"
                labels[name] = cell
            rows.append((str(image_path), labels, "Frontal", "AP"))
        manifests[split] = write_manifest(root / f"{split}.csv", rows)
    return manifests["train"], manifests["valid"]


def build_mini_task(root, n_train: int = 20, n_eval: int = 10, size: int = 16, seed: int = 0):
    """A very small task for runner/CLI tests: one brightness class, certain
    alternating labels on every reported class so all AUCs are defined."""
    root = Path(root)
    rng = np.random.default_rng(seed)
    manifests = {}
    for split, n in (("train", n_train), ("valid", n_eval)):
        rows = []
        for i in range(n):
            bright = i % 2
            img = np.full((size, size), 0.2 + 0.5 * bright) + rng.uniform(0, 0.05, (size, size))
            image_path = root / "images" / f"{split}_{i}.png"
            save_gray(image_path, np.clip(img, 0, 1))
            labels = {name: ("1.0" if (i + k) % 2 == 0 else "0.0") for k, name in enumerate(CLASS_NAMES)}
            labels["Cardiomegaly"] = "1.0" if bright else "0.0"
            rows.append((str(image_path), labels, "Frontal", "AP"))
        manifests[split] = write_manifest(root / f"{split}.csv", rows)
    return manifests["train"], manifests["valid"]


@pytest.fixture
def manifest_dir(tmp_path):
    return tmp_path


@pytest.fixture(scope="session")
def mini_task(tmp_path_factory):
    root = tmp_path_factory.mktemp("mini_task")
    train, valid = build_mini_task(root)
    return {"root": root, "train": train, "valid": valid}


@pytest.fixture
def gray_png(tmp_path):
    """Factory: write a [0,1] float array as a grayscale PNG, return its path."""

    def make(array, name="img.png"):
        return save_gray(tmp_path / name, array)

    return make


def active_truth(records) -> dict[str, np.ndarray]:
    """Ground-truth 0/1 vectors for the three active classes of a separable task."""
    from cxrscreen import LabelState

    out = {}
    for name in ACTIVE_CLASSES:
        idx = CLASS_INDEX[name]
        out[name] = np.array(
            [1 if r.labels[idx] is LabelState.POSITIVE else 0 for r in records]
        )
    return out
