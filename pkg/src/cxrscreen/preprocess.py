"""Image loading, resizing, normalization and training-time augmentation.

Every radiograph is turned into a 3x320x320 float tensor: bilinear resize,
pixel values scaled to [0, 1], grayscale channel replicated three times.
Augmentation (random horizontal flip, random area crop + resize) is applied
only to training images; normalization uses ImageNet channel statistics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image

INPUT_SIZE = 320

# Standard ImageNet channel statistics; configs may override them.
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


class ImageLoadError(RuntimeError):
    """Raised when an image file cannot be read or has degenerate size."""


@dataclass
class ImageTensor:
    """A 3-channel float image plus the path it came from."""

    data: np.ndarray
    source: str = ""

    def __post_init__(self) -> None:
        if self.data.ndim != 3 or self.data.shape[0] != 3:
            raise ValueError(f"expected (3, H, W) data, got shape {self.data.shape}")


@dataclass(frozen=True)
class NormalizationStats:
    mean: tuple[float, float, float] = IMAGENET_MEAN
    std: tuple[float, float, float] = IMAGENET_STD

    def __post_init__(self) -> None:
        if any(s <= 0 for s in self.std):
            raise ValueError("std must be positive")


@dataclass(frozen=True)
class AugmentationConfig:
    """Random horizontal flip plus area-fraction crop, both seed-driven."""

    flip_probability: float = 0.5
    crop_scale_range: tuple[float, float] = (0.8, 1.0)
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.flip_probability <= 1.0:
            raise ValueError("flip_probability must be in [0, 1]")
        lo, hi = self.crop_scale_range
        if not 0.0 < lo <= hi <= 1.0:
            raise ValueError("crop_scale_range must satisfy 0 < lo <= hi <= 1")


def bilinear_resize(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize of a 2D array using half-pixel centers and edge clamping.

    Output pixel (i, j) samples the input at
    ((i + 0.5) * H/out_h - 0.5, (j + 0.5) * W/out_w - 0.5).
    """
    in_h, in_w = image.shape
    if in_h == 0 or in_w == 0 or out_h <= 0 or out_w <= 0:
        raise ValueError("zero-dimension image")
    rows = (np.arange(out_h) + 0.5) * (in_h / out_h) - 0.5
    cols = (np.arange(out_w) + 0.5) * (in_w / out_w) - 0.5
    return _sample_bilinear(image, rows, cols)


def _sample_bilinear(image: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Sample image at the outer product of fractional row/col coordinates."""
    in_h, in_w = image.shape[-2:]
    rows = np.clip(rows, 0.0, in_h - 1.0)
    cols = np.clip(cols, 0.0, in_w - 1.0)
    r0 = np.floor(rows).astype(np.int64)
    c0 = np.floor(cols).astype(np.int64)
    r1 = np.minimum(r0 + 1, in_h - 1)
    c1 = np.minimum(c0 + 1, in_w - 1)
    wr = (rows - r0)[..., :, None]
    wc = (cols - c0)[..., None, :]
    top = image[..., r0[:, None], c0[None, :]] * (1 - wc) + image[..., r0[:, None], c1[None, :]] * wc
    bottom = image[..., r1[:, None], c0[None, :]] * (1 - wc) + image[..., r1[:, None], c1[None, :]] * wc
    return top * (1 - wr) + bottom * wr


def _to_unit_gray(img: Image.Image) -> np.ndarray:
    """Decode a PIL image to a [0, 1] float32 grayscale array."""
    if img.mode in ("I", "I;16", "I;16B", "I;16L"):
        arr = np.asarray(img, dtype=np.float64)
        scale = 65535.0 if arr.max() > 255 else 255.0
        return (arr / scale).astype(np.float32)
    if img.mode != "L":
        img = img.convert("L")
    return (np.asarray(img, dtype=np.float32) / 255.0).astype(np.float32)


def load_resize_replicate(path: str, size: int = INPUT_SIZE) -> ImageTensor:
    """Load a grayscale radiograph, resize to size x size, replicate to 3 channels."""
    try:
        with Image.open(path) as img:
            gray = _to_unit_gray(img)
    except FileNotFoundError:
        raise ImageLoadError(f"image file not found: {path}") from None
    except Exception as exc:
        raise ImageLoadError(f"cannot read image {path}: {exc}") from exc
    if gray.ndim != 2 or gray.shape[0] == 0 or gray.shape[1] == 0:
        raise ImageLoadError(f"image {path} has degenerate shape {gray.shape}")
    resized = bilinear_resize(gray.astype(np.float64), size, size).astype(np.float32)
    data = np.repeat(resized[None, :, :], 3, axis=0)
    return ImageTensor(data=data, source=str(path))


def replicate_gray(gray: np.ndarray, size: int = INPUT_SIZE, source: str = "") -> ImageTensor:
    """Resize an in-memory grayscale array and replicate it to 3 channels."""
    resized = bilinear_resize(gray.astype(np.float64), size, size).astype(np.float32)
    return ImageTensor(data=np.repeat(resized[None, :, :], 3, axis=0), source=source)


def normalize(tensor: ImageTensor, stats: NormalizationStats) -> ImageTensor:
    """Per-channel (x - mean) / std."""
    mean = np.asarray(stats.mean, dtype=np.float32)[:, None, None]
    std = np.asarray(stats.std, dtype=np.float32)[:, None, None]
    return ImageTensor(data=(tensor.data - mean) / std, source=tensor.source)


def denormalize(tensor: ImageTensor, stats: NormalizationStats) -> ImageTensor:
    mean = np.asarray(stats.mean, dtype=np.float32)[:, None, None]
    std = np.asarray(stats.std, dtype=np.float32)[:, None, None]
    return ImageTensor(data=tensor.data * std + mean, source=tensor.source)


def augment(
    tensor: ImageTensor,
    cfg: AugmentationConfig,
    rng: np.random.Generator,
) -> ImageTensor:
    """Random horizontal flip, then a random area-fraction crop resized back.

    Pure function of (input, cfg, rng state): the same generator state always
    produces the same output. The crop keeps the aspect ratio, with area
    fraction drawn uniformly from cfg.crop_scale_range and uniform position.
    """
    data = tensor.data
    _, height, width = data.shape
    if rng.random() < cfg.flip_probability:
        data = data[:, :, ::-1]

    lo, hi = cfg.crop_scale_range
    area = rng.uniform(lo, hi)
    side = float(np.sqrt(area))
    crop_h = max(1, int(round(height * side)))
    crop_w = max(1, int(round(width * side)))
    top = int(rng.integers(0, height - crop_h + 1))
    left = int(rng.integers(0, width - crop_w + 1))
    crop = data[:, top : top + crop_h, left : left + crop_w]

    if crop_h == height and crop_w == width:
        out = np.ascontiguousarray(crop, dtype=np.float32)
    else:
        rows = (np.arange(height) + 0.5) * (crop_h / height) - 0.5
        cols = (np.arange(width) + 0.5) * (crop_w / width) - 0.5
        out = _sample_bilinear(crop.astype(np.float64), rows, cols).astype(np.float32)
    return ImageTensor(data=out, source=tensor.source)


def eval_pipeline(path: str, stats: NormalizationStats, size: int = INPUT_SIZE) -> ImageTensor:
    """Test-time pipeline: load + resize + normalize, no augmentation."""
    return normalize(load_resize_replicate(path, size=size), stats)


def train_pipeline(
    path: str,
    stats: NormalizationStats,
    cfg: AugmentationConfig,
    rng: np.random.Generator,
    size: int = INPUT_SIZE,
) -> ImageTensor:
    """Training pipeline: load + resize, on-the-fly augmentation, normalize."""
    return normalize(augment(load_resize_replicate(path, size=size), cfg, rng), stats)
