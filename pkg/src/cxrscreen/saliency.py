"""Black-box saliency by randomized input masking.

Masks come from coarse Bernoulli grids, bilinearly upsampled with a random
sub-cell shift and cropped to image size, so each mask is smooth in [0, 1].
The saliency map is the masked-score-weighted average of the masks,
normalized by N*p. When the grid matches the image size there is nothing to
upsample or shift and the masks stay exactly binary, which makes small
closed-form oracles possible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import product
from pathlib import Path
from typing import Callable

import numpy as np

from .preprocess import _sample_bilinear


@dataclass(frozen=True)
class MaskGridSpec:
    """Mask sampling parameters: grid shape, keep probability, count."""

    grid_h: int = 7
    grid_w: int = 7
    probability: float = 0.5
    n_masks: int = 4000
    seed: int = 0

    def __post_init__(self) -> None:
        if self.grid_h < 1 or self.grid_w < 1:
            raise ValueError("grid dimensions must be >= 1")
        if not 0.0 < self.probability < 1.0:
            raise ValueError("probability must lie strictly inside (0, 1)")
        if self.n_masks < 1:
            raise ValueError("need at least one mask")


@dataclass
class MaskBatch:
    """Realized masks at image resolution, values in [0, 1]."""

    masks: np.ndarray  # (n, H, W)
    probability: float
    grid_shape: tuple[int, int]

    def __post_init__(self) -> None:
        self.masks = np.asarray(self.masks, dtype=np.float64)
        if self.masks.ndim != 3:
            raise ValueError("masks must be (n, H, W)")
        if self.masks.size and (self.masks.min() < 0.0 or self.masks.max() > 1.0):
            raise ValueError("mask values must lie in [0, 1]")

    def __len__(self) -> int:
        return len(self.masks)

    def mean_coverage(self) -> float:
        return float(self.masks.mean())


def _cell_sizes(spec: MaskGridSpec, image_h: int, image_w: int) -> tuple[int, int]:
    return math.ceil(image_h / spec.grid_h), math.ceil(image_w / spec.grid_w)


def _upsample_grids(
    grids: np.ndarray, cell_h: int, cell_w: int, grid_h: int, grid_w: int
) -> np.ndarray:
    """Bilinear upsample by exactly (cell_h, cell_w) per grid cell.

    Output pixel y samples grid coordinate (y + 0.5)/cell_h - 0.5, so a
    cell size of 1 reproduces the grid verbatim.
    """
    up_h = (grid_h + 1) * cell_h
    up_w = (grid_w + 1) * cell_w
    rows = (np.arange(up_h) + 0.5) / cell_h - 0.5
    cols = (np.arange(up_w) + 0.5) / cell_w - 0.5
    return _sample_bilinear(grids.astype(np.float64), rows, cols)


def generate_masks(
    spec: MaskGridSpec,
    image_h: int,
    image_w: int,
    rng: np.random.Generator | None = None,
) -> MaskBatch:
    """Sample spec.n_masks smooth masks at (image_h, image_w)."""
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    cell_h, cell_w = _cell_sizes(spec, image_h, image_w)
    grids = rng.random((spec.n_masks, spec.grid_h, spec.grid_w)) < spec.probability
    oy = rng.integers(0, cell_h, size=spec.n_masks)
    ox = rng.integers(0, cell_w, size=spec.n_masks)
    up = _upsample_grids(grids, cell_h, cell_w, spec.grid_h, spec.grid_w)
    masks = np.empty((spec.n_masks, image_h, image_w), dtype=np.float64)
    for i in range(spec.n_masks):
        masks[i] = up[i, oy[i] : oy[i] + image_h, ox[i] : ox[i] + image_w]
    return MaskBatch(masks=masks, probability=spec.probability, grid_shape=(spec.grid_h, spec.grid_w))


ScoreFn = Callable[[np.ndarray], np.ndarray]
"""Maps a batch of masked images (b, ...) to one scalar score per item."""


def rise_saliency(
    score_fn: ScoreFn,
    image: np.ndarray,
    spec: MaskGridSpec,
    chunk_size: int = 64,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Monte Carlo saliency: S = (1/(N*p)) * sum_i f(x * M_i) * M_i.

    ``image`` is (H, W) or (C, H, W); masks broadcast over channels. Masks
    are realized in chunks to bound memory, with all randomness drawn up
    front so the chunk size never changes the result.
    """
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape[-2], image.shape[-1]
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    cell_h, cell_w = _cell_sizes(spec, h, w)
    grids = rng.random((spec.n_masks, spec.grid_h, spec.grid_w)) < spec.probability
    oy = rng.integers(0, cell_h, size=spec.n_masks)
    ox = rng.integers(0, cell_w, size=spec.n_masks)

    acc = np.zeros((h, w), dtype=np.float64)
    for start in range(0, spec.n_masks, chunk_size):
        stop = min(start + chunk_size, spec.n_masks)
        up = _upsample_grids(grids[start:stop], cell_h, cell_w, spec.grid_h, spec.grid_w)
        masks = np.empty((stop - start, h, w), dtype=np.float64)
        for i in range(stop - start):
            masks[i] = up[i, oy[start + i] : oy[start + i] + h, ox[start + i] : ox[start + i] + w]
        if image.ndim == 2:
            batch = image[None] * masks
        else:
            batch = image[None] * masks[:, None]
        scores = np.asarray(score_fn(batch), dtype=np.float64).ravel()
        if scores.shape[0] != stop - start:
            raise ValueError("score_fn must return one score per masked image")
        acc += np.tensordot(scores, masks, axes=1)
    return acc / (spec.n_masks * spec.probability)


def saliency_from_masks(score_fn: ScoreFn, image: np.ndarray, batch: MaskBatch) -> np.ndarray:
    """Same estimator over an already-realized mask batch."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        masked = image[None] * batch.masks
    else:
        masked = image[None] * batch.masks[:, None]
    scores = np.asarray(score_fn(masked), dtype=np.float64).ravel()
    acc = np.tensordot(scores, batch.masks, axes=1)
    return acc / (len(batch) * batch.probability)


def exhaustive_saliency(
    score_fn: ScoreFn, image: np.ndarray, spec: MaskGridSpec
) -> np.ndarray:
    """Exact expectation E[f(x*M) * M] / p by enumerating every grid pattern.

    Only feasible for tiny grids (2^(grid_h*grid_w) patterns); masks are
    realized with zero shift. Ground truth for the Monte Carlo estimator.
    """
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape[-2], image.shape[-1]
    m = spec.grid_h * spec.grid_w
    if m > 16:
        raise ValueError(f"{m}-cell grid is too large to enumerate")
    cell_h, cell_w = _cell_sizes(spec, h, w)
    p = spec.probability
    acc = np.zeros((h, w), dtype=np.float64)
    for bits in product((0.0, 1.0), repeat=m):
        grid = np.array(bits, dtype=np.float64).reshape(1, spec.grid_h, spec.grid_w)
        k = sum(bits)
        weight = (p**k) * ((1.0 - p) ** (m - k))
        mask = _upsample_grids(grid, cell_h, cell_w, spec.grid_h, spec.grid_w)[0, :h, :w]
        if image.ndim == 2:
            masked = image[None] * mask[None]
        else:
            masked = (image * mask)[None]
        score = float(np.asarray(score_fn(masked)).ravel()[0])
        acc += weight * score * mask
    return acc / p


def class_score_fn(model, class_index: int, device: str = "cpu") -> ScoreFn:
    """Adapt a screening model into a per-class score function on numpy batches."""
    import torch

    dev = torch.device(device)
    model = model.to(dev)
    model.eval()

    def run(batch: np.ndarray) -> np.ndarray:
        with torch.no_grad():
            tensor = torch.from_numpy(np.ascontiguousarray(batch, dtype=np.float32)).to(dev)
            scores = model.predict_scores(tensor)
        return scores[:, class_index].cpu().numpy()

    return run


@dataclass
class AnnotationRegion:
    """Binary pathology region tied to one study and one class."""

    study_id: str
    class_name: str
    mask: np.ndarray  # (H, W) bool

    def __post_init__(self) -> None:
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.mask.ndim != 2:
            raise ValueError("annotation mask must be 2-D")


def annotation_path(root, study_id: str, class_name: str) -> Path:
    """Annotation files live at <root>/<study_id>/<class name with underscores>.png."""
    return Path(root) / study_id / (class_name.replace(" ", "_") + ".png")


def _nearest_resize(mask: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    in_h, in_w = mask.shape
    rows = np.minimum(((np.arange(out_h) + 0.5) * in_h / out_h).astype(int), in_h - 1)
    cols = np.minimum(((np.arange(out_w) + 0.5) * in_w / out_w).astype(int), in_w - 1)
    return mask[rows[:, None], cols[None, :]]


def load_annotation(root, study_id: str, class_name: str, size: int) -> AnnotationRegion:
    """Load a region mask (any nonzero pixel counts) and resize to the model input."""
    from PIL import Image

    path = annotation_path(root, study_id, class_name)
    if not path.exists():
        raise FileNotFoundError(f"no annotation for ({study_id}, {class_name}) at {path}")
    array = np.asarray(Image.open(path).convert("L")) > 0
    if array.shape != (size, size):
        array = _nearest_resize(array, size, size)
    return AnnotationRegion(study_id=study_id, class_name=class_name, mask=array)


@dataclass(frozen=True)
class OverlapScores:
    """Agreement between a saliency map and an annotated region."""

    pointing_hit: float  # 1.0 if the saliency argmax falls inside the region
    mass_fraction: float  # share of total saliency mass inside the region


def overlap_score(saliency: np.ndarray, region: np.ndarray) -> OverlapScores:
    """Score localization of a saliency map against a binary region.

    Both metrics are invariant to positive rescaling of the map. Requires a
    strictly positive total mass, which sigmoid-derived maps always have.
    """
    saliency = np.asarray(saliency, dtype=np.float64)
    region = np.asarray(region, dtype=bool)
    if saliency.shape != region.shape:
        raise ValueError(f"saliency {saliency.shape} and region {region.shape} differ")
    total = float(saliency.sum())
    if total <= 0.0:
        raise ValueError("saliency mass must be positive to score overlap")
    peak = np.unravel_index(int(np.argmax(saliency)), saliency.shape)
    return OverlapScores(
        pointing_hit=1.0 if region[peak] else 0.0,
        mass_fraction=float(saliency[region].sum()) / total,
    )


def save_overlay(
    image: np.ndarray,
    saliency: np.ndarray,
    path,
    region: np.ndarray | None = None,
    title: str | None = None,
) -> Path:
    """Render the saliency heatmap over the radiograph, optionally with the
    annotated region outlined."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 3:
        image = image.mean(axis=0)
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.imshow(image, cmap="gray")
    ax.imshow(saliency, cmap="jet", alpha=0.4)
    if region is not None:
        ax.contour(np.asarray(region, dtype=float), levels=[0.5], colors="white", linewidths=1.0)
    if title:
        ax.set_title(title, fontsize=9)
    ax.axis("off")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return path
