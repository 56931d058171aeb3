"""Manifest parsing and uncertain-label encoding for chest radiograph screening.

Manifests are CheXpert-style CSV files: a header with an image path column,
optional view metadata, and one column per pathology. Label cells hold
1.0 (present), 0.0 (absent), -1.0 (uncertain) or are left blank (missing).
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence, TextIO

import numpy as np

# Canonical pathology order; every 14-vector in the package uses it.
CLASS_NAMES: tuple[str, ...] = (
    "No Finding",
    "Enlarged Cardiomediastinum",
    "Cardiomegaly",
    "Lung Opacity",
    "Lung Lesion",
    "Edema",
    "Consolidation",
    "Pneumonia",
    "Atelectasis",
    "Pneumothorax",
    "Pleural Effusion",
    "Pleural Other",
    "Fracture",
    "Support Devices",
)
NUM_CLASSES = len(CLASS_NAMES)
CLASS_INDEX = {name: i for i, name in enumerate(CLASS_NAMES)}

PATH_COLUMN = "Path"
VIEW_COLUMN = "Frontal/Lateral"
PROJECTION_COLUMN = "AP/PA"


class ManifestError(ValueError):
    """Raised when a manifest file violates the expected layout."""


class LabelState(enum.Enum):
    POSITIVE = 1
    NEGATIVE = 0
    UNCERTAIN = -1
    MISSING = None


class LabelPolicy(enum.Enum):
    """How uncertain (-1) training labels enter the loss."""

    U_ZEROS = "u-zeros"
    U_ONES = "u-ones"
    U_IGNORE = "u-ignore"


class View(enum.Enum):
    FRONTAL = "Frontal"
    LATERAL = "Lateral"


class Projection(enum.Enum):
    AP = "AP"
    PA = "PA"


@dataclass(frozen=True)
class StudyRecord:
    """One radiograph: its path, view metadata, and raw 14-class labels."""

    image_path: str
    labels: tuple[LabelState, ...]
    view: View = View.FRONTAL
    projection: Projection | None = None

    def __post_init__(self) -> None:
        if not self.image_path:
            raise ValueError("image_path must be non-empty")
        if len(self.labels) != NUM_CLASSES:
            raise ValueError(
                f"expected {NUM_CLASSES} labels, got {len(self.labels)}"
            )


@dataclass(frozen=True)
class TargetVector:
    """Policy-encoded training target: per-class (target, mask) pairs."""

    targets: tuple[float, ...]
    masks: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.targets) != NUM_CLASSES or len(self.masks) != NUM_CLASSES:
            raise ValueError("targets and masks must have length 14")
        for t, m in zip(self.targets, self.masks):
            if t not in (0.0, 1.0) or m not in (0.0, 1.0):
                raise ValueError("targets and masks must be 0.0 or 1.0")
            if m == 0.0 and t != 0.0:
                raise ValueError("masked-out entries must carry target 0")


@dataclass
class ClassDistribution:
    """Per-class counts of each label state over a set of records."""

    n_records: int
    positive: np.ndarray
    negative: np.ndarray
    uncertain: np.ndarray
    missing: np.ndarray

    def count(self, class_name: str, state: LabelState) -> int:
        idx = CLASS_INDEX[class_name]
        arr = {
            LabelState.POSITIVE: self.positive,
            LabelState.NEGATIVE: self.negative,
            LabelState.UNCERTAIN: self.uncertain,
            LabelState.MISSING: self.missing,
        }[state]
        return int(arr[idx])


_CELL_TO_STATE = {
    1.0: LabelState.POSITIVE,
    0.0: LabelState.NEGATIVE,
    -1.0: LabelState.UNCERTAIN,
}


def _parse_label_cell(cell: str, row_number: int, column: str) -> LabelState:
    text = cell.strip()
    if text == "":
        return LabelState.MISSING
    try:
        value = float(text)
    except ValueError:
        raise ManifestError(
            f"row {row_number}: label cell {column!r}={cell!r} is not a number"
        ) from None
    if value not in _CELL_TO_STATE:
        raise ManifestError(
            f"row {row_number}: label cell {column!r}={cell!r} must be 1.0, 0.0, -1.0 or blank"
        )
    return _CELL_TO_STATE[value]


def parse_manifest(
    source: str | Path | TextIO,
    frontal_only: bool = False,
) -> list[StudyRecord]:
    """Parse a CheXpert-style CSV manifest into StudyRecords, preserving row order.

    ``frontal_only`` drops lateral-view rows; by default every row is kept.
    """
    if isinstance(source, (str, Path)):
        with open(source, newline="") as handle:
            return parse_manifest(handle, frontal_only=frontal_only)

    reader = csv.reader(source)
    try:
        header = next(reader)
    except StopIteration:
        raise ManifestError("manifest is empty: no header row") from None
    header = [h.strip() for h in header]

    if PATH_COLUMN not in header:
        raise ManifestError(f"manifest header has no {PATH_COLUMN!r} column")
    missing_classes = [name for name in CLASS_NAMES if name not in header]
    if missing_classes:
        raise ManifestError(
            "manifest header is missing pathology columns "
            f"{missing_classes}; expected the canonical names {list(CLASS_NAMES)}"
        )

    path_idx = header.index(PATH_COLUMN)
    label_idx = [header.index(name) for name in CLASS_NAMES]
    view_idx = header.index(VIEW_COLUMN) if VIEW_COLUMN in header else None
    proj_idx = header.index(PROJECTION_COLUMN) if PROJECTION_COLUMN in header else None

    records: list[StudyRecord] = []
    for row_number, row in enumerate(reader, start=2):
        if len(row) != len(header):
            raise ManifestError(
                f"row {row_number}: expected {len(header)} columns, got {len(row)}"
            )
        image_path = row[path_idx].strip()
        if not image_path:
            raise ManifestError(f"row {row_number}: empty image path")

        view = View.FRONTAL
        if view_idx is not None:
            view_cell = row[view_idx].strip()
            try:
                view = View(view_cell.capitalize())
            except ValueError:
                raise ManifestError(
                    f"row {row_number}: unknown view {view_cell!r}"
                ) from None

        projection = None
        if proj_idx is not None:
            proj_cell = row[proj_idx].strip().upper()
            if proj_cell:
                try:
                    projection = Projection(proj_cell)
                except ValueError:
                    raise ManifestError(
                        f"row {row_number}: unknown projection {proj_cell!r}"
                    ) from None

        labels = tuple(
            _parse_label_cell(row[idx], row_number, name)
            for idx, name in zip(label_idx, CLASS_NAMES)
        )
        if frontal_only and view is not View.FRONTAL:
            continue
        records.append(
            StudyRecord(image_path=image_path, labels=labels, view=view, projection=projection)
        )
    return records


_STATE_TO_CELL = {
    LabelState.POSITIVE: "1.0",
    LabelState.NEGATIVE: "0.0",
    LabelState.UNCERTAIN: "-1.0",
    LabelState.MISSING: "",
}


def serialize_manifest(records: Iterable[StudyRecord], destination: str | Path | TextIO) -> None:
    """Write records back to a CheXpert-style CSV; round-trips label states exactly."""
    if isinstance(destination, (str, Path)):
        with open(destination, "w", newline="") as handle:
            serialize_manifest(records, handle)
            return
    writer = csv.writer(destination)
    writer.writerow([PATH_COLUMN, VIEW_COLUMN, PROJECTION_COLUMN, *CLASS_NAMES])
    for record in records:
        writer.writerow(
            [
                record.image_path,
                record.view.value,
                record.projection.value if record.projection else "",
                *(_STATE_TO_CELL[state] for state in record.labels),
            ]
        )


def apply_policy(
    state: LabelState,
    policy: LabelPolicy,
    missing_as_negative: bool = False,
) -> tuple[float, float]:
    """Map one label state to a (target, mask) pair under the given policy.

    Certain labels are unaffected by the policy. Uncertain labels become
    0 (U-Zeros), 1 (U-Ones), or are masked out of the loss (U-Ignore).
    Missing cells are masked out unless ``missing_as_negative`` is set.
    """
    if state is LabelState.POSITIVE:
        return (1.0, 1.0)
    if state is LabelState.NEGATIVE:
        return (0.0, 1.0)
    if state is LabelState.UNCERTAIN:
        if policy is LabelPolicy.U_ZEROS:
            return (0.0, 1.0)
        if policy is LabelPolicy.U_ONES:
            return (1.0, 1.0)
        return (0.0, 0.0)
    # Missing
    if missing_as_negative:
        return (0.0, 1.0)
    return (0.0, 0.0)


def encode_targets(
    record: StudyRecord,
    policy: LabelPolicy,
    missing_as_negative: bool = False,
) -> TargetVector:
    """Encode one record's 14 labels elementwise under the policy."""
    pairs = [apply_policy(s, policy, missing_as_negative) for s in record.labels]
    return TargetVector(
        targets=tuple(p[0] for p in pairs),
        masks=tuple(p[1] for p in pairs),
    )


def encode_dataset(
    records: Sequence[StudyRecord],
    policy: LabelPolicy,
    missing_as_negative: bool = False,
) -> tuple[np.ndarray, np.ndarray]:
    """Encode many records into (targets, masks) float32 arrays of shape (n, 14)."""
    targets = np.zeros((len(records), NUM_CLASSES), dtype=np.float32)
    masks = np.zeros((len(records), NUM_CLASSES), dtype=np.float32)
    for i, record in enumerate(records):
        vector = encode_targets(record, policy, missing_as_negative)
        targets[i] = vector.targets
        masks[i] = vector.masks
    return targets, masks


def class_distribution(records: Sequence[StudyRecord]) -> ClassDistribution:
    """Count label states per class; the four counts always sum to len(records)."""
    counts = {
        state: np.zeros(NUM_CLASSES, dtype=np.int64)
        for state in LabelState
    }
    for record in records:
        for idx, state in enumerate(record.labels):
            counts[state][idx] += 1
    return ClassDistribution(
        n_records=len(records),
        positive=counts[LabelState.POSITIVE],
        negative=counts[LabelState.NEGATIVE],
        uncertain=counts[LabelState.UNCERTAIN],
        missing=counts[LabelState.MISSING],
    )


def distribution_table(dist: ClassDistribution) -> str:
    """Render a distribution as text: one row per class, four counts."""
    width = max(len(name) for name in CLASS_NAMES)
    lines = [
        f"{'Class':<{width}}  {'Positive':>9} {'Negative':>9} {'Uncertain':>9} {'Missing':>9}"
    ]
    for idx, name in enumerate(CLASS_NAMES):
        lines.append(
            f"{name:<{width}}  {dist.positive[idx]:>9d} {dist.negative[idx]:>9d}"
            f" {dist.uncertain[idx]:>9d} {dist.missing[idx]:>9d}"
        )
    lines.append(f"{'records':<{width}}  {dist.n_records:>9d}")
    return "\n".join(lines)
