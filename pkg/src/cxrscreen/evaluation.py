"""Per-class ROC curves, AUC, nine-class averaging and report tables.

AUC is computed from the trapezoidal rule over the ROC operating points,
with thresholds at unique scores; ties therefore count half, matching the
probability that a random positive outranks a random negative. A brute-force
pair-count oracle is kept alongside as an independent cross-check.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .labels import CLASS_INDEX, CLASS_NAMES, NUM_CLASSES

# Report column order: the nine classes with sufficient test samples first,
# then the small-sample classes; Fracture has no positive test samples at all.
REPORT_COLUMNS: tuple[str, ...] = (
    "Atelectasis",
    "Cardiomegaly",
    "Edema",
    "Consolidation",
    "Pleural Effusion",
    "Support Devices",
    "Lung Opacity",
    "Enlarged Cardiomediastinum",
    "No Finding",
    "Pneumonia",
    "Pneumothorax",
    "Lung Lesion",
    "Pleural Other",
)

# Default included set for the average: the first nine report columns.
DEFAULT_INCLUDED_CLASSES: tuple[int, ...] = tuple(
    CLASS_INDEX[name] for name in REPORT_COLUMNS[:9]
)


@dataclass
class RocCurve:
    """ROC operating points and trapezoidal AUC for one class."""

    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float | None
    undefined_reason: str | None = None
    n_positive: int = 0
    n_negative: int = 0

    @property
    def defined(self) -> bool:
        return self.auc is not None


@dataclass
class EvaluationReport:
    """Per-class AUCs plus the averaged value over the included set."""

    curves: dict[int, RocCurve]
    included_classes: tuple[int, ...]
    average_auc: float | None
    n_samples: int

    def auc_vector(self) -> list[float | None]:
        return [self.curves[c].auc if c in self.curves else None for c in range(NUM_CLASSES)]

    def class_auc(self, name: str) -> float | None:
        return self.curves[CLASS_INDEX[name]].auc


def roc_points(scores: np.ndarray, labels: np.ndarray) -> RocCurve:
    """ROC curve with thresholds at unique scores and trapezoidal AUC.

    Needs at least one positive and one negative; otherwise returns an
    undefined-AUC curve carrying the reason instead of raising.
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise ValueError(f"scores {scores.shape} and labels {labels.shape} differ")
    n_pos = int(np.sum(labels == 1))
    n_neg = int(np.sum(labels == 0))
    if n_pos == 0 or n_neg == 0:
        reason = "no positive samples" if n_pos == 0 else "no negative samples"
        return RocCurve(
            fpr=np.array([0.0, 1.0]),
            tpr=np.array([0.0, 1.0]),
            thresholds=np.array([np.inf, -np.inf]),
            auc=None,
            undefined_reason=reason,
            n_positive=n_pos,
            n_negative=n_neg,
        )

    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_labels = labels[order]

    # Operating points only where the threshold actually changes.
    distinct = np.nonzero(np.diff(sorted_scores))[0]
    cut = np.concatenate([distinct, [len(sorted_scores) - 1]])
    tp = np.cumsum(sorted_labels == 1)[cut]
    fp = np.cumsum(sorted_labels == 0)[cut]

    tpr = np.concatenate([[0.0], tp / n_pos])
    fpr = np.concatenate([[0.0], fp / n_neg])
    thresholds = np.concatenate([[np.inf], sorted_scores[cut]])
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))
    return RocCurve(
        fpr=fpr,
        tpr=tpr,
        thresholds=thresholds,
        auc=auc,
        n_positive=n_pos,
        n_negative=n_neg,
    )


def auc_pair_oracle(scores: np.ndarray, labels: np.ndarray) -> float | None:
    """Brute-force AUC: fraction of (positive, negative) pairs correctly
    ordered, ties counting 0.5. O(n^2); independent of roc_points."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    if len(pos) == 0 or len(neg) == 0:
        return None
    correct = 0.0
    for p in pos:
        for n in neg:
            if p > n:
                correct += 1.0
            elif p == n:
                correct += 0.5
    return correct / (len(pos) * len(neg))


def average_auc(
    per_class_auc: dict[int, float | None] | list[float | None],
    included: tuple[int, ...] = DEFAULT_INCLUDED_CLASSES,
) -> float:
    """Unweighted mean AUC over the included classes.

    Raises if any included class has an undefined AUC, naming the class.
    """
    if not included:
        raise ValueError("included class set must be non-empty")
    if isinstance(per_class_auc, dict):
        values = {c: per_class_auc.get(c) for c in included}
    else:
        values = {c: per_class_auc[c] for c in included}
    undefined = [CLASS_NAMES[c] for c, v in values.items() if v is None]
    if undefined:
        raise ValueError(f"AUC undefined for included classes: {undefined}")
    return float(np.mean([values[c] for c in included]))


def build_report(
    scores: np.ndarray,
    targets: np.ndarray,
    masks: np.ndarray | None = None,
    included: tuple[int, ...] = DEFAULT_INCLUDED_CLASSES,
) -> EvaluationReport:
    """Per-class ROC/AUC over aligned prediction and truth matrices.

    ``masks`` (0/1, same shape) drops entries from a class's sample, e.g.
    missing labels. Classes with a single truth value get an undefined AUC
    and are reported with their sample counts; the average skips the whole
    included set only if one of its members is undefined (raising instead
    of silently averaging).
    """
    scores = np.asarray(scores, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if scores.shape != targets.shape:
        raise ValueError(f"scores {scores.shape} and targets {targets.shape} differ")
    if scores.ndim != 2 or scores.shape[1] != NUM_CLASSES:
        raise ValueError(f"expected (n, {NUM_CLASSES}) matrices, got {scores.shape}")
    if masks is not None and np.asarray(masks).shape != scores.shape:
        raise ValueError("masks shape must match scores")

    curves: dict[int, RocCurve] = {}
    for c in range(NUM_CLASSES):
        if masks is not None:
            keep = np.asarray(masks)[:, c] > 0
        else:
            keep = np.ones(len(scores), dtype=bool)
        curves[c] = roc_points(scores[keep, c], targets[keep, c])

    try:
        avg = average_auc({c: curves[c].auc for c in curves}, included)
    except ValueError:
        avg = None
    return EvaluationReport(
        curves=curves,
        included_classes=tuple(included),
        average_auc=avg,
        n_samples=len(scores),
    )


@dataclass
class TableRow:
    label: str
    auc_by_class: dict[str, float | None]
    average: float | None
    bold: set[str] = field(default_factory=set)


def render_table(rows: list[TableRow], with_average: bool = True) -> str:
    """Markdown table in the report column order; undefined cells render as em-dash."""
    header = ["Model", *REPORT_COLUMNS]
    if with_average:
        header.append("Avg.")
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    for row in rows:
        cells = [row.label]
        for name in REPORT_COLUMNS:
            value = row.auc_by_class.get(name)
            if value is None:
                cells.append("—")
            elif name in row.bold:
                cells.append(f"**{value:.3f}**")
            else:
                cells.append(f"{value:.3f}")
        if with_average:
            cells.append("—" if row.average is None else f"{row.average:.2f}")
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines)


def report_to_row(label: str, report: EvaluationReport) -> TableRow:
    auc_by_class = {
        name: report.curves[CLASS_INDEX[name]].auc for name in REPORT_COLUMNS
    }
    return TableRow(label=label, auc_by_class=auc_by_class, average=report.average_auc)


def write_roc_points(curve: RocCurve, path) -> None:
    """Persist operating points as a small CSV (threshold, fpr, tpr)."""
    import csv
    from pathlib import Path

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["threshold", "fpr", "tpr"])
        for t, f, tp in zip(curve.thresholds, curve.fpr, curve.tpr):
            writer.writerow([f"{t:.10g}", f"{f:.10g}", f"{tp:.10g}"])


def plot_roc_grid(
    reports_by_model: dict[str, EvaluationReport],
    path,
    class_names: tuple[str, ...] = REPORT_COLUMNS[:9],
) -> None:
    """One ROC panel per disease, all models overlaid, AUC in the legend."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    from pathlib import Path

    n = len(class_names)
    cols = 3
    rows = (n + cols - 1) // cols
    fig, axes = plt.subplots(rows, cols, figsize=(4 * cols, 3.5 * rows))
    axes = np.atleast_2d(axes)
    for i, name in enumerate(class_names):
        ax = axes[i // cols][i % cols]
        for model_label, report in reports_by_model.items():
            curve = report.curves[CLASS_INDEX[name]]
            if not curve.defined:
                continue
            ax.plot(curve.fpr, curve.tpr, label=f"{model_label} ({curve.auc:.3f})")
        ax.plot([0, 1], [0, 1], "k--", linewidth=0.5)
        ax.set_title(name, fontsize=9)
        ax.set_xlabel("FPR", fontsize=8)
        ax.set_ylabel("TPR", fontsize=8)
        ax.legend(fontsize=6)
    for j in range(n, rows * cols):
        axes[j // cols][j % cols].axis("off")
    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120)
    plt.close(fig)
