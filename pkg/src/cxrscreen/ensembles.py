"""Score-level ensembling: plain averaging and per-class AUC weighting."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .labels import NUM_CLASSES


def _stack(member_scores: list[np.ndarray]) -> np.ndarray:
    if not member_scores:
        raise ValueError("need at least one member")
    arrays = [np.asarray(m, dtype=np.float64) for m in member_scores]
    shape = arrays[0].shape
    for i, a in enumerate(arrays):
        if a.shape != shape:
            raise ValueError(f"member {i} shape {a.shape} != {shape}")
    return np.stack(arrays)


def average_ensemble(member_scores: list[np.ndarray]) -> np.ndarray:
    """Unweighted mean of the member score matrices."""
    return _stack(member_scores).mean(axis=0)


@dataclass(frozen=True)
class EnsembleWeights:
    """Per-member, per-class convex weights derived from validation AUC."""

    weights: np.ndarray  # (members, classes), columns sum to 1

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 2:
            raise ValueError("weights must be 2-D (members x classes)")
        if (w < 0).any():
            raise ValueError("weights must be non-negative")
        sums = w.sum(axis=0)
        if not np.allclose(sums, 1.0, atol=1e-9):
            raise ValueError("each class column must sum to 1")
        object.__setattr__(self, "weights", w)


def derive_weights(member_aucs: np.ndarray) -> EnsembleWeights:
    """weights[i][c] = auc[i][c] / sum_j auc[j][c].

    Raises when a class column sums to zero (no member has signal there).
    """
    aucs = np.asarray(member_aucs, dtype=np.float64)
    if aucs.ndim != 2:
        raise ValueError("member_aucs must be 2-D (members x classes)")
    if (aucs < 0).any():
        raise ValueError("AUCs must be non-negative")
    column_sums = aucs.sum(axis=0)
    zero = np.nonzero(column_sums == 0)[0]
    if len(zero):
        raise ValueError(f"all-zero AUC column(s) {zero.tolist()}: weights undefined")
    return EnsembleWeights(weights=aucs / column_sums)


def weighted_ensemble(
    member_scores: list[np.ndarray], weights: EnsembleWeights
) -> np.ndarray:
    """Per-class convex combination of member scores."""
    stacked = _stack(member_scores)
    w = weights.weights
    if w.shape[0] != stacked.shape[0]:
        raise ValueError(
            f"{stacked.shape[0]} members but weights for {w.shape[0]}"
        )
    if w.shape[1] != stacked.shape[-1]:
        raise ValueError(
            f"score matrices have {stacked.shape[-1]} classes but weights {w.shape[1]}"
        )
    # (m, n, c) * (m, 1, c) summed over members.
    return np.einsum("mnc,mc->nc", stacked, w)


def uniform_weights(n_members: int, n_classes: int = NUM_CLASSES) -> EnsembleWeights:
    """Equal weights; weighted_ensemble with these equals average_ensemble."""
    if n_members <= 0:
        raise ValueError("need at least one member")
    return EnsembleWeights(weights=np.full((n_members, n_classes), 1.0 / n_members))
