"""
Score ensembling
================

Members contribute per-study sigmoid scores; the ensemble combines them
per class. Weights come from validation AUCs normalized within each class,
so uniform AUCs reduce weighting to plain averaging.
"""

import numpy as np

from cxrscreen import (
    average_ensemble,
    derive_weights,
    uniform_weights,
    weighted_ensemble,
)

rng = np.random.default_rng(6)
members = [rng.uniform(size=(5, 14)) for _ in range(3)]

averaged = average_ensemble(members)
uniform = weighted_ensemble(members, uniform_weights(3, 14))
print("uniform weights reproduce the average:", float(np.abs(uniform - averaged).max()))

# Worked two-member, one-class example: scores 0.9 and 0.2 with validation
# AUCs 0.8 and 0.6 combine to (0.8*0.9 + 0.6*0.2) / 1.4 = 0.6.
weights = derive_weights(np.array([[0.8], [0.6]]))
print("derived weights:", weights.weights.ravel(), "(sum 1 per class)")
combined = weighted_ensemble([np.array([[0.9]]), np.array([[0.2]])], weights)
print(f"combined score: {combined[0, 0]:.12f}")

# Per-class normalization means a member strong on one disease can dominate
# there while staying a minority voice elsewhere.
aucs = np.array(
    [
        [0.95, 0.60],  # member 0: strong on class 0
        [0.60, 0.95],  # member 1: strong on class 1
    ]
)
w = derive_weights(aucs)
print("per-class weights:\n", np.round(w.weights, 3))

# Undefined columns are the caller's problem by design: a class where every
# member has AUC 0 raises instead of silently inventing weights.
try:
    derive_weights(np.array([[0.0], [0.0]]))
except ValueError as err:
    print("all-zero AUC column rejected:", err)
