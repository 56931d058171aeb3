"""
Black-box saliency by randomized masking
========================================

Random occlusion masks weight each pixel by the expected class score when it
stays visible. This needs only forward passes, so it treats the model as a
black box. On a linear scorer the expectation has a closed form; the
exhaustive and Monte-Carlo paths both recover it.
"""

import tempfile
from pathlib import Path

import numpy as np

from _synthetic import render_study_image, save_gray
from cxrscreen import (
    AdaptationProtocol,
    MaskGridSpec,
    build_model,
    class_score_fn,
    exhaustive_saliency,
    generate_masks,
    load_annotation,
    overlap_score,
    rise_saliency,
    saliency_from_masks,
    save_overlay,
)

# Linear toy: f(x) = sum(W * x). E[f | pixel visible] is the pixel's own
# contribution plus p times everyone else's.
weights = np.array([[0.8, -0.2], [0.1, 0.5]])
image = np.array([[1.0, 0.5], [0.25, 1.0]])
scorer = lambda batch: batch.reshape(len(batch), -1) @ weights.ravel()

p = 0.5
contrib = weights * image
analytic = contrib + p * (contrib.sum() - contrib)
spec = MaskGridSpec(grid_h=2, grid_w=2, probability=p, n_masks=16)
exact = exhaustive_saliency(scorer, image, spec)
mc = rise_saliency(scorer, image, MaskGridSpec(2, 2, p, n_masks=20_000, seed=7))
print("analytic:\n", analytic)
print("exhaustive matches:", float(np.abs(exact - analytic).max()))
print("Monte Carlo close:  ", float(np.abs(mc - analytic).max()))

# On a real model: score one class of an untrained small backbone. The model
# wants (N, 3, H, W), so replicate the grayscale study to 3 channels; masks
# broadcast over channels.
root = Path(tempfile.mkdtemp(prefix="cxrscreen-demo07-"))
study = render_study_image(np.random.default_rng(3), (1, 1, 0), size=64)
study_3ch = np.repeat(study[None], 3, axis=0)
model = build_model("small32", AdaptationProtocol.RANDOM_INIT, seed=0)
score_fn = class_score_fn(model, class_index=2)  # Cardiomegaly score

spec = MaskGridSpec(grid_h=7, grid_w=7, probability=0.5, n_masks=300, seed=0)
saliency = rise_saliency(score_fn, study_3ch, spec, chunk_size=64)
print("\nmodel saliency map:", saliency.shape, f"range [{saliency.min():.3f}, {saliency.max():.3f}]")

# The mask batch is reusable: the estimator is a dot product against scores.
batch = generate_masks(spec, *study.shape, rng=np.random.default_rng(0))
same = saliency_from_masks(score_fn, study_3ch, batch)
print("explicit mask batch agrees:", bool(np.allclose(same, saliency)))

# Overlap against a hand-drawn annotation: pointing game plus mass fraction.
region = np.zeros((64, 64))
region[8:24, 8:24] = 1.0
save_gray(root / "ann/study1/Cardiomegaly.png", region)
annotation = load_annotation(root / "ann", "study1", "Cardiomegaly", size=64)
overlap = overlap_score(saliency, annotation.mask)
print(f"pointing hit: {overlap.pointing_hit}, mass fraction: {overlap.mass_fraction:.3f}")

out = save_overlay(study, saliency, root / "overlay.png", region=annotation.mask, title="Cardiomegaly")
print("overlay written to", out)
