"""
Manifests, label states, and uncertainty policies
=================================================

Parses a small hand-written manifest and shows how the four label states
(positive, negative, uncertain, missing) turn into training targets and
masks under the three uncertainty policies.
"""

import csv
import tempfile
from pathlib import Path

from cxrscreen import (
    CLASS_INDEX,
    CLASS_NAMES,
    LabelPolicy,
    class_distribution,
    distribution_table,
    encode_dataset,
    encode_targets,
    parse_manifest,
)

root = Path(tempfile.mkdtemp(prefix="cxrscreen-demo01-"))

# Three studies: one clearly positive for Cardiomegaly, one negative, one
# uncertain. Pneumonia stays blank everywhere (never mentioned).
rows = [
    ("p0/s1/view1.png", {"Cardiomegaly": "1.0", "Edema": "0.0"}),
    ("p1/s1/view1.png", {"Cardiomegaly": "0.0", "Edema": "1.0"}),
    ("p2/s1/view1.png", {"Cardiomegaly": "-1.0", "Edema": "-1.0"}),
]
manifest = root / "train.csv"
with open(manifest, "w", newline="") as handle:
    writer = csv.writer(handle)
    writer.writerow(["Path", "Frontal/Lateral", "AP/PA", *CLASS_NAMES])
    for path, labels in rows:
        full = {name: labels.get(name, "") for name in CLASS_NAMES}
        writer.writerow([path, "Frontal", "AP", *(full[name] for name in CLASS_NAMES)])

records = parse_manifest(manifest)
print(f"parsed {len(records)} records")
print("study 2 label states:", {CLASS_NAMES[i]: s.name for i, s in enumerate(records[2].labels) if s.name != "MISSING"})

# The uncertain study is where the policies disagree.
c = CLASS_INDEX["Cardiomegaly"]
for policy in LabelPolicy:
    target = encode_targets(records[2], policy)
    print(f"{policy.value:>8}: Cardiomegaly target={target.targets[c]:.0f} mask={target.masks[c]:.0f}")

# Whole-dataset encoding: (targets, masks) matrices ready for the loss.
targets, masks = encode_dataset(records, LabelPolicy.U_ZEROS)
print("dataset encoding shapes:", targets.shape, masks.shape)
print(f"u-zeros marks {int(masks.sum())} of {masks.size} cells as supervised")

# Per-class counting, the same table the ingest-stats CLI verb prints.
print()
print(distribution_table(class_distribution(records)))
