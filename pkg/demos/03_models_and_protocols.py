"""
Backbone registry and adaptation protocols
==========================================

Every backbone pairs with a fresh 14-way sigmoid head. The protocol decides
what the optimizer may touch: R trains everything from random init, O trains
only the head on frozen features, F fine-tunes everything after warm-starting
the head from the matching O run.
"""

import tempfile
from pathlib import Path

import torch

from cxrscreen import (
    REGISTRY,
    AdaptationProtocol,
    LabelPolicy,
    build_model,
    count_parameters,
    load_checkpoint,
    parameter_hash,
    restore_model,
    save_checkpoint,
    trainable_parameters,
)

print("registered backbones:")
for name, entry in REGISTRY.items():
    print(f"  {name:<12} feature_dim={entry.feature_dim:<5} source={entry.pretrained_source}")

# tiny8 and small32 are seeded-random surrogates for offline work; the seven
# full-size entries pull torchvision weights when protocol O or F asks.
def n_trainable(m):
    return sum(p.numel() for p in trainable_parameters(m))


model = build_model("tiny8", AdaptationProtocol.RANDOM_INIT, seed=0)
print()
print("tiny8 R:", count_parameters(model), "parameters,", n_trainable(model), "trainable")

frozen = build_model("tiny8", AdaptationProtocol.OFF_THE_SHELF, seed=0)
print("tiny8 O:", count_parameters(frozen), "parameters,", n_trainable(frozen), "trainable (head only)")
print("frozen backbone in eval mode:", not frozen.backbone.training)

# Same arch + seed -> identical weights, so runs are replayable bit for bit.
again = build_model("tiny8", AdaptationProtocol.RANDOM_INIT, seed=0)
other = build_model("tiny8", AdaptationProtocol.RANDOM_INIT, seed=1)
print("same seed, same hash:", parameter_hash(model) == parameter_hash(again))
print("different seed differs:", parameter_hash(model) != parameter_hash(other))

# Forward contract: (batch, 3, H, W) -> (batch, 14) logits.
model.eval()
with torch.no_grad():
    logits = model(torch.zeros(2, 3, 64, 64))
print("logits shape:", tuple(logits.shape))

# Checkpoints carry the config fingerprint so resume can refuse mismatches.
root = Path(tempfile.mkdtemp(prefix="cxrscreen-demo03-"))
ckpt = root / "tiny8.pt"
save_checkpoint(
    model,
    ckpt,
    protocol=AdaptationProtocol.RANDOM_INIT,
    policy=LabelPolicy.U_ZEROS,
    epoch=0,
    config_fingerprint="demo",
)
restored = restore_model(load_checkpoint(ckpt))
print("checkpoint round-trip preserves weights:", parameter_hash(restored) == parameter_hash(model))
