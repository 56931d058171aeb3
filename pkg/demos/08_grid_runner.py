"""
The experiment grid, resumable
==============================

A sweep is architectures x protocols x policies. Each cell gets a config
fingerprint; the results store is an append-only log keyed by fingerprint,
so a rerun executes only what is not done yet. Reports render from the store.
"""

import tempfile
from pathlib import Path

from _synthetic import build_task
from cxrscreen import (
    AdaptationProtocol,
    ExperimentConfig,
    Hyperparameters,
    LabelPolicy,
    ResultsStore,
    RunStatus,
    best_models,
    emit_reports,
    enumerate_grid,
    parse_manifest,
    run_all,
)

root = Path(tempfile.mkdtemp(prefix="cxrscreen-demo08-"))
train_manifest, valid_manifest = build_task(root / "data", 32, 12, size=16, seed=8)
train = parse_manifest(train_manifest)
valid = parse_manifest(valid_manifest)

base = ExperimentConfig(
    arch="tiny8",
    protocol=AdaptationProtocol.RANDOM_INIT,
    policy=LabelPolicy.U_ZEROS,
    hyper=Hyperparameters(epochs=1, batch_size=8, learning_rate=1e-2),
    data_root=str(root / "data"),
    train_manifest=str(train_manifest),
    eval_manifest=str(valid_manifest),
    output_dir=str(root / "runs"),
    seed=0,
    image_size=16,
)

# One arch, all three protocols, one policy. F is ordered after its O
# dependency automatically.
configs = enumerate_grid(
    base,
    archs=("tiny8",),
    protocols=(AdaptationProtocol.RANDOM_INIT, AdaptationProtocol.OFF_THE_SHELF, AdaptationProtocol.FINE_TUNE),
    policies=(LabelPolicy.U_ZEROS,),
)
print("cells:", [(c.protocol.value, c.fingerprint()[:8]) for c in configs])

store = ResultsStore(root / "results.jsonl")
run_all(configs, train, valid, store)
for record in store.latest().values():
    avg = "undefined" if record.average_auc is None else f"{record.average_auc:.3f}"
    print(f"  {record.protocol} {record.policy}: {record.status.value}, avg AUC {avg}, {record.wall_minutes:.2f} min")

# Rerun: every fingerprint is done, so nothing executes and the log keeps
# its size.
size_before = (root / "results.jsonl").stat().st_size
run_all(configs, train, valid, store)
print("rerun appended nothing:", (root / "results.jsonl").stat().st_size == size_before)

# Per-architecture winner (highest average AUC, ties to fewer parameters).
done = [r for r in store.latest().values() if r.status is RunStatus.DONE]
for arch, record in best_models(done).items():
    print(f"best {arch}: protocol {record.protocol}, fingerprint {record.fingerprint[:8]}")

artifacts = emit_reports(store, root, valid)
print("\nreport artifacts:")
for name, path in sorted(artifacts.items()):
    print(f"  {name}: {path.relative_to(root)}")
