"""Acceptance checks: one test per shipping criterion, each with a runtime
budget and a printed [PASS]/[FAIL] line (run with ``-s`` to see them)."""

from __future__ import annotations

import csv
import math
import os
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pytest
import torch
import torch.nn.functional as F

from conftest import ACTIVE_CLASSES, build_separable_task
from cxrscreen import (
    CLASS_INDEX,
    CLASS_NAMES,
    DEFAULT_INCLUDED_CLASSES,
    IMAGENET_MEAN,
    IMAGENET_STD,
    INPUT_SIZE,
    AdaptationProtocol,
    ArchitectureId,
    ExperimentConfig,
    FitResult,
    Hyperparameters,
    LabelPolicy,
    LabelState,
    MaskGridSpec,
    PredictionMatrix,
    ResultsStore,
    RocCurve,
    RunRecord,
    RunStatus,
    auc_pair_oracle,
    average_auc,
    average_ensemble,
    build_model,
    build_report,
    derive_weights,
    encode_dataset,
    enumerate_grid,
    eval_truth,
    exhaustive_saliency,
    fit,
    load_checkpoint,
    masked_bce,
    masked_bce_with_logits,
    parameter_hash,
    parse_manifest,
    restore_model,
    rise_saliency,
    roc_points,
    run_all,
    steps_per_epoch,
    uniform_weights,
    weighted_ensemble,
)


@contextmanager
def criterion(number: int, text: str, budget_seconds: float):
    start = time.perf_counter()
    ok = False
    try:
        yield
        elapsed = time.perf_counter() - start
        if elapsed >= budget_seconds:
            raise AssertionError(
                f"criterion {number} took {elapsed:.2f}s, budget {budget_seconds:g}s"
            )
        ok = True
    finally:
        elapsed = time.perf_counter() - start
        verdict = "PASS" if ok else "FAIL"
        print(f"[{verdict}] criterion {number}: {text} ({elapsed:.2f}s)", flush=True)


# Published per-class AUCs for the three strongest fine-tuned backbones,
# ordered like DEFAULT_INCLUDED_CLASSES (Atelectasis, Cardiomegaly, Edema,
# Consolidation, Pleural Effusion, Support Devices, Lung Opacity, Enlarged
# Cardiomediastinum, No Finding). Each row's average rounds to 0.87.
PUBLISHED_NINE_CLASS_ROWS = {
    "xception_f": [0.833, 0.816, 0.905, 0.918, 0.933, 0.951, 0.909, 0.681, 0.868],
    "densenet121_f": [0.807, 0.800, 0.917, 0.924, 0.924, 0.934, 0.916, 0.714, 0.896],
    "resnet18_f": [0.819, 0.820, 0.892, 0.933, 0.939, 0.947, 0.923, 0.655, 0.876],
}

FULL_SCALE_TRAIN_IMAGES = 223_414
FULL_SCALE_GPU_HOURS = 400


def _full_scale_base(tmp_path: Path) -> ExperimentConfig:
    return ExperimentConfig(
        arch="resnet18",
        protocol=AdaptationProtocol.RANDOM_INIT,
        policy=LabelPolicy.U_ZEROS,
        hyper=Hyperparameters(),
        train_manifest="CheXpert-v1.0/train.csv",
        eval_manifest="CheXpert-v1.0/valid.csv",
        output_dir=str(tmp_path / "runs"),
        seed=0,
        image_size=INPUT_SIZE,
    )


def test_criterion_1_full_scale_statement_and_grid_readiness(tmp_path, capsys):
    with criterion(1, "full-scale grid stated non-reproducible; harness would run it unchanged", 10.0):
        with capsys.disabled():
            print(
                "\nNOTE: the published AUC table (for example fine-tuned Xception, "
                f"pleural effusion 0.933) was produced from {FULL_SCALE_TRAIN_IMAGES:,} "
                f"training radiographs and roughly {FULL_SCALE_GPU_HOURS} GPU-hours. "
                "That run is not reproducible at desk scale, so the criteria below are "
                "property-based substitutes. The harness itself needs no changes to run "
                "the real sweep: point the manifests at the full dataset and submit the "
                "default 63-cell grid.",
                flush=True,
            )

        # The defaults the real sweep would use are in place as shipped.
        hyper = Hyperparameters()
        assert (hyper.epochs, hyper.batch_size) == (6, 16)
        assert hyper.learning_rate == pytest.approx(1e-4)
        assert (hyper.beta1, hyper.beta2) == (0.9, 0.999)
        assert hyper.weight_decay == pytest.approx(1e-5)
        assert INPUT_SIZE == 320
        assert IMAGENET_MEAN == (0.485, 0.456, 0.406)
        assert IMAGENET_STD == (0.229, 0.224, 0.225)
        assert steps_per_epoch(FULL_SCALE_TRAIN_IMAGES, hyper.batch_size) == 13_963

        configs = enumerate_grid(_full_scale_base(tmp_path))
        assert len(configs) == 63
        assert {c.arch for c in configs} == {a.value for a in ArchitectureId}
        assert all(c.hyper == hyper and c.image_size == 320 for c in configs)


def test_criterion_2_published_rows_average(capsys):
    with criterion(2, "published nine-class AUC rows each average to 0.87 within 0.005", 1.0):
        for row in PUBLISHED_NINE_CLASS_ROWS.values():
            avg = average_auc(dict(zip(DEFAULT_INCLUDED_CLASSES, row)))
            assert abs(avg - 0.87) <= 0.005
            assert round(avg, 2) == 0.87


def test_criterion_3_roc_against_pair_oracle(capsys):
    with criterion(3, "ROC AUC matches the pair-count oracle and monotone rescoring", 10.0):
        rng = np.random.default_rng(20260819)
        checked = 0
        kept: list[tuple[np.ndarray, np.ndarray]] = []
        while checked < 220:
            n = int(rng.integers(2, 51))
            labels = rng.integers(0, 2, size=n)
            if labels.min() == labels.max():
                continue
            scores = rng.uniform(size=n)
            if checked % 2 == 0:
                scores = np.round(scores, 1)  # quantized, guaranteed ties
            curve = roc_points(scores, labels)
            oracle = auc_pair_oracle(scores, labels)
            assert abs(curve.auc - oracle) < 1e-9
            checked += 1
            if len(kept) < 60:
                kept.append((scores, labels))
        assert checked >= 200

        for transform in (lambda s: 2.0 * s + 1.0, np.exp, lambda s: s**3 + s):
            for scores, labels in kept:
                base = roc_points(scores, labels).auc
                moved = roc_points(transform(scores), labels).auc
                assert abs(moved - base) < 1e-9


def test_criterion_4_masked_loss_contract(capsys):
    with criterion(4, "masked loss: gradients, mask zeroing, BCE reduction, reference value", 10.0):
        g = torch.Generator().manual_seed(4)
        logits = torch.randn(4, 14, generator=g, dtype=torch.float64, requires_grad=True)
        targets = torch.randint(0, 2, (4, 14), generator=g).to(torch.float64)
        masks = (torch.rand(4, 14, generator=g) > 0.3).to(torch.float64)
        assert masks.min() == 0.0 and masks.max() == 1.0  # both kinds present

        loss = masked_bce_with_logits(logits, targets, masks)
        (grad,) = torch.autograd.grad(loss, logits)

        h = 1e-6
        with torch.no_grad():
            fd = torch.zeros_like(logits)
            for i in range(logits.shape[0]):
                for j in range(logits.shape[1]):
                    bumped = logits.detach().clone()
                    bumped[i, j] += h
                    up = masked_bce_with_logits(bumped, targets, masks)
                    bumped[i, j] -= 2 * h
                    down = masked_bce_with_logits(bumped, targets, masks)
                    fd[i, j] = (up - down) / (2 * h)
        assert torch.allclose(grad, fd, rtol=1e-4, atol=1e-8)
        assert torch.all(grad[masks == 0.0] == 0.0)

        ones = torch.ones_like(masks)
        plain = F.binary_cross_entropy_with_logits(logits.detach(), targets)
        assert abs(masked_bce_with_logits(logits.detach(), targets, ones) - plain) < 1e-9

        half = torch.tensor([[0.5]], dtype=torch.float64)
        one = torch.tensor([[1.0]], dtype=torch.float64)
        assert abs(masked_bce(half, one, one).item() - 0.693147) <= 1e-6
        zero_logit = torch.tensor([[0.0]], dtype=torch.float64)
        assert abs(masked_bce_with_logits(zero_logit, one, one).item() - 0.693147) <= 1e-6


# Hand-written target/mask cell per (policy, label state). This is the
# labeling contract itself, kept independent of apply_policy on purpose.
EXPECTED_CELL = {
    LabelPolicy.U_ZEROS: {
        "1.0": (1.0, 1.0),
        "0.0": (0.0, 1.0),
        "-1.0": (0.0, 1.0),
        "": (0.0, 0.0),
    },
    LabelPolicy.U_ONES: {
        "1.0": (1.0, 1.0),
        "0.0": (0.0, 1.0),
        "-1.0": (1.0, 1.0),
        "": (0.0, 0.0),
    },
    LabelPolicy.U_IGNORE: {
        "1.0": (1.0, 1.0),
        "0.0": (0.0, 1.0),
        "-1.0": (0.0, 0.0),
        "": (0.0, 0.0),
    },
}

_STATE_CYCLE = ("1.0", "0.0", "-1.0", "")


def _crafted_manifest(path: Path) -> tuple[Path, list[list[str]]]:
    """Six rows whose cells cycle through all four label states."""
    cells = [[_STATE_CYCLE[(i + j) % 4] for j in range(len(CLASS_NAMES))] for i in range(6)]
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["Path", "Frontal/Lateral", "AP/PA", *CLASS_NAMES])
        for i, row in enumerate(cells):
            writer.writerow([f"patient{i}/study1/view1.png", "Frontal", "AP", *row])
    return path, cells


def _official_manifest() -> Path | None:
    root = os.environ.get("CXRSCREEN_DATA_ROOT", "")
    candidates = [
        Path(root) / rel
        for rel in ("valid.csv", "test.csv", "CheXpert-v1.0/valid.csv", "CheXpert-v1.0-small/valid.csv")
        if root
    ]
    for candidate in candidates:
        if candidate.is_file():
            return candidate
    return None


def test_criterion_5_policy_encoding_table(tmp_path, capsys):
    official = _official_manifest()
    note = "" if official else "; official manifest absent, crafted-manifest leg only"
    with criterion(5, f"policy encoding matches the hand-written table{note}", 5.0):
        manifest, cells = _crafted_manifest(tmp_path / "crafted.csv")
        records = parse_manifest(manifest)
        assert len(records) == 6
        for policy, table in EXPECTED_CELL.items():
            targets, masks = encode_dataset(records, policy)
            want_t = np.array([[table[cell][0] for cell in row] for row in cells])
            want_m = np.array([[table[cell][1] for cell in row] for row in cells])
            assert np.array_equal(targets, want_t)
            assert np.array_equal(masks, want_m)

        if official is not None:
            official_records = parse_manifest(official)
            assert len(official_records) == 234
            uncertain = sum(
                state is LabelState.UNCERTAIN for r in official_records for state in r.labels
            )
            assert uncertain == 0
            positives = {
                name: sum(
                    r.labels[CLASS_INDEX[name]] is LabelState.POSITIVE for r in official_records
                )
                for name in ("Atelectasis", "Cardiomegaly")
            }
            assert positives == {"Atelectasis": 80, "Cardiomegaly": 68}


def _linear_scorer(weights: np.ndarray):
    def run(batch: np.ndarray) -> np.ndarray:
        return batch.reshape(len(batch), -1) @ np.asarray(weights, dtype=np.float64).ravel()

    return run


def _analytic_linear_saliency(weights, image, p):
    # E[f(x * M) | cell visible] for a linear f and independent Bernoulli cells:
    # the visible cell contributes fully, every other cell with probability p.
    contrib = np.asarray(weights) * np.asarray(image)
    total = contrib.sum()
    return contrib + p * (total - contrib)


def test_criterion_6_saliency_oracles(capsys):
    with criterion(6, "saliency: exhaustive 2x2 matches analytic; 3x3 Monte Carlo within 0.02", 120.0):
        rng = np.random.default_rng(6)
        image = rng.uniform(0.1, 1.0, size=(2, 2))
        weights = rng.uniform(-0.5, 0.5, size=(2, 2))
        for p in (0.3, 0.5, 0.7):
            spec = MaskGridSpec(grid_h=2, grid_w=2, probability=p, n_masks=16)
            got = exhaustive_saliency(_linear_scorer(weights), image, spec)
            assert np.allclose(got, _analytic_linear_saliency(weights, image, p), atol=1e-9)

        image3 = rng.uniform(0.1, 1.0, size=(3, 3))
        weights3 = rng.uniform(0.0, 0.2, size=(3, 3))
        scorer = _linear_scorer(weights3)
        spec3 = MaskGridSpec(grid_h=3, grid_w=3, probability=0.5, n_masks=50_000, seed=11)
        exact = exhaustive_saliency(scorer, image3, spec3)
        estimate = rise_saliency(scorer, image3, spec3)
        assert np.max(np.abs(estimate - exact)) < 0.02


def test_criterion_7_ensemble_reductions(capsys):
    with criterion(7, "ensembles: uniform weighting equals averaging; worked example hits 0.6", 1.0):
        rng = np.random.default_rng(7)
        members = [rng.uniform(size=(10, 14)) for _ in range(3)]
        averaged = average_ensemble(members)
        weighted = weighted_ensemble(members, uniform_weights(3, 14))
        assert np.max(np.abs(weighted - averaged)) < 1e-12

        weights = derive_weights(np.array([[0.8], [0.6]]))
        combined = weighted_ensemble([np.array([[0.9]]), np.array([[0.2]])], weights)
        # (0.8 * 0.9 + 0.6 * 0.2) / 1.4 = 0.6; one float64 ulp of slack.
        assert abs(combined[0, 0] - 0.6) <= np.finfo(np.float64).eps


def _eval_stub_records():
    from cxrscreen import StudyRecord

    rows = []
    for i in range(4):
        labels = tuple(
            LabelState.POSITIVE if (i + j) % 2 == 0 else LabelState.NEGATIVE
            for j in range(len(CLASS_NAMES))
        )
        rows.append(StudyRecord(image_path=f"eval{i}.png", labels=labels))
    return rows


def test_criterion_8_grid_integrity(tmp_path, monkeypatch, capsys):
    with criterion(8, "grid: 63 unique cells, resume skips done work, F without O rejected", 5.0):
        configs = enumerate_grid(_full_scale_base(tmp_path))
        fingerprints = [c.fingerprint() for c in configs]
        assert len(fingerprints) == 63
        assert len(set(fingerprints)) == 63

        with pytest.raises(ValueError, match="enable O as well or drop F"):
            enumerate_grid(_full_scale_base(tmp_path), protocols=(AdaptationProtocol.FINE_TUNE,))

        # Simulated interruption: one of three cells already done, the runner
        # must execute exactly the other two. fit is stubbed so the test
        # exercises scheduling, not optimization.
        import cxrscreen.runner as runner_mod

        executed: list[str] = []

        def stub_fit(config, train_records, eval_records, model=None, resume=True):
            executed.append(config.fingerprint())
            scores = np.full((len(eval_records), len(CLASS_NAMES)), 0.5)
            preds = PredictionMatrix(scores=scores, row_ids=[r.image_path for r in eval_records])
            ckpt = config.checkpoint_path("final")
            ckpt.parent.mkdir(parents=True, exist_ok=True)
            ckpt.write_bytes(b"stub")
            return FitResult(
                checkpoint_path=ckpt,
                predictions=preds,
                epoch_losses=[0.0],
                wall_minutes=0.0,
                all_masked_batches=0,
                selected_epoch=0,
            )

        monkeypatch.setattr(runner_mod, "fit", stub_fit)
        small = enumerate_grid(
            _full_scale_base(tmp_path),
            archs=("tiny8",),
            protocols=(AdaptationProtocol.RANDOM_INIT,),
        )
        assert len(small) == 3
        eval_records = _eval_stub_records()
        store = ResultsStore(tmp_path / "results.jsonl")
        done_before = RunRecord(
            fingerprint=small[0].fingerprint(),
            arch=small[0].arch,
            protocol=small[0].protocol.value,
            policy=small[0].policy.value,
            status=RunStatus.DONE,
            auc=[0.5] * len(CLASS_NAMES),
            average_auc=0.5,
            checkpoint_path=str(tmp_path / "prior.pt"),
        )
        store.append(done_before)

        run_all(small, eval_records, eval_records, store)
        assert executed == [c.fingerprint() for c in small[1:]]
        assert store.latest()[small[0].fingerprint()] == done_before
        assert all(
            store.latest()[c.fingerprint()].status is RunStatus.DONE for c in small
        )


def test_criterion_9_end_to_end_learnability(tmp_path, capsys):
    with criterion(9, "synthetic end-to-end: per-class AUC >= 0.95 under all policies; O backbone frozen", 900.0):
        # Roughly 500 studies: 480 for training (the horizontal-stripe class
        # needs that many to separate cleanly in two epochs) plus 120 held out.
        train_manifest, valid_manifest = build_separable_task(tmp_path, 480, 120, source_size=64, seed=0)
        train = parse_manifest(train_manifest)
        valid = parse_manifest(valid_manifest)
        assert (len(train), len(valid)) == (480, 120)
        truth, truth_masks = eval_truth(valid)

        def config_for(policy, protocol):
            return ExperimentConfig(
                arch="small32",
                protocol=protocol,
                policy=policy,
                hyper=Hyperparameters(epochs=2, batch_size=16, learning_rate=3e-3),
                train_manifest=str(train_manifest),
                eval_manifest=str(valid_manifest),
                output_dir=str(tmp_path / "runs"),
                seed=0,
                image_size=INPUT_SIZE,
            )

        for policy in LabelPolicy:
            config = config_for(policy, AdaptationProtocol.RANDOM_INIT)
            result = fit(config, train, valid)
            report = build_report(result.predictions.scores, truth, truth_masks)
            for name in ACTIVE_CLASSES:
                auc = report.curves[CLASS_INDEX[name]].auc
                assert auc is not None and auc >= 0.95, f"{policy.value} {name}: {auc}"

        frozen_config = config_for(LabelPolicy.U_ZEROS, AdaptationProtocol.OFF_THE_SHELF)
        reference = build_model(frozen_config.arch, frozen_config.protocol, seed=frozen_config.seed)
        result = fit(frozen_config, train, valid)
        trained = restore_model(load_checkpoint(result.checkpoint_path))
        assert parameter_hash(trained.backbone) == parameter_hash(reference.backbone)
        assert parameter_hash(trained.head) != parameter_hash(reference.head)
