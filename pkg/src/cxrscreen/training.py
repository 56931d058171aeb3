"""Masked multi-label training loop and score prediction.

The loss is binary cross-entropy summed over the unmasked (image, class)
entries and normalized by their count, so ignored and missing labels
contribute exactly zero loss and zero gradient. Optimization is Adam over
the trainable parameter subset only; frozen backbones are additionally kept
in eval mode so normalization statistics stay untouched.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .config import ExperimentConfig
from .labels import NUM_CLASSES, StudyRecord, encode_dataset
from .models import (
    AdaptationProtocol,
    ScreeningModel,
    build_model,
    init_head_from,
    load_checkpoint,
    save_checkpoint,
    trainable_parameters,
)
from .preprocess import (
    AugmentationConfig,
    NormalizationStats,
    ImageLoadError,
    augment,
    load_resize_replicate,
    normalize,
)


def steps_per_epoch(n_records: int, batch_size: int) -> int:
    """Batch updates per epoch: full batches only, unless the dataset is
    smaller than one batch (then a single short batch)."""
    if n_records <= 0 or batch_size <= 0:
        raise ValueError("need positive record count and batch size")
    return max(n_records // batch_size, 1)


def masked_bce(
    scores: torch.Tensor,
    targets: torch.Tensor,
    masks: torch.Tensor,
    fixed_denominator: bool = False,
) -> torch.Tensor:
    """Masked BCE on probabilities.

    loss = sum(mask * (-t*ln s - (1-t)*ln(1-s))) / max(sum(mask), 1),
    or divided by the full entry count when ``fixed_denominator`` is set.
    Masked entries contribute exactly zero to value and gradient.
    """
    eps = torch.finfo(scores.dtype).eps
    s = scores.clamp(eps, 1.0 - eps)
    elem = -(targets * torch.log(s) + (1.0 - targets) * torch.log(1.0 - s))
    total = (elem * masks).sum()
    if fixed_denominator:
        denom = torch.tensor(float(scores.numel()), dtype=total.dtype)
    else:
        denom = masks.sum().clamp(min=1.0)
    return total / denom


def masked_bce_with_logits(
    logits: torch.Tensor,
    targets: torch.Tensor,
    masks: torch.Tensor,
    fixed_denominator: bool = False,
) -> torch.Tensor:
    """Numerically stable variant used by the training loop."""
    elem = F.binary_cross_entropy_with_logits(logits, targets, reduction="none")
    total = (elem * masks).sum()
    if fixed_denominator:
        denom = torch.tensor(float(logits.numel()), dtype=total.dtype)
    else:
        denom = masks.sum().clamp(min=1.0)
    return total / denom


def make_optimizer(model: ScreeningModel, hyper) -> torch.optim.Adam:
    """Adam over the trainable parameters only."""
    return torch.optim.Adam(
        trainable_parameters(model),
        lr=hyper.learning_rate,
        betas=(hyper.beta1, hyper.beta2),
        weight_decay=hyper.weight_decay,
    )


def train_step(
    model: ScreeningModel,
    optimizer: torch.optim.Optimizer,
    images: torch.Tensor,
    targets: torch.Tensor,
    masks: torch.Tensor,
    fixed_denominator: bool = False,
) -> tuple[float, int]:
    """One optimization step. Returns (loss value, unmasked entry count).

    A batch whose mask is all zeros carries no label information, so the
    optimizer step is skipped outright: with weight decay enabled, Adam
    would otherwise shrink the parameters even on a zero gradient.
    """
    unmasked = int(masks.sum().item())
    if unmasked == 0:
        return 0.0, 0
    optimizer.zero_grad(set_to_none=True)
    logits = model(images)
    loss = masked_bce_with_logits(logits, targets, masks, fixed_denominator)
    if not torch.isfinite(loss):
        raise RuntimeError(f"non-finite training loss: {loss.item()!r}")
    loss.backward()
    optimizer.step()
    return float(loss.item()), unmasked


@dataclass
class PredictionMatrix:
    """Per-study sigmoid scores, one row per record, one column per class."""

    scores: np.ndarray
    row_ids: list[str]
    flagged_rows: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.scores.ndim != 2 or self.scores.shape[1] != NUM_CLASSES:
            raise ValueError(f"expected (n, {NUM_CLASSES}) scores, got {self.scores.shape}")
        if len(self.row_ids) != len(self.scores):
            raise ValueError("row_ids length must match score rows")
        if self.scores.size and (self.scores.min() < 0.0 or self.scores.max() > 1.0):
            raise ValueError("scores must lie in [0, 1]")

    def to_csv(self, path) -> None:
        from .labels import CLASS_NAMES

        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(["Path", *CLASS_NAMES])
            for rid, row in zip(self.row_ids, self.scores):
                writer.writerow([rid, *(f"{v:.8f}" for v in row)])

    @classmethod
    def from_csv(cls, path) -> "PredictionMatrix":
        from .labels import CLASS_NAMES

        with open(path, newline="") as handle:
            reader = csv.reader(handle)
            header = next(reader)
            if header != ["Path", *CLASS_NAMES]:
                raise ValueError(f"unexpected prediction header in {path}")
            ids, rows = [], []
            for row in reader:
                ids.append(row[0])
                rows.append([float(v) for v in row[1:]])
        scores = np.array(rows, dtype=np.float64) if rows else np.zeros((0, NUM_CLASSES))
        return cls(scores=scores, row_ids=ids)


def _load_image(record: StudyRecord, data_root: str | Path, size: int):
    path = Path(record.image_path)
    if not path.is_absolute():
        path = Path(data_root) / path
    return load_resize_replicate(path, size=size)


def _batch_tensor(
    records: list[StudyRecord],
    config: ExperimentConfig,
    stats: NormalizationStats,
    aug: AugmentationConfig | None,
    rng: np.random.Generator | None,
) -> torch.Tensor:
    arrays = []
    for record in records:
        tensor = _load_image(record, config.data_root, config.image_size)
        if aug is not None:
            tensor = augment(tensor, aug, rng)
        arrays.append(normalize(tensor, stats).data)
    return torch.from_numpy(np.stack(arrays).astype(np.float32))


def predict(
    model: ScreeningModel,
    records: list[StudyRecord],
    config: ExperimentConfig,
    batch_size: int | None = None,
    strict: bool = True,
) -> PredictionMatrix:
    """Sigmoid scores for every record, in manifest order.

    Unreadable images raise by default; with ``strict=False`` the row is
    zero-filled and its id recorded in ``flagged_rows``.
    """
    stats = NormalizationStats(
        mean=tuple(config.normalization_mean), std=tuple(config.normalization_std)
    )
    bs = batch_size or config.hyper.batch_size
    model.eval()
    device = torch.device(config.device)
    model.to(device)
    rows = np.zeros((len(records), NUM_CLASSES), dtype=np.float64)
    flagged: list[str] = []
    with torch.no_grad():
        start = 0
        while start < len(records):
            chunk = records[start : start + bs]
            loaded, load_idx = [], []
            for offset, record in enumerate(chunk):
                try:
                    tensor = _load_image(record, config.data_root, config.image_size)
                except ImageLoadError:
                    if strict:
                        raise
                    flagged.append(record.image_path)
                    continue
                loaded.append(normalize(tensor, stats).data)
                load_idx.append(start + offset)
            if loaded:
                batch = torch.from_numpy(np.stack(loaded).astype(np.float32)).to(device)
                scores = model.predict_scores(batch).cpu().numpy()
                rows[load_idx] = scores
            start += bs
    return PredictionMatrix(
        scores=rows,
        row_ids=[r.image_path for r in records],
        flagged_rows=flagged,
    )


@dataclass
class FitResult:
    checkpoint_path: Path
    predictions: PredictionMatrix
    epoch_losses: list[float]
    wall_minutes: float
    all_masked_batches: int
    selected_epoch: int


def _epoch_checkpoint(config: ExperimentConfig, epoch: int) -> Path:
    return config.checkpoint_path(f"epoch{epoch}")


def _append_log(config: ExperimentConfig, payload: dict) -> None:
    path = config.log_path()
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "a") as handle:
        handle.write(json.dumps(payload) + "\n")


def _set_train_mode(model: ScreeningModel, protocol: AdaptationProtocol) -> None:
    model.train()
    if protocol is AdaptationProtocol.OFF_THE_SHELF:
        model.backbone.eval()


def fit(
    config: ExperimentConfig,
    train_records: list[StudyRecord],
    eval_records: list[StudyRecord],
    model: ScreeningModel | None = None,
    resume: bool = True,
) -> FitResult:
    """Train one (architecture, protocol, policy) cell end to end.

    Seeds torch and numpy from the config, warm-starts the head from the
    matching frozen-backbone run when fine-tuning, writes a checkpoint per
    epoch (resume picks up after the last one found), appends a JSONL log
    line per epoch, and finally scores the eval records.
    """
    if not train_records:
        raise ValueError("no training records")
    start_time = time.perf_counter()
    torch.manual_seed(config.seed)
    device = torch.device(config.device)

    if model is None:
        model = build_model(config.arch, config.protocol, seed=config.seed)
        if config.protocol is AdaptationProtocol.FINE_TUNE:
            sibling = config.off_the_shelf_sibling()
            warm = sibling.checkpoint_path("final")
            if not warm.exists():
                raise FileNotFoundError(
                    f"fine-tuning needs the frozen-backbone head first: {warm} not found"
                )
            init_head_from(model, warm, policy=config.policy)
    model.to(device)

    targets_np, masks_np = encode_dataset(
        train_records, config.policy, missing_as_negative=config.missing_as_negative
    )
    stats = NormalizationStats(
        mean=tuple(config.normalization_mean), std=tuple(config.normalization_std)
    )
    aug = AugmentationConfig(
        flip_probability=config.flip_probability,
        crop_scale_range=tuple(config.crop_scale_range),
    )

    optimizer = make_optimizer(model, config.hyper)
    start_epoch = 0
    epoch_losses: list[float] = []
    all_masked = 0

    if resume:
        for epoch in range(config.hyper.epochs, 0, -1):
            path = _epoch_checkpoint(config, epoch)
            if path.exists():
                payload = load_checkpoint(path)
                if payload["config_fingerprint"] != config.fingerprint():
                    raise ValueError(
                        f"checkpoint {path} belongs to a different configuration"
                    )
                model.load_state_dict(payload["state_dict"])
                extra = payload.get("extra", {})
                if "optimizer" in extra:
                    optimizer.load_state_dict(extra["optimizer"])
                if payload.get("rng_state", {}).get("torch") is not None:
                    torch.set_rng_state(payload["rng_state"]["torch"])
                start_epoch = epoch
                epoch_losses = list(extra.get("epoch_losses", []))
                all_masked = int(extra.get("all_masked_batches", 0))
                break

    n = len(train_records)
    steps = steps_per_epoch(n, config.hyper.batch_size)
    best_epoch, best_avg = None, None

    for epoch in range(start_epoch, config.hyper.epochs):
        _set_train_mode(model, config.protocol)
        # Separate generators so shuffling and augmentation are reproducible
        # regardless of how many epochs already ran before a resume.
        order_rng = np.random.default_rng((config.seed, epoch, 0))
        aug_rng = np.random.default_rng((config.seed, epoch, 1))
        perm = order_rng.permutation(n)
        epoch_start = time.perf_counter()
        loss_sum = 0.0
        for step in range(steps):
            idx = perm[step * config.hyper.batch_size : (step + 1) * config.hyper.batch_size]
            if len(idx) == 0:
                idx = perm
            batch_records = [train_records[i] for i in idx]
            images = _batch_tensor(batch_records, config, stats, aug, aug_rng).to(device)
            bt = torch.from_numpy(targets_np[idx]).to(device)
            bm = torch.from_numpy(masks_np[idx]).to(device)
            loss, unmasked = train_step(
                model, optimizer, images, bt, bm, config.fixed_loss_denominator
            )
            loss_sum += loss
            if unmasked == 0:
                all_masked += 1
        mean_loss = loss_sum / steps
        epoch_losses.append(mean_loss)
        wall = (time.perf_counter() - epoch_start) / 60.0
        save_checkpoint(
            model,
            _epoch_checkpoint(config, epoch + 1),
            protocol=config.protocol,
            policy=config.policy,
            epoch=epoch + 1,
            config_fingerprint=config.fingerprint(),
            rng_state={"torch": torch.get_rng_state()},
            extra={
                "optimizer": optimizer.state_dict(),
                "epoch_losses": epoch_losses,
                "all_masked_batches": all_masked,
            },
        )
        _append_log(
            config,
            {
                "fingerprint": config.fingerprint(),
                "epoch": epoch + 1,
                "mean_loss": mean_loss,
                "wall_minutes": wall,
                "all_masked_batches": all_masked,
            },
        )
        if config.select_best_on_eval and eval_records:
            from .evaluation import build_report

            matrix = predict(model, eval_records, config)
            truth, truth_masks = encode_dataset(eval_records, config.policy)
            report = build_report(matrix.scores, truth, truth_masks)
            if report.average_auc is not None and (
                best_avg is None or report.average_auc > best_avg
            ):
                best_avg, best_epoch = report.average_auc, epoch + 1

    selected = best_epoch if best_epoch is not None else config.hyper.epochs
    if selected != config.hyper.epochs:
        payload = load_checkpoint(_epoch_checkpoint(config, selected))
        model.load_state_dict(payload["state_dict"])

    final_path = config.checkpoint_path("final")
    save_checkpoint(
        model,
        final_path,
        protocol=config.protocol,
        policy=config.policy,
        epoch=selected,
        config_fingerprint=config.fingerprint(),
        rng_state={"torch": torch.get_rng_state()},
        extra={"selected_epoch": selected},
    )
    predictions = predict(model, eval_records, config) if eval_records else PredictionMatrix(
        scores=np.zeros((0, NUM_CLASSES)), row_ids=[]
    )
    return FitResult(
        checkpoint_path=final_path,
        predictions=predictions,
        epoch_losses=epoch_losses,
        wall_minutes=(time.perf_counter() - start_time) / 60.0,
        all_masked_batches=all_masked,
        selected_epoch=selected,
    )
