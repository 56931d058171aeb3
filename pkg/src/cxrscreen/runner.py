"""Experiment grid execution, append-only result store, report emission.

The default grid is 7 architectures x 3 adaptation protocols x 3 uncertain-
label policies = 63 cells, each identified by its config fingerprint. Runs
append records to a line-oriented store, so a crashed sweep resumes by
skipping fingerprints already done. Fine-tune cells are ordered after the
frozen-backbone cell they warm-start from.
"""

from __future__ import annotations

import concurrent.futures
import csv
import json
import threading
import time
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .ensembles import average_ensemble, derive_weights, weighted_ensemble
from .evaluation import (
    REPORT_COLUMNS,
    EvaluationReport,
    TableRow,
    build_report,
    plot_roc_grid,
    render_table,
    report_to_row,
    write_roc_points,
)
from .labels import CLASS_INDEX, CLASS_NAMES, LabelPolicy, StudyRecord, encode_dataset
from .models import AdaptationProtocol, ArchitectureId, count_parameters
from .training import PredictionMatrix, fit

DISPLAY_NAMES = {
    "vgg16_bn": "VGG-16",
    "vgg19_bn": "VGG-19",
    "inception_v3": "Inception-V3",
    "resnet18": "ResNet-18",
    "resnet50": "ResNet-50",
    "densenet121": "DenseNet-121",
    "xception": "Xception",
}

PROTOCOL_ORDER = (
    AdaptationProtocol.RANDOM_INIT,
    AdaptationProtocol.OFF_THE_SHELF,
    AdaptationProtocol.FINE_TUNE,
)


class RunStatus(Enum):
    PENDING = "pending"
    RUNNING = "running"
    DONE = "done"
    FAILED = "failed"


@dataclass
class RunRecord:
    """One grid cell's outcome, as persisted in the results store."""

    fingerprint: str
    arch: str
    protocol: str
    policy: str
    status: RunStatus
    wall_minutes: float = 0.0
    auc: list[float | None] = field(default_factory=list)
    average_auc: float | None = None
    checkpoint_path: str | None = None
    predictions_path: str | None = None
    n_parameters: int | None = None
    error: str | None = None

    def __post_init__(self) -> None:
        if isinstance(self.status, str):
            self.status = RunStatus(self.status)
        if self.status is RunStatus.DONE:
            if not self.auc or self.checkpoint_path is None:
                raise ValueError("done records need per-class AUCs and a checkpoint path")

    def to_json(self) -> str:
        payload = {
            "fingerprint": self.fingerprint,
            "arch": self.arch,
            "protocol": self.protocol,
            "policy": self.policy,
            "status": self.status.value,
            "wall_minutes": self.wall_minutes,
            "auc": self.auc,
            "average_auc": self.average_auc,
            "checkpoint_path": self.checkpoint_path,
            "predictions_path": self.predictions_path,
            "n_parameters": self.n_parameters,
            "error": self.error,
        }
        return json.dumps(payload)

    @classmethod
    def from_json(cls, line: str) -> "RunRecord":
        data = json.loads(line)
        return cls(**data)


class ResultsStore:
    """Append-only JSONL log of run records; replay reconstructs state."""

    def __init__(self, path) -> None:
        self.path = Path(path)
        self._lock = threading.Lock()

    def append(self, record: RunRecord) -> None:
        with self._lock:
            if record.status is RunStatus.DONE and record.fingerprint in self._done_set():
                raise ValueError(
                    f"fingerprint {record.fingerprint} already has a done record"
                )
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a") as handle:
                handle.write(record.to_json() + "\n")

    def records(self) -> list[RunRecord]:
        if not self.path.exists():
            return []
        out = []
        with open(self.path) as handle:
            for line in handle:
                line = line.strip()
                if line:
                    out.append(RunRecord.from_json(line))
        return out

    def latest(self) -> dict[str, RunRecord]:
        """Most recent record per fingerprint (replay of the log)."""
        state: dict[str, RunRecord] = {}
        for record in self.records():
            current = state.get(record.fingerprint)
            # A done record is terminal; later running/failed lines (e.g. a
            # concurrent retry that lost the race) never demote it.
            if current is not None and current.status is RunStatus.DONE:
                continue
            state[record.fingerprint] = record
        return state

    def _done_set(self) -> set[str]:
        return {
            r.fingerprint for r in self.records() if r.status is RunStatus.DONE
        }

    def is_done(self, fingerprint: str) -> bool:
        return fingerprint in self._done_set()

    def done_records(self) -> list[RunRecord]:
        return [r for r in self.latest().values() if r.status is RunStatus.DONE]


def enumerate_grid(
    base: ExperimentConfig,
    archs: tuple[str, ...] | None = None,
    protocols: tuple[AdaptationProtocol, ...] | None = None,
    policies: tuple[LabelPolicy, ...] | None = None,
) -> list[ExperimentConfig]:
    """Cartesian product of the enabled axis values, deterministically ordered
    so every fine-tune cell follows the frozen-backbone cell it depends on."""
    archs = archs or tuple(a.value for a in ArchitectureId)
    protocols = protocols or PROTOCOL_ORDER
    policies = policies or tuple(LabelPolicy)
    if AdaptationProtocol.FINE_TUNE in protocols and AdaptationProtocol.OFF_THE_SHELF not in protocols:
        raise ValueError(
            "protocol F warm-starts its head from the matching protocol O run; "
            "enable O as well or drop F"
        )
    ordered_protocols = tuple(p for p in PROTOCOL_ORDER if p in protocols)
    configs = []
    for arch in archs:
        for policy in policies:
            for protocol in ordered_protocols:
                configs.append(replace(base, arch=arch, protocol=protocol, policy=policy))
    return configs


def eval_truth(records: list[StudyRecord]) -> tuple[np.ndarray, np.ndarray]:
    """Ground-truth encoding for evaluation: positives and negatives pass
    through, uncertain and missing entries are masked out of the ROC."""
    return encode_dataset(records, LabelPolicy.U_IGNORE)


def run_one(
    config: ExperimentConfig,
    train_records: list[StudyRecord],
    eval_records: list[StudyRecord],
    store: ResultsStore,
) -> RunRecord:
    """Execute one grid cell unless its fingerprint is already done."""
    fingerprint = config.fingerprint()
    base = dict(
        fingerprint=fingerprint,
        arch=config.arch,
        protocol=config.protocol.value,
        policy=config.policy.value,
    )
    state = store.latest().get(fingerprint)
    if state is not None and state.status is RunStatus.DONE:
        return state

    if config.protocol is AdaptationProtocol.FINE_TUNE:
        sibling = config.off_the_shelf_sibling()
        if not store.is_done(sibling.fingerprint()) and not sibling.checkpoint_path("final").exists():
            raise FileNotFoundError(
                f"fine-tune cell {fingerprint} needs the frozen-backbone cell "
                f"{sibling.fingerprint()} to finish first (head warm-start)"
            )

    store.append(RunRecord(status=RunStatus.RUNNING, **base))
    start = time.perf_counter()
    try:
        result = fit(config, train_records, eval_records)
        result.predictions.to_csv(config.predictions_path())
        truth, truth_masks = eval_truth(eval_records)
        report = build_report(result.predictions.scores, truth, truth_masks)
        record = RunRecord(
            status=RunStatus.DONE,
            wall_minutes=(time.perf_counter() - start) / 60.0,
            auc=report.auc_vector(),
            average_auc=report.average_auc,
            checkpoint_path=str(result.checkpoint_path),
            predictions_path=str(config.predictions_path()),
            n_parameters=_parameter_count(config),
            **base,
        )
    except Exception as exc:
        store.append(
            RunRecord(
                status=RunStatus.FAILED,
                wall_minutes=(time.perf_counter() - start) / 60.0,
                error=f"{type(exc).__name__}: {exc}",
                **base,
            )
        )
        raise
    store.append(record)
    return record


def _parameter_count(config: ExperimentConfig) -> int:
    from .models import build_model

    # Random init avoids any pretrained-weight fetch; the count is identical.
    model = build_model(config.arch, AdaptationProtocol.RANDOM_INIT, seed=0)
    return count_parameters(model)


def run_all(
    configs: list[ExperimentConfig],
    train_records: list[StudyRecord],
    eval_records: list[StudyRecord],
    store: ResultsStore,
    device_pool: tuple[str, ...] = ("cpu",),
) -> ResultsStore:
    """Execute every pending config, one run per device at a time.

    Cells sharing (arch, policy) stay on one device in R, O, F order so the
    warm-start dependency holds; a failed run is recorded and the sweep
    continues.
    """
    groups: dict[tuple[str, str], list[ExperimentConfig]] = {}
    order: list[tuple[str, str]] = []
    for config in configs:
        key = (config.arch, config.policy.value)
        if key not in groups:
            groups[key] = []
            order.append(key)
        groups[key].append(config)

    def run_group(key: tuple[str, str], device: str) -> None:
        for config in groups[key]:
            cell = replace(config, device=device) if device != config.device else config
            try:
                run_one(cell, train_records, eval_records, store)
            except Exception:
                continue  # recorded as failed; later cells may still run

    if len(device_pool) <= 1:
        device = device_pool[0] if device_pool else "cpu"
        for key in order:
            run_group(key, device)
        return store

    with concurrent.futures.ThreadPoolExecutor(max_workers=len(device_pool)) as pool:
        futures = []
        for i, key in enumerate(order):
            futures.append(pool.submit(run_group, key, device_pool[i % len(device_pool)]))
        for future in futures:
            future.result()
    return store


def _display(arch: str) -> str:
    return DISPLAY_NAMES.get(arch, arch)


def _arch_order(records: list[RunRecord]) -> list[str]:
    known = [a.value for a in ArchitectureId]
    seen = {r.arch for r in records}
    ordered = [a for a in known if a in seen]
    ordered += sorted(a for a in seen if a not in known)
    return ordered


def _auc_map(record: RunRecord) -> dict[str, float | None]:
    return {name: record.auc[CLASS_INDEX[name]] for name in REPORT_COLUMNS}


def _policy_table(records: list[RunRecord]) -> tuple[str, dict[str, str]]:
    """Supplementary-style table for one policy: 3 protocol rows per
    architecture, per-disease best of each architecture in bold."""
    rows: list[TableRow] = []
    provenance: dict[str, str] = {}
    for arch in _arch_order(records):
        arch_records = {r.protocol: r for r in records if r.arch == arch}
        best_by_class: dict[str, float] = {}
        for record in arch_records.values():
            for name, value in _auc_map(record).items():
                if value is not None and value > best_by_class.get(name, -1.0):
                    best_by_class[name] = value
        for protocol in PROTOCOL_ORDER:
            record = arch_records.get(protocol.value)
            if record is None:
                continue
            auc_by_class = _auc_map(record)
            bold = {
                name
                for name, value in auc_by_class.items()
                if value is not None and value == best_by_class.get(name)
            }
            label = f"{_display(arch)} ({protocol.value})"
            rows.append(
                TableRow(
                    label=label,
                    auc_by_class=auc_by_class,
                    average=record.average_auc,
                    bold=bold,
                )
            )
            provenance[label] = record.fingerprint
    return render_table(rows), provenance


def best_models(records: list[RunRecord]) -> dict[str, RunRecord]:
    """Per architecture: highest nine-class average AUC, ties broken by
    fewer parameters. Architectures where no run has a defined average fall
    back to the run with the most defined per-class AUCs."""

    def rank(record: RunRecord) -> tuple:
        defined = sum(1 for v in record.auc if v is not None)
        avg = record.average_auc if record.average_auc is not None else -1.0
        params = record.n_parameters if record.n_parameters is not None else 0
        return (avg, defined, -params)

    best: dict[str, RunRecord] = {}
    for record in records:
        current = best.get(record.arch)
        if current is None or rank(record) > rank(current):
            best[record.arch] = record
    return best


def _ensemble_rows(
    best: dict[str, RunRecord], eval_records: list[StudyRecord]
) -> tuple[list[TableRow], dict[str, list[str]]]:
    members = []
    for arch in _arch_order(list(best.values())):
        record = best[arch]
        if record.predictions_path and Path(record.predictions_path).exists():
            members.append(record)
    if len(members) < 2:
        return [], {}
    matrices = [PredictionMatrix.from_csv(r.predictions_path).scores for r in members]
    truth, truth_masks = eval_truth(eval_records)

    rows = []
    unbiased = build_report(average_ensemble(matrices), truth, truth_masks)
    rows.append(report_to_row("Ensemble (unbiased)", unbiased))

    # Per-class weights proportional to each member's eval AUC; classes where
    # any member AUC is undefined, or where all members scored 0, fall back
    # to uniform weights.
    auc_matrix = np.full((len(members), len(CLASS_NAMES)), 1.0)
    undefined_columns: set[int] = set()
    for i, record in enumerate(members):
        for c, value in enumerate(record.auc):
            if value is None:
                undefined_columns.add(c)
            else:
                auc_matrix[i, c] = value
    for c in undefined_columns:
        auc_matrix[:, c] = 1.0
    auc_matrix[:, auc_matrix.sum(axis=0) == 0.0] = 1.0
    weighted = build_report(
        weighted_ensemble(matrices, derive_weights(auc_matrix)), truth, truth_masks
    )
    rows.append(report_to_row("Ensemble (weighted)", weighted))
    return rows, {
        "Ensemble (unbiased)": [r.fingerprint for r in members],
        "Ensemble (weighted)": [r.fingerprint for r in members],
    }


def _timing_table(records: list[RunRecord]) -> str:
    archs = _arch_order(records)
    header = ["Protocol / Policy", *(_display(a) for a in archs)]
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    cells = {(r.protocol, r.policy, r.arch): r.wall_minutes for r in records}
    for protocol in PROTOCOL_ORDER:
        for policy in LabelPolicy:
            row = [f"{protocol.value} / {policy.value}"]
            hit = False
            for arch in archs:
                minutes = cells.get((protocol.value, policy.value, arch))
                if minutes is None:
                    row.append("—")
                else:
                    row.append(f"{minutes:.1f}")
                    hit = True
            if hit:
                lines.append("| " + " | ".join(row) + " |")
    return "\n".join(lines)


def emit_reports(
    store: ResultsStore,
    output_dir,
    eval_records: list[StudyRecord],
) -> dict[str, Path]:
    """Write every report artifact from the done runs in the store.

    Emits per-policy AUC tables, the best-models summary with ensemble rows,
    ROC point data and plots, a parameter-count vs average-AUC figure, the
    timing table, and a provenance map from table rows to run fingerprints.
    """
    records = store.done_records()
    if not records:
        raise ValueError("no done runs in the store; nothing to report")
    reports_dir = Path(output_dir) / "reports"
    reports_dir.mkdir(parents=True, exist_ok=True)
    written: dict[str, Path] = {}
    provenance: dict[str, dict] = {}

    for policy in LabelPolicy:
        policy_records = [r for r in records if r.policy == policy.value]
        if not policy_records:
            continue
        table, table_prov = _policy_table(policy_records)
        path = reports_dir / f"auc_{policy.value}.md"
        title = f"Per-class AUC, uncertain labels handled by {policy.value} (best of each architecture per disease in bold)\n\n"
        path.write_text(title + table + "\n")
        written[f"auc_{policy.value}"] = path
        provenance[path.name] = table_prov

    best = best_models(records)
    summary_rows: list[TableRow] = []
    summary_prov: dict[str, list[str] | str] = {}
    truth, truth_masks = eval_truth(eval_records) if eval_records else (None, None)
    for arch in _arch_order(list(best.values())):
        record = best[arch]
        label = f"{_display(arch)} ({record.protocol}, {record.policy})"
        row = TableRow(
            label=label, auc_by_class=_auc_map(record), average=record.average_auc
        )
        summary_rows.append(row)
        summary_prov[label] = record.fingerprint
    if eval_records:
        ensemble_rows, ensemble_prov = _ensemble_rows(best, eval_records)
        summary_rows.extend(ensemble_rows)
        summary_prov.update(ensemble_prov)
    summary_path = reports_dir / "summary.md"
    summary_path.write_text(
        "Best performing model per architecture (nine-class average AUC)\n\n"
        + render_table(summary_rows)
        + "\n"
    )
    written["summary"] = summary_path
    provenance[summary_path.name] = summary_prov

    if eval_records:
        reports_by_model: dict[str, EvaluationReport] = {}
        for arch in _arch_order(list(best.values())):
            record = best[arch]
            if not record.predictions_path or not Path(record.predictions_path).exists():
                continue
            matrix = PredictionMatrix.from_csv(record.predictions_path)
            report = build_report(matrix.scores, truth, truth_masks)
            reports_by_model[_display(arch)] = report
            for name in REPORT_COLUMNS:
                curve = report.curves[CLASS_INDEX[name]]
                if curve.defined:
                    write_roc_points(
                        curve,
                        reports_dir / "roc" / f"{record.arch}_{name.replace(' ', '_')}.csv",
                    )
        if reports_by_model:
            roc_path = reports_dir / "roc_grid.png"
            plot_roc_grid(reports_by_model, roc_path)
            written["roc_grid"] = roc_path

    scatter_path = _params_vs_auc(best, reports_dir)
    if scatter_path is not None:
        written["params_vs_auc"] = scatter_path

    timing_path = reports_dir / "timing.md"
    timing_path.write_text(
        "Wall-clock minutes per run (protocol x policy rows, architectures as columns)\n\n"
        + _timing_table(records)
        + "\n"
    )
    written["timing"] = timing_path
    provenance[timing_path.name] = {
        f"{r.protocol}/{r.policy}/{r.arch}": r.fingerprint for r in records
    }

    all_runs = reports_dir / "all_runs.csv"
    with open(all_runs, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(
            ["fingerprint", "arch", "protocol", "policy", "average_auc", "wall_minutes", *CLASS_NAMES]
        )
        for record in sorted(records, key=lambda r: (r.arch, r.policy, r.protocol)):
            writer.writerow(
                [
                    record.fingerprint,
                    record.arch,
                    record.protocol,
                    record.policy,
                    "" if record.average_auc is None else f"{record.average_auc:.6f}",
                    f"{record.wall_minutes:.2f}",
                    *["" if v is None else f"{v:.6f}" for v in record.auc],
                ]
            )
    written["all_runs"] = all_runs

    prov_path = reports_dir / "provenance.json"
    prov_path.write_text(json.dumps(provenance, indent=2) + "\n")
    written["provenance"] = prov_path
    return written


def _params_vs_auc(best: dict[str, RunRecord], reports_dir: Path) -> Path | None:
    points = [
        (r.n_parameters, r.average_auc, _display(arch))
        for arch, r in best.items()
        if r.n_parameters is not None and r.average_auc is not None
    ]
    if not points:
        return None
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 4))
    for n, avg, label in points:
        ax.scatter(n / 1e6, avg)
        ax.annotate(label, (n / 1e6, avg), fontsize=7, xytext=(3, 3), textcoords="offset points")
    ax.set_xlabel("Parameters (millions)")
    ax.set_ylabel("Average AUC (nine classes)")
    fig.tight_layout()
    path = reports_dir / "params_vs_auc.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
