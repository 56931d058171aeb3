"""Command-line entry points for the screening benchmark harness.

Verbs: ingest-stats, train, grid, evaluate, ensemble, explain, report.
The data root comes from --data-root or the CXRSCREEN_DATA_ROOT environment
variable; run outputs land under the configured output directory in a fixed
layout (checkpoints/, predictions/, logs/, reports/, saliency/).
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, load_config, save_config
from .evaluation import build_report, render_table, report_to_row
from .labels import LabelPolicy, class_distribution, distribution_table, parse_manifest
from .models import AdaptationProtocol, load_checkpoint, restore_model
from .runner import ResultsStore, emit_reports, enumerate_grid, eval_truth, run_all
from .training import PredictionMatrix, fit

ENV_DATA_ROOT = "CXRSCREEN_DATA_ROOT"


def _data_root(args) -> str:
    root = getattr(args, "data_root", None) or os.environ.get(ENV_DATA_ROOT)
    return root or "."


def _manifest_path(name: str | Path, root: str) -> Path:
    path = Path(name)
    return path if path.is_absolute() else Path(root) / path


def _load_records(manifest: str | Path, root: str, frontal_only: bool = False):
    return parse_manifest(_manifest_path(manifest, root), frontal_only=frontal_only)


def _config_overrides(args) -> dict:
    overrides: dict = {}
    for key in ("arch", "seed", "device", "output_dir"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    if getattr(args, "protocol", None):
        overrides["protocol"] = args.protocol
    if getattr(args, "policy", None):
        overrides["policy"] = args.policy
    if getattr(args, "data_root", None) or os.environ.get(ENV_DATA_ROOT):
        overrides["data_root"] = _data_root(args)
    hyper = {}
    for key in ("epochs", "batch_size", "learning_rate"):
        value = getattr(args, key, None)
        if value is not None:
            hyper[key] = value
    if hyper:
        overrides["hyper"] = hyper
    return overrides


def _load_experiment_config(args) -> ExperimentConfig:
    if args.config:
        return load_config(args.config, overrides=_config_overrides(args))
    from .config import config_from_dict

    merged = {"arch": "densenet121", "protocol": "F", "policy": "u-zeros"}
    merged.update(_config_overrides(args))
    return config_from_dict(merged)


def cmd_ingest_stats(args) -> int:
    records = _load_records(args.manifest, _data_root(args), args.frontal_only)
    print(f"{len(records)} records from {args.manifest}")
    print(distribution_table(class_distribution(records)))
    return 0


def cmd_train(args) -> int:
    config = _load_experiment_config(args)
    root = config.data_root
    train_records = _load_records(config.train_manifest, root, config.frontal_only)
    eval_records = _load_records(config.eval_manifest, root, config.frontal_only)
    save_config(config, Path(config.output_dir) / f"{config.fingerprint()}_config.yaml")
    result = fit(config, train_records, eval_records)
    result.predictions.to_csv(config.predictions_path())
    truth, masks = eval_truth(eval_records)
    report = build_report(result.predictions.scores, truth, masks)
    print(f"run {config.fingerprint()} finished in {result.wall_minutes:.1f} min")
    print(f"checkpoint: {result.checkpoint_path}")
    print(f"predictions: {config.predictions_path()}")
    if report.average_auc is not None:
        print(f"average AUC (nine classes): {report.average_auc:.4f}")
    return 0


def cmd_grid(args) -> int:
    config = _load_experiment_config(args)
    archs = tuple(args.archs.split(",")) if args.archs else None
    protocols = (
        tuple(AdaptationProtocol(p) for p in args.protocols.split(","))
        if args.protocols
        else None
    )
    policies = (
        tuple(LabelPolicy(p) for p in args.policies.split(",")) if args.policies else None
    )
    configs = enumerate_grid(config, archs=archs, protocols=protocols, policies=policies)
    store = ResultsStore(args.store or Path(config.output_dir) / "results.jsonl")
    root = config.data_root
    train_records = _load_records(config.train_manifest, root, config.frontal_only)
    eval_records = _load_records(config.eval_manifest, root, config.frontal_only)
    devices = tuple(args.devices.split(",")) if args.devices else (config.device,)
    print(f"grid: {len(configs)} cells, store at {store.path}")
    run_all(configs, train_records, eval_records, store, device_pool=devices)
    state = store.latest()
    done = sum(1 for r in state.values() if r.status.value == "done")
    failed = sum(1 for r in state.values() if r.status.value == "failed")
    print(f"done: {done}  failed: {failed}  pending: {len(configs) - done - failed}")
    return 0 if failed == 0 else 1


def cmd_evaluate(args) -> int:
    matrix = PredictionMatrix.from_csv(args.predictions)
    records = _load_records(args.manifest, _data_root(args))
    truth, masks = eval_truth(records)
    report = build_report(matrix.scores, truth, masks)
    print(render_table([report_to_row(args.label, report)]))
    for c, curve in sorted(report.curves.items()):
        from .labels import CLASS_NAMES

        if curve.defined:
            print(f"{CLASS_NAMES[c]}: AUC {curve.auc:.4f} "
                  f"({curve.n_positive}+ / {curve.n_negative}-)")
        else:
            print(f"{CLASS_NAMES[c]}: undefined ({curve.undefined_reason})")
    return 0


def cmd_ensemble(args) -> int:
    from .ensembles import average_ensemble, derive_weights, weighted_ensemble

    paths = args.predictions.split(",")
    matrices = [PredictionMatrix.from_csv(p) for p in paths]
    scores = [m.scores for m in matrices]
    records = _load_records(args.manifest, _data_root(args))
    truth, masks = eval_truth(records)
    if args.weighted:
        member_aucs = []
        for m in scores:
            report = build_report(m, truth, masks)
            member_aucs.append([
                v if v is not None else 1.0 for v in report.auc_vector()
            ])
        auc_matrix = np.array(member_aucs)
        # Classes where every member scored 0 get uniform weights, the same
        # fallback as classes with undefined AUCs.
        auc_matrix[:, auc_matrix.sum(axis=0) == 0.0] = 1.0
        combined = weighted_ensemble(scores, derive_weights(auc_matrix))
        label = "Ensemble (weighted)"
    else:
        combined = average_ensemble(scores)
        label = "Ensemble (unbiased)"
    out = PredictionMatrix(scores=combined, row_ids=matrices[0].row_ids)
    if args.out:
        out.to_csv(args.out)
        print(f"wrote {args.out}")
    report = build_report(combined, truth, masks)
    print(render_table([report_to_row(label, report)]))
    return 0


def cmd_explain(args) -> int:
    from .labels import CLASS_INDEX
    from .preprocess import NormalizationStats, load_resize_replicate, normalize
    from .saliency import (
        MaskGridSpec,
        class_score_fn,
        load_annotation,
        overlap_score,
        rise_saliency,
        save_overlay,
    )

    if args.class_name not in CLASS_INDEX:
        raise ValueError(
            f"unknown class name {args.class_name!r}; choose from {list(CLASS_INDEX)}"
        )
    payload = load_checkpoint(args.checkpoint)
    model = restore_model(payload)
    class_index = CLASS_INDEX[args.class_name]
    tensor = load_resize_replicate(args.image, size=args.size)
    stats = NormalizationStats()
    normalized = normalize(tensor, stats)
    spec = MaskGridSpec(
        grid_h=args.grid, grid_w=args.grid, probability=args.probability,
        n_masks=args.n_masks, seed=args.seed,
    )
    saliency = rise_saliency(
        class_score_fn(model, class_index, device=args.device),
        normalized.data,
        spec,
    )
    out_dir = Path(args.out or "saliency")
    stem = Path(args.image).stem
    npy_path = out_dir / f"{stem}_{args.class_name.replace(' ', '_')}.npy"
    npy_path.parent.mkdir(parents=True, exist_ok=True)
    np.save(npy_path, saliency)
    region = None
    if args.annotation_root and args.study_id:
        region = load_annotation(args.annotation_root, args.study_id, args.class_name, args.size).mask
        scores = overlap_score(saliency, region)
        print(f"pointing hit: {scores.pointing_hit:.0f}  mass fraction: {scores.mass_fraction:.4f}")
    overlay = save_overlay(
        tensor.data, saliency, out_dir / f"{stem}_{args.class_name.replace(' ', '_')}.png",
        region=region, title=f"{args.class_name}",
    )
    print(f"saliency grid: {npy_path}")
    print(f"overlay: {overlay}")
    return 0


def cmd_report(args) -> int:
    config = _load_experiment_config(args)
    store = ResultsStore(args.store or Path(config.output_dir) / "results.jsonl")
    eval_records = _load_records(config.eval_manifest, config.data_root, config.frontal_only)
    written = emit_reports(store, config.output_dir, eval_records)
    for name, path in sorted(written.items()):
        print(f"{name}: {path}")
    return 0


def _add_config_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="YAML experiment config; flags override its values")
    parser.add_argument("--arch")
    parser.add_argument("--protocol", choices=[p.value for p in AdaptationProtocol])
    parser.add_argument("--policy", choices=[p.value for p in LabelPolicy])
    parser.add_argument("--seed", type=int)
    parser.add_argument("--device")
    parser.add_argument("--data-root", dest="data_root")
    parser.add_argument("--output-dir", dest="output_dir")
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--batch-size", dest="batch_size", type=int)
    parser.add_argument("--learning-rate", dest="learning_rate", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cxrscreen",
        description="Multi-label chest radiograph screening benchmark harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest-stats", help="parse a manifest and print label distributions")
    p.add_argument("manifest")
    p.add_argument("--frontal-only", action="store_true")
    p.add_argument("--data-root", dest="data_root")
    p.set_defaults(func=cmd_ingest_stats)

    p = sub.add_parser("train", help="train one (arch, protocol, policy) cell")
    _add_config_arguments(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("grid", help="run the experiment sweep with resume")
    _add_config_arguments(p)
    p.add_argument("--archs", help="comma-separated architecture subset")
    p.add_argument("--protocols", help="comma-separated subset of R,O,F")
    p.add_argument("--policies", help="comma-separated policy subset")
    p.add_argument("--devices", help="comma-separated device pool")
    p.add_argument("--store", help="results log path (default <output>/results.jsonl)")
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("evaluate", help="score a prediction table against a manifest")
    p.add_argument("--predictions", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--label", default="model")
    p.add_argument("--data-root", dest="data_root")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ensemble", help="combine prediction tables and score the result")
    p.add_argument("--predictions", required=True, help="comma-separated prediction CSVs")
    p.add_argument("--manifest", required=True)
    p.add_argument("--weighted", action="store_true", help="AUC-weighted instead of plain average")
    p.add_argument("--out", help="write the combined prediction table here")
    p.add_argument("--data-root", dest="data_root")
    p.set_defaults(func=cmd_ensemble)

    p = sub.add_parser("explain", help="randomized-masking saliency for one image and class")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--class-name", dest="class_name", required=True)
    p.add_argument("--size", type=int, default=320)
    p.add_argument("--grid", type=int, default=7)
    p.add_argument("--probability", type=float, default=0.5)
    p.add_argument("--n-masks", dest="n_masks", type=int, default=4000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--device", default="cpu")
    p.add_argument("--out", help="output directory (default saliency/)")
    p.add_argument("--annotation-root")
    p.add_argument("--study-id", dest="study_id")
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("report", help="emit tables, plots and provenance from a results store")
    _add_config_arguments(p)
    p.add_argument("--store", help="results log path (default <output>/results.jsonl)")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
