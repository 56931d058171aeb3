"""End-to-end CLI verbs on a tiny synthetic task."""

from __future__ import annotations

import numpy as np
import pytest
from PIL import Image

from cxrscreen import AdaptationProtocol, ExperimentConfig, Hyperparameters, LabelPolicy, save_config
from cxrscreen.cli import main

from conftest import build_mini_task


@pytest.fixture(scope="module")
def cli_env(tmp_path_factory):
    """One trained cell plus a two-cell grid, shared by the verb tests."""
    root = tmp_path_factory.mktemp("cli_task")
    train_manifest, valid_manifest = build_mini_task(root)
    out = root / "runs"
    config = ExperimentConfig(
        arch="tiny8",
        protocol=AdaptationProtocol.RANDOM_INIT,
        policy=LabelPolicy.U_ZEROS,
        hyper=Hyperparameters(epochs=1, batch_size=4, learning_rate=1e-2),
        train_manifest=str(train_manifest),
        eval_manifest=str(valid_manifest),
        output_dir=str(out),
        seed=0,
        image_size=16,
    )
    config_path = root / "config.yaml"
    save_config(config, config_path)

    assert main(["train", "--config", str(config_path)]) == 0
    assert main([
        "grid", "--config", str(config_path),
        "--archs", "tiny8", "--protocols", "R,O", "--policies", "u-zeros",
    ]) == 0
    return {
        "root": root,
        "config": config,
        "config_path": config_path,
        "train_manifest": train_manifest,
        "valid_manifest": valid_manifest,
        "out": out,
    }


def test_train_writes_run_artifacts(cli_env, capsys):
    config = cli_env["config"]
    assert config.checkpoint_path("final").exists()
    assert config.predictions_path().exists()
    assert (cli_env["out"] / f"{config.fingerprint()}_config.yaml").exists()


def test_train_flag_overrides_change_the_cell(cli_env, capsys):
    assert main([
        "train", "--config", str(cli_env["config_path"]),
        "--seed", "1", "--policy", "u-ones",
    ]) == 0
    stdout = capsys.readouterr().out
    assert cli_env["config"].fingerprint() not in stdout
    assert "average AUC" in stdout


def test_ingest_stats(cli_env, capsys):
    assert main(["ingest-stats", str(cli_env["train_manifest"])]) == 0
    stdout = capsys.readouterr().out
    assert "20 records" in stdout
    assert "Cardiomegaly" in stdout


def test_ingest_stats_env_data_root(cli_env, capsys, monkeypatch):
    monkeypatch.setenv("CXRSCREEN_DATA_ROOT", str(cli_env["root"]))
    assert main(["ingest-stats", "train.csv"]) == 0
    assert "20 records" in capsys.readouterr().out


def test_ingest_stats_missing_manifest(capsys):
    assert main(["ingest-stats", "no_such_manifest.csv"]) == 2
    assert "error:" in capsys.readouterr().err


def test_grid_store_and_report(cli_env, capsys):
    store_path = cli_env["out"] / "results.jsonl"
    assert store_path.exists()
    assert main(["report", "--config", str(cli_env["config_path"])]) == 0
    stdout = capsys.readouterr().out
    assert "summary" in stdout
    assert (cli_env["out"] / "reports" / "summary.md").exists()
    assert (cli_env["out"] / "reports" / "timing.md").exists()


def test_grid_is_idempotent(cli_env, capsys):
    store_path = cli_env["out"] / "results.jsonl"
    size_before = store_path.stat().st_size
    assert main([
        "grid", "--config", str(cli_env["config_path"]),
        "--archs", "tiny8", "--protocols", "R,O", "--policies", "u-zeros",
    ]) == 0
    assert store_path.stat().st_size == size_before
    assert "done: 2" in capsys.readouterr().out


def test_evaluate_prints_per_class_aucs(cli_env, capsys):
    assert main([
        "evaluate",
        "--predictions", str(cli_env["config"].predictions_path()),
        "--manifest", str(cli_env["valid_manifest"]),
        "--label", "demo-model",
    ]) == 0
    stdout = capsys.readouterr().out
    assert "demo-model" in stdout
    assert "Cardiomegaly: AUC" in stdout


def test_ensemble_combines_prediction_tables(cli_env, capsys, tmp_path):
    from dataclasses import replace

    r_config = cli_env["config"]
    o_config = replace(r_config, protocol=AdaptationProtocol.OFF_THE_SHELF)
    members = f"{r_config.predictions_path()},{o_config.predictions_path()}"
    combined_path = tmp_path / "combined.csv"
    assert main([
        "ensemble", "--predictions", members,
        "--manifest", str(cli_env["valid_manifest"]),
        "--out", str(combined_path),
    ]) == 0
    assert combined_path.exists()
    assert "Ensemble (unbiased)" in capsys.readouterr().out

    assert main([
        "ensemble", "--predictions", members,
        "--manifest", str(cli_env["valid_manifest"]),
        "--weighted",
    ]) == 0
    assert "Ensemble (weighted)" in capsys.readouterr().out


def test_explain_writes_saliency_and_overlay(cli_env, capsys, tmp_path):
    config = cli_env["config"]
    image = cli_env["root"] / "images" / "valid_0.png"
    out_dir = tmp_path / "saliency"
    assert main([
        "explain",
        "--checkpoint", str(config.checkpoint_path("final")),
        "--image", str(image),
        "--class-name", "Cardiomegaly",
        "--size", "16", "--grid", "4", "--n-masks", "50",
        "--out", str(out_dir),
    ]) == 0
    assert (out_dir / "valid_0_Cardiomegaly.npy").exists()
    assert (out_dir / "valid_0_Cardiomegaly.png").exists()
    saliency = np.load(out_dir / "valid_0_Cardiomegaly.npy")
    assert saliency.shape == (16, 16)


def test_explain_with_annotation_reports_overlap(cli_env, capsys, tmp_path):
    config = cli_env["config"]
    image = cli_env["root"] / "images" / "valid_0.png"
    ann_root = tmp_path / "annotations"
    region = np.zeros((16, 16), dtype=np.uint8)
    region[4:12, 4:12] = 255
    (ann_root / "valid_0").mkdir(parents=True)
    Image.fromarray(region, mode="L").save(ann_root / "valid_0" / "Cardiomegaly.png")
    assert main([
        "explain",
        "--checkpoint", str(config.checkpoint_path("final")),
        "--image", str(image),
        "--class-name", "Cardiomegaly",
        "--size", "16", "--grid", "4", "--n-masks", "50",
        "--out", str(tmp_path / "sal"),
        "--annotation-root", str(ann_root),
        "--study-id", "valid_0",
    ]) == 0
    stdout = capsys.readouterr().out
    assert "pointing hit:" in stdout
    assert "mass fraction:" in stdout


def test_explain_rejects_unknown_class(cli_env, capsys):
    config = cli_env["config"]
    assert main([
        "explain",
        "--checkpoint", str(config.checkpoint_path("final")),
        "--image", str(cli_env["root"] / "images" / "valid_0.png"),
        "--class-name", "Bad Class",
        "--size", "16",
    ]) == 2
    assert "unknown class name" in capsys.readouterr().err


def test_missing_subcommand_is_a_usage_error(capsys):
    with pytest.raises(SystemExit):
        main([])
