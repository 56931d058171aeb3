"""Config fingerprinting, YAML round-trips, and output layout."""

from __future__ import annotations

from dataclasses import replace

import pytest

from cxrscreen import (
    AdaptationProtocol,
    ExperimentConfig,
    Hyperparameters,
    LabelPolicy,
    load_config,
    save_config,
)
from cxrscreen.config import config_from_dict


def _config(**kw) -> ExperimentConfig:
    defaults = dict(
        arch="densenet121",
        protocol=AdaptationProtocol.FINE_TUNE,
        policy=LabelPolicy.U_ZEROS,
    )
    defaults.update(kw)
    return ExperimentConfig(**defaults)


def test_training_defaults():
    hyper = Hyperparameters()
    assert hyper.epochs == 6
    assert hyper.batch_size == 16
    assert hyper.learning_rate == 1e-4
    assert (hyper.beta1, hyper.beta2) == (0.9, 0.999)
    assert hyper.weight_decay == 1e-5
    config = _config()
    assert config.image_size == 320
    assert config.flip_probability == 0.5
    assert config.crop_scale_range == (0.8, 1.0)


def test_hyperparameter_validation():
    with pytest.raises(ValueError):
        Hyperparameters(epochs=0)
    with pytest.raises(ValueError):
        Hyperparameters(batch_size=-1)
    with pytest.raises(ValueError):
        Hyperparameters(learning_rate=0.0)
    with pytest.raises(ValueError):
        Hyperparameters(weight_decay=-1e-5)


def test_fingerprint_is_stable_and_field_sensitive():
    config = _config()
    assert config.fingerprint() == _config().fingerprint()
    assert len(config.fingerprint()) == 16
    for change in (
        {"arch": "resnet18"},
        {"protocol": AdaptationProtocol.RANDOM_INIT},
        {"policy": LabelPolicy.U_ONES},
        {"seed": 1},
        {"hyper": Hyperparameters(learning_rate=2e-4)},
        {"missing_as_negative": True},
    ):
        assert replace(config, **change).fingerprint() != config.fingerprint()


def test_dict_roundtrip():
    config = _config(seed=3, output_dir="out")
    back = config_from_dict(config.to_dict())
    assert back == config
    assert back.fingerprint() == config.fingerprint()


def test_yaml_roundtrip(tmp_path):
    config = _config(train_manifest="t.csv", eval_manifest="v.csv")
    path = tmp_path / "config.yaml"
    save_config(config, path)
    assert load_config(path) == config


def test_load_config_applies_overrides(tmp_path):
    config = _config()
    path = tmp_path / "config.yaml"
    save_config(config, path)
    loaded = load_config(
        path,
        overrides={
            "seed": 9,
            "protocol": "R",
            "hyper": {"learning_rate": 5e-3},
        },
    )
    assert loaded.seed == 9
    assert loaded.protocol is AdaptationProtocol.RANDOM_INIT
    assert loaded.hyper.learning_rate == 5e-3
    assert loaded.hyper.epochs == config.hyper.epochs  # untouched fields survive


def test_off_the_shelf_sibling_changes_protocol_only():
    config = _config(seed=4)
    sibling = config.off_the_shelf_sibling()
    assert sibling.protocol is AdaptationProtocol.OFF_THE_SHELF
    assert replace(sibling, protocol=config.protocol) == config


def test_output_layout(tmp_path):
    config = _config(output_dir=str(tmp_path))
    fp = config.fingerprint()
    assert config.checkpoint_path("final") == tmp_path / "checkpoints" / f"{fp}_final.pt"
    assert config.checkpoint_path("epoch3") == tmp_path / "checkpoints" / f"{fp}_epoch3.pt"
    assert config.predictions_path() == tmp_path / "predictions" / f"{fp}.csv"
    assert config.log_path() == tmp_path / "logs" / f"{fp}.jsonl"
