"""Training configuration: TOML loading, overrides, validation."""

import os

import pytest

from gmseg.config import TrainConfig, load_train_config
from gmseg.errors import InvalidConfigError, SchemaError


def test_defaults_match_training_protocol():
    cfg = TrainConfig()
    assert cfg.batch_size == 11
    assert cfg.eta0 == 0.001
    assert cfg.epochs == 1000
    assert cfg.batches_per_epoch == 32
    assert cfg.power == 0.9
    assert cfg.dropout == 0.4
    assert cfg.bn_momentum == 0.1
    assert cfg.tau == 0.999
    assert cfg.split_counts == (15, 7, 8)
    assert cfg.target_pixel_size == (0.25, 0.25)
    assert cfg.crop_size == (200, 200)


def test_load_from_file(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text('model = "unet"\n'
                 'epochs = 5\n'
                 'eta0 = 0.01\n'
                 'data_paths = ["a", "b"]\n'
                 'crop_size = [64, 64]\n'
                 '\n'
                 '[augment]\n'
                 'rotation_max_deg = 5.0\n'
                 'flip_prob = 0.25\n')
    cfg = load_train_config(p)
    assert cfg.model == "unet"
    assert cfg.epochs == 5
    assert cfg.data_paths == ("a", "b")
    assert cfg.crop_size == (64, 64)
    assert cfg.augment.rotation_max_deg == 5.0
    assert cfg.augment.flip_prob == 0.25
    # untouched fields keep defaults
    assert cfg.batch_size == 11
    assert cfg.augment.elastic_alpha == 30.0


def test_unknown_key_rejected(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text("learning_rate = 0.1\n")
    with pytest.raises(SchemaError):
        load_train_config(p)


def test_unknown_augment_key_rejected(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text("[augment]\nwobble = 3\n")
    with pytest.raises(SchemaError):
        load_train_config(p)


def test_overrides_win_over_file(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text("epochs = 5\nseed = 1\n")
    cfg = load_train_config(p, overrides={"epochs": 9})
    assert cfg.epochs == 9 and cfg.seed == 1


def test_env_seed_wins(tmp_path, monkeypatch):
    p = tmp_path / "c.toml"
    p.write_text("seed = 1\n")
    monkeypatch.setenv("GMDL_SEED", "77")
    assert load_train_config(p).seed == 77
    monkeypatch.setenv("GMDL_SEED", "abc")
    with pytest.raises(InvalidConfigError):
        load_train_config(p)


def test_field_validation():
    with pytest.raises(InvalidConfigError):
        TrainConfig(batch_size=0)
    with pytest.raises(InvalidConfigError):
        TrainConfig(eta0=-1.0)
    with pytest.raises(InvalidConfigError):
        TrainConfig(model="resnet")
    with pytest.raises(InvalidConfigError):
        TrainConfig(dropout=1.5)
    with pytest.raises(InvalidConfigError):
        TrainConfig(precision="float16")
    with pytest.raises(InvalidConfigError):
        TrainConfig(split_scheme="random")


def test_defaults_without_file():
    cfg = load_train_config()
    assert cfg == TrainConfig()


def test_comments_and_strings(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text('# full line comment\n'
                 'checkpoint_dir = "out # not a comment"  # trailing\n'
                 'epochs = 3  # trailing too\n')
    cfg = load_train_config(p)
    assert cfg.checkpoint_dir == "out # not a comment"
    assert cfg.epochs == 3
