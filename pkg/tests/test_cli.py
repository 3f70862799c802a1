"""Command-line interface: end-to-end subcommand runs and exit codes."""

import numpy as np
import pytest

from gmseg import dataio
from gmseg.cli import main


@pytest.fixture()
def workspace(tmp_path):
    rng = np.random.default_rng(0)
    data = rng.integers(100, 1000, size=(3, 32, 32)).astype(np.int64)
    mask = np.zeros((3, 32, 32), np.uint8)
    mask[:, 10:20, 12:24] = 1
    data = (data + 3000 * mask.astype(np.int64)).astype(np.uint16)
    vol = dataio.Volume(data=data, pixel_size=(0.25, 0.25, 2.5),
                        subject="s1", site="site1", masks=[mask])
    vdir = tmp_path / "vol1"
    dataio.write_volume(vol, vdir)
    gold = dataio.Volume(data=mask, pixel_size=(0.25, 0.25, 2.5),
                         subject="s1")
    dataio.write_volume(gold, tmp_path / "gold")
    cfg = tmp_path / "cfg.toml"
    cfg.write_text(
        'model = "aspp"\n'
        'base_width = 1\nbranch_width = 1\nhead_width = 1\n'
        'epochs = 2\nbatches_per_epoch = 2\nbatch_size = 2\n'
        'split_scheme = "slices"\nsplit_counts = [2, 1, 0]\n'
        'augment_enabled = false\n'
        f'checkpoint_dir = "{tmp_path / "ckpts"}"\n'
        f'data_paths = ["{vdir}"]\n'
        'crop_size = [32, 32]\nseed = 3\n')
    return tmp_path, vdir, cfg


def test_full_workflow(workspace, capsys):
    tmp, vdir, cfg = workspace
    assert main(["train", "-c", str(cfg)]) == 0
    ckpt = tmp / "ckpts" / "final.ckpt"
    assert ckpt.exists()
    assert (tmp / "ckpts" / "train.log").exists()

    assert main(["info", str(ckpt)]) == 0
    out = capsys.readouterr().out
    assert "aspp" in out and "param_count" in out

    assert main(["predict", "-m", str(ckpt), "-i", str(vdir),
                 "-o", str(tmp / "pred"), "--tau", "0.5"]) == 0
    pred = dataio.read_volume(tmp / "pred")
    assert pred.data.shape == (3, 32, 32)

    assert main(["evaluate", "-p", str(tmp / "pred"), "-g", str(tmp / "gold"),
                 "-o", str(tmp / "report.csv")]) == 0
    assert (tmp / "report.csv").exists()
    assert (tmp / "report.json").exists()

    assert main(["augment-preview", "-c", str(cfg), "-i", str(vdir),
                 "-o", str(tmp / "prev")]) == 0
    assert list((tmp / "prev").iterdir())


def test_train_log_contains_repro_block(workspace, capsys):
    tmp, _, cfg = workspace
    assert main(["train", "-c", str(cfg)]) == 0
    log = (tmp / "ckpts" / "train.log").read_text()
    assert "seed" in log and "config_hash" in log
    assert "epoch 1 " in log and "loss" in log


def test_missing_config_is_usage_error(tmp_path, capsys):
    rc = main(["train", "-c", str(tmp_path / "nope.toml")])
    assert rc != 0


def test_bad_config_key_exit_code(tmp_path, capsys):
    p = tmp_path / "bad.toml"
    p.write_text("not_a_field = 1\n")
    assert main(["train", "-c", str(p)]) == 1


def test_predict_missing_checkpoint(tmp_path, workspace, capsys):
    tmp, vdir, _ = workspace
    rc = main(["predict", "-m", str(tmp_path / "missing.ckpt"),
               "-i", str(vdir), "-o", str(tmp_path / "out")])
    assert rc == 2


def test_evaluate_geometry_mismatch(workspace, tmp_path, capsys):
    tmp, vdir, cfg = workspace
    other = dataio.Volume(data=np.zeros((2, 16, 16), np.uint8),
                          pixel_size=(0.25, 0.25, 2.5))
    dataio.write_volume(other, tmp_path / "small")
    rc = main(["evaluate", "-p", str(tmp_path / "small"),
               "-g", str(tmp / "gold"), "-o", str(tmp_path / "r.csv")])
    assert rc == 2
