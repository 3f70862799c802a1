"""Command-line interface.

Subcommands: train, predict, evaluate, info, augment-preview.
Exit codes: 0 success, 1 usage/config error, 2 data/format error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import dataio
from .augment import augment_pair
from .checkpoint import load_checkpoint
from .config import load_train_config
from .errors import (DegenerateInputError, GmsegError, IntegrityError,
                     InvalidConfigError, NumericsError, SchemaError,
                     UnsupportedFormatError)
from .metrics import MetricReport, evaluate_volume, write_report_csv, \
    write_report_json
from .models import param_count
from .predict import predict_volume

_USAGE_ERRORS = (InvalidConfigError, SchemaError)


def _config_hash(cfg) -> str:
    blob = json.dumps(asdict(cfg), sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def _log_repro_block(cfg, log) -> None:
    log(f"config_hash {_config_hash(cfg)} seed {cfg.seed} "
        f"model {cfg.model} precision {cfg.precision}")
    for key, val in sorted(asdict(cfg).items()):
        log(f"config {key} = {val}")


def cmd_train(args) -> int:
    from .train import train_model  # deferred: heavy import chain

    cfg = load_train_config(args.config)
    if args.data:
        cfg = load_train_config(args.config, {"data_paths": tuple(args.data)})
    log_path = Path(cfg.checkpoint_dir) / "train.log"
    os.makedirs(cfg.checkpoint_dir, exist_ok=True)
    with open(log_path, "w") as fh:
        def log(line):
            print(line)
            fh.write(line + "\n")
            fh.flush()

        _log_repro_block(cfg, log)
        volumes = [dataio.preprocess_volume(dataio.read_volume(p),
                                            cfg.target_pixel_size,
                                            cfg.crop_size)
                   for p in cfg.data_paths]
        if not volumes:
            raise InvalidConfigError("no data_paths configured")
        result = train_model(volumes, cfg, log=log)
        log(f"best_epoch {result.best_epoch} "
            f"best_val_dsc {result.best_val_dsc:.4f}")
        log(f"checkpoints {result.best_path} {result.final_path}")
    return 0


def cmd_predict(args) -> int:
    network, _opt = load_checkpoint(args.model)
    vol = dataio.read_volume(args.input)
    pred = predict_volume(network, vol, tau=args.tau)
    dataio.write_volume(pred, args.output)
    print(f"wrote {args.output} ({pred.data.shape[0]} slices, "
          f"{int(pred.data.sum())} foreground px)")
    return 0


def cmd_evaluate(args) -> int:
    pred = dataio.read_volume(args.pred)
    pred_mask = (pred.data > 0).astype(np.uint8)
    gold_path = Path(args.gold)
    gold_files = sorted(p for p in gold_path.iterdir()) \
        if gold_path.is_dir() and not (gold_path / "volume.json").exists() \
        else [gold_path]
    masks, missing = {}, 0
    for i, p in enumerate(gold_files, 1):
        try:
            gv = dataio.read_volume(p)
        except GmsegError:
            missing += 1
            continue
        if gv.masks:
            for j, m in enumerate(gv.masks, 1):
                masks[f"rater{len(masks) + 1}"] = m
        else:
            masks[f"rater{len(masks) + 1}"] = (gv.data > 0).astype(np.uint8)
    if not masks:
        raise DegenerateInputError(f"no readable gold masks under {args.gold}")
    if missing:
        print(f"note: skipped {missing} unreadable gold file(s)")
    for name, m in masks.items():
        if m.shape != pred_mask.shape:
            raise UnsupportedFormatError(
                f"geometry mismatch: pred {pred_mask.shape} vs "
                f"{name} {m.shape}")
    report = evaluate_volume(pred_mask, masks, pred.pixel_size,
                             subject=pred.subject or Path(args.pred).stem,
                             distance_mode=args.distance_mode)
    out = Path(args.output)
    if out.suffix == ".json":
        write_report_json(report, out)
    else:
        write_report_csv(report, out)
        write_report_json(report, out.with_suffix(".json"))
    agg = report.aggregates()
    for k in ("DSC", "MSD", "HSD"):
        print(f"{k} mean {agg[k]['mean']:.4f} std {agg[k]['std']:.4f}")
    return 0


def cmd_info(args) -> int:
    path = Path(args.file)
    if path.suffix == ".toml":
        cfg = load_train_config(path)
        print(f"train config ({path})")
        print(f"  model {cfg.model} seed {cfg.seed} "
              f"config_hash {_config_hash(cfg)}")
        for key, val in sorted(asdict(cfg).items()):
            print(f"  {key} = {val}")
        return 0
    network, opt = load_checkpoint(path)
    cfg = network.config
    print(f"checkpoint ({path})")
    print(f"  model {network.kind} dtype {network.dtype.name} "
          f"seed {network.seed}")
    for key, val in sorted(asdict(cfg).items()):
        print(f"  {key} = {val}")
    print(f"  param_count {param_count(network)}")
    print(f"  optimizer {'present, step ' + str(opt.step_count) if opt else 'absent'}")
    return 0


def cmd_augment_preview(args) -> int:
    cfg = load_train_config(args.config) if args.config else load_train_config()
    vol = dataio.preprocess_volume(dataio.read_volume(args.input),
                                   cfg.target_pixel_size, cfg.crop_size)
    if not vol.masks:
        raise DegenerateInputError("input volume has no masks to preview")
    os.makedirs(args.output, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    for i in range(min(vol.data.shape[0], args.count)):
        img, msk = vol.data[i], vol.masks[0][i]
        aug_img, aug_msk = augment_pair(img, msk, cfg.augment, rng)

        def to_u16(a):
            a = a.astype(np.float64)
            span = a.max() - a.min()
            return ((a - a.min()) / (span if span else 1.0)
                    * 65535).astype(">u2")

        for tag, arr in (("before", img), ("after", aug_img),
                         ("before_mask", msk.astype(np.int64) * 65535),
                         ("after_mask", aug_msk.astype(np.int64) * 65535)):
            out = Path(args.output) / f"slice{i:03d}_{tag}.pgm"
            dataio._write_pgm(out, to_u16(arr) if "mask" not in tag
                              else arr.astype(">u2"))
    print(f"wrote previews to {args.output}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gmseg",
                                 description="Spinal cord gray matter "
                                             "segmentation toolkit")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a config file")
    p.add_argument("-c", "--config", required=True)
    p.add_argument("--data", nargs="*", help="override config data_paths")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="segment a volume with a checkpoint")
    p.add_argument("-m", "--model", required=True)
    p.add_argument("-i", "--input", required=True)
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--tau", type=float, default=0.999)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="17-metric report vs gold masks")
    p.add_argument("-p", "--pred", required=True)
    p.add_argument("-g", "--gold", required=True)
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--distance-mode", choices=("slice", "volume"),
                   default="slice")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("info", help="summarize a checkpoint or config")
    p.add_argument("file")
    p.set_defaults(func=cmd_info)

    p = sub.add_parser("augment-preview",
                       help="write before/after augmentation PGM pairs")
    p.add_argument("-c", "--config")
    p.add_argument("-i", "--input", required=True)
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--count", type=int, default=5)
    p.set_defaults(func=cmd_augment_preview)
    return ap


def main(argv=None) -> int:
    ap = _build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return 1 if e.code not in (0, None) else 0
    try:
        return args.func(args)
    except _USAGE_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except NumericsError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 3
    except (GmsegError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
