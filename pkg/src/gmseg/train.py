"""Training loop: split, per-epoch batch loop, validation, checkpoints.

One epoch = `batches_per_epoch` optimizer steps. Each step samples a
batch of (slice, rater) pairs with replacement, augments each pair with a
per-sample RNG stream split off the master seed by counter, and applies
one Adam update at the polynomially decayed learning rate (decay indexed
by epoch). Validation DSC (at tau) is computed every epoch; the best
checkpoint is the highest validation DSC with ties going to the later
epoch. Fixed seed + fixed data is bit-for-bit reproducible.
"""

from __future__ import annotations

import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .config import TrainConfig
from .dataio import sample_batch, split_by_subject, split_by_slices, volume_slices
from .augment import augment_pair
from .engine import Tensor
from .engine.optim import AdamState, PolySchedule, adam_step, poly_lr
from .errors import DegenerateInputError, NumericsError
from .checkpoint import save_checkpoint
from .models import AsppConfig, UnetConfig, Network, build_aspp, build_unet
from .objective import DiceLossParams, dice_loss, threshold_binarize


@dataclass
class TrainResult:
    network: Network
    history: list = field(default_factory=list)  # per-epoch dicts
    best_epoch: int = -1
    best_val_dsc: float = float("nan")
    best_path: str = ""
    final_path: str = ""


def build_network(cfg: TrainConfig) -> Network:
    dtype = np.float32 if cfg.precision == "float32" else np.float64
    if cfg.model == "aspp":
        mc = AsppConfig(base_width=cfg.base_width,
                        branch_width=cfg.branch_width,
                        head_width=cfg.head_width,
                        dropout_rate=cfg.dropout,
                        bn_momentum=cfg.bn_momentum)
        return build_aspp(mc, seed=cfg.seed, dtype=dtype)
    mc = UnetConfig(depth=cfg.unet_depth, base_width=cfg.unet_base_width,
                    dropout_rate=cfg.dropout, bn_momentum=cfg.bn_momentum)
    return build_unet(mc, seed=cfg.seed, dtype=dtype)


def split_volumes(volumes, cfg: TrainConfig):
    """(train_slices, val_slices) according to the configured scheme."""
    if cfg.split_scheme == "subject":
        train_vols, val_vols = split_by_subject(volumes, cfg.val_per_site)
        train = [s for v in train_vols for s in volume_slices(v)]
        val = [s for v in val_vols for s in volume_slices(v)]
    else:
        train, val = [], []
        for v in volumes:
            t, vl, _test = split_by_slices(v, cfg.split_counts)
            records = volume_slices(v)
            train.extend(records[i] for i in t)
            val.extend(records[i] for i in vl)
    return train, val


def _validation_dsc(network: Network, val_slices, tau: float,
                    dtype) -> float:
    """Mean DSC over (slice, rater) pairs; NaN when nothing comparable."""
    network.set_mode("eval")
    scores = []
    for s in val_slices:
        if not s["masks"]:
            continue
        x = Tensor(s["image"][None, None].astype(dtype))
        prob = network.forward(x).data[0, 0]
        pred = threshold_binarize(prob, tau)
        for gold in s["masks"]:
            denom = pred.sum() + gold.sum()
            if denom == 0:
                continue
            scores.append(2.0 * float((pred & (gold > 0)).sum()) / float(denom))
    network.set_mode("train")
    return float(np.mean(scores)) if scores else float("nan")


def train_model(volumes, cfg: TrainConfig, log=print,
                train_slices=None, val_slices=None) -> TrainResult:
    """Train on preprocessed volumes (or explicit slice lists).

    Writes `best.ckpt` / `final.ckpt` under cfg.checkpoint_dir and logs
    one line per epoch: `epoch n lr <eta> loss <L> val_dsc <D>`.
    """
    if train_slices is None:
        train_slices, val_slices = split_volumes(volumes, cfg)
    if not train_slices:
        raise DegenerateInputError("no training slices after split")
    val_slices = val_slices or []

    network = build_network(cfg)
    network.reseed_dropout(cfg.seed)
    params = [p for _, p in network.named_parameters()]
    opt = AdamState()
    sched = PolySchedule(cfg.eta0, max(cfg.epochs, 1), cfg.power)
    loss_params = DiceLossParams(cfg.dice_epsilon)
    dtype = network.dtype
    rng = np.random.default_rng(cfg.seed)
    sample_counter = 0

    os.makedirs(cfg.checkpoint_dir, exist_ok=True)
    best_path = os.path.join(cfg.checkpoint_dir, "best.ckpt")
    final_path = os.path.join(cfg.checkpoint_dir, "final.ckpt")
    result = TrainResult(network=network, best_path=best_path,
                         final_path=final_path)

    for epoch in range(cfg.epochs):
        lr = poly_lr(sched, epoch)
        epoch_losses = []
        t0 = time.perf_counter()
        for _ in range(cfg.batches_per_epoch):
            batch = sample_batch(train_slices, cfg.batch_size, rng)
            xs, ys = [], []
            for s in batch:
                img, msk = s.image, s.mask
                if cfg.augment_enabled:
                    srng = np.random.default_rng([cfg.seed, sample_counter])
                    img, msk = augment_pair(img, msk, cfg.augment, srng)
                sample_counter += 1
                xs.append(img.astype(dtype))
                ys.append(msk.astype(dtype))
            x = Tensor(np.stack(xs)[:, None])
            y = Tensor(np.stack(ys)[:, None])
            for p in params:
                p.grad = None
            loss = dice_loss(network.forward(x), y, loss_params)
            lval = loss.item()
            if math.isnan(lval) or math.isinf(lval):
                raise NumericsError(
                    f"non-finite loss {lval} at epoch {epoch} "
                    f"(lr {lr:.3e}, step {opt.step_count})")
            loss.backward()
            adam_step(params, [p.grad for p in params], opt, lr)
            epoch_losses.append(lval)

        val_dsc = _validation_dsc(network, val_slices, cfg.tau, dtype)
        mean_loss = float(np.mean(epoch_losses))
        entry = {"epoch": epoch, "lr": lr, "loss": mean_loss,
                 "val_dsc": val_dsc, "seconds": time.perf_counter() - t0}
        result.history.append(entry)
        log(f"epoch {epoch} lr {lr:.6f} loss {mean_loss:.6f} "
            f"val_dsc {val_dsc:.4f}")
        if not math.isnan(val_dsc) and (result.best_epoch < 0
                                        or val_dsc >= result.best_val_dsc):
            result.best_epoch = epoch
            result.best_val_dsc = val_dsc
            save_checkpoint(network, opt, best_path)

    save_checkpoint(network, opt, final_path)
    if result.best_epoch < 0:  # no usable validation: best = final state
        save_checkpoint(network, opt, best_path)
    return result


def training_dsc(network: Network, slices, tau: float) -> float:
    """Mean DSC of the current network over given slices (eval mode)."""
    return _validation_dsc(network, slices, tau, network.dtype)
