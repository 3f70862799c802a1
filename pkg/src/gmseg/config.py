"""Run configuration: defaults, TOML parsing, environment overrides.

Every training default reproduces the reference protocol (batch 11,
eta0 0.001, 1000 epochs of 32 batches, poly power 0.9, dropout 0.4,
BN momentum 0.1, tau 0.999), so an empty config file trains the standard
setup. The GMDL_SEED environment variable overrides the config seed.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields, replace

from .augment import AugmentConfig
from .errors import InvalidConfigError, SchemaError

try:
    import tomllib  # Python >= 3.11
except ImportError:  # pragma: no cover - depends on interpreter version
    tomllib = None


@dataclass(frozen=True)
class TrainConfig:
    model: str = "aspp"
    base_width: int = 32
    branch_width: int = 32
    head_width: int = 32
    unet_depth: int = 3
    unet_base_width: int = 34
    batch_size: int = 11
    eta0: float = 0.001
    epochs: int = 1000
    batches_per_epoch: int = 32
    power: float = 0.9
    dropout: float = 0.4
    bn_momentum: float = 0.1
    dice_epsilon: float = 1.0
    tau: float = 0.999
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    augment_enabled: bool = True
    split_scheme: str = "subject"          # subject | slices
    split_counts: tuple = (15, 7, 8)       # train/val/test slices per volume
    val_per_site: int = 2
    seed: int = 0
    precision: str = "float32"
    data_paths: tuple = ()
    checkpoint_dir: str = "checkpoints"
    target_pixel_size: tuple = (0.25, 0.25)
    crop_size: tuple = (200, 200)

    def __post_init__(self):
        if self.model not in ("aspp", "unet"):
            raise InvalidConfigError(f"model must be aspp|unet, got {self.model!r}")
        if self.split_scheme not in ("subject", "slices"):
            raise InvalidConfigError(
                f"split_scheme must be subject|slices, got {self.split_scheme!r}")
        if self.precision not in ("float32", "float64"):
            raise InvalidConfigError(
                f"precision must be float32|float64, got {self.precision!r}")
        if min(self.batch_size, self.batches_per_epoch) < 1 or self.epochs < 0:
            raise InvalidConfigError("batch/epoch counts out of range")
        if self.eta0 <= 0 or self.power <= 0:
            raise InvalidConfigError("eta0 and power must be positive")
        if not (0.0 <= self.dropout < 1.0):
            raise InvalidConfigError(f"dropout must be in [0,1), got {self.dropout}")
        if not (0.0 <= self.tau <= 1.0):
            raise InvalidConfigError(f"tau must be in [0,1], got {self.tau}")


def _parse_flat_toml(text: str) -> dict:
    """Minimal parser for the flat config subset (used on Python 3.10).

    Supports [dotted.sections], `key = value` with strings, ints, floats,
    booleans and one-line arrays, and # comments.
    """
    root: dict = {}
    section = root
    for lineno, raw in enumerate(text.splitlines(), 1):
        line, quoted = "", False
        for ch in raw:
            if ch == '"':
                quoted = not quoted
            if ch == "#" and not quoted:
                break
            line += ch
        line = line.strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise SchemaError(f"line {lineno}: malformed section {raw!r}")
            section = root
            for part in line[1:-1].strip().split("."):
                section = section.setdefault(part.strip(), {})
            continue
        if "=" not in line:
            raise SchemaError(f"line {lineno}: expected key = value, got {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        section[key] = _parse_value(val, lineno)
    return root


def _parse_value(val: str, lineno: int):
    if val.startswith("[") and val.endswith("]"):
        inner = val[1:-1].strip()
        if not inner:
            return []
        return [_parse_value(v.strip(), lineno) for v in inner.split(",")]
    if val.startswith('"') and val.endswith('"') and len(val) >= 2:
        return val[1:-1]
    if val in ("true", "false"):
        return val == "true"
    try:
        return int(val)
    except ValueError:
        pass
    try:
        return float(val)
    except ValueError:
        raise SchemaError(f"line {lineno}: cannot parse value {val!r}") from None


def _load_toml(path) -> dict:
    if tomllib is not None:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    with open(path, "r") as fh:
        return _parse_flat_toml(fh.read())


_TUPLE_FIELDS = {"data_paths", "target_pixel_size", "crop_size", "scale_range",
                 "split_counts"}


def _apply(cls, defaults, overrides: dict, context: str):
    known = {f.name for f in fields(cls)}
    updates = {}
    for key, val in overrides.items():
        if key not in known:
            raise SchemaError(f"{context}: unknown key {key!r}")
        if key in _TUPLE_FIELDS:
            val = tuple(val)
        updates[key] = val
    return replace(defaults, **updates)


def load_train_config(path=None, overrides: dict | None = None) -> TrainConfig:
    """TrainConfig from an optional TOML file plus programmatic overrides.

    File layout: top-level keys for TrainConfig fields, an `[augment]`
    section for AugmentConfig fields. GMDL_SEED (environment) wins over
    both.
    """
    raw = _load_toml(path) if path is not None else {}
    if overrides:
        aug = {**raw.get("augment", {}), **overrides.pop("augment", {})} \
            if "augment" in raw or "augment" in overrides else raw.get("augment")
        raw = {**raw, **overrides}
        if aug is not None:
            raw["augment"] = aug
    aug_raw = raw.pop("augment", {})
    cfg = _apply(TrainConfig, TrainConfig(), raw, str(path or "<defaults>"))
    if aug_raw:
        cfg = replace(cfg, augment=_apply(AugmentConfig, cfg.augment, aug_raw,
                                          f"{path or '<defaults>'}[augment]"))
    env_seed = os.environ.get("GMDL_SEED")
    if env_seed is not None:
        try:
            cfg = replace(cfg, seed=int(env_seed))
        except ValueError:
            raise InvalidConfigError(f"GMDL_SEED must be an integer, got {env_seed!r}")
    return cfg
