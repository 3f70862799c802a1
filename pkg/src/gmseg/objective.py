"""Dice loss and prediction thresholding.

loss(p, r) = -(2*sum(p*r) + eps) / (sum(p) + sum(r) + eps)

The epsilon stabilizer keeps the empty-vs-empty case finite (and exactly
-1, which is why the default is 1.0 rather than a tiny constant: it only
matters when both sums are near zero).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .engine import Tensor
from .errors import ContractError, DimensionError, InvalidConfigError


@dataclass(frozen=True)
class DiceLossParams:
    epsilon: float = 1.0

    def __post_init__(self):
        if self.epsilon <= 0:
            raise InvalidConfigError(f"epsilon must be > 0, got {self.epsilon}")


def dice_loss(pred: Tensor, gold: Tensor,
              params: DiceLossParams = DiceLossParams()) -> Tensor:
    """Negated soft Dice overlap, in [-1, 0); differentiable w.r.t. pred."""
    if pred.shape != gold.shape:
        raise DimensionError(f"pred {pred.shape} vs gold {gold.shape}")
    p, r = pred.data, gold.data
    if p.min() < -1e-6 or p.max() > 1 + 1e-6:
        raise ContractError("predictions must lie in [0, 1]")
    if np.any((r != 0) & (r != 1)):
        raise ContractError("gold mask must be binary")
    eps = pred.dtype.type(params.epsilon)
    inter = (pred * gold).sum()
    denom = pred.sum() + gold.sum() + eps
    return -((inter * pred.dtype.type(2.0) + eps) / denom)


def threshold_binarize(pred: np.ndarray, tau: float) -> np.ndarray:
    """1 where pred >= tau else 0 (inclusive comparison)."""
    if not (0.0 <= tau <= 1.0):
        raise InvalidConfigError(f"tau must be in [0, 1], got {tau}")
    return (np.asarray(pred) >= tau).astype(np.uint8)
