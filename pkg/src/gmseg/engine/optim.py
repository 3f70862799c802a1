"""Adam optimizer and the polynomial learning-rate decay policy."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from ..errors import ContractError, InvalidConfigError, NumericsError
from .tensor import Tensor


class AdamState:
    """Per-parameter first/second moment accumulators with bias correction.

    Defaults beta1=0.9, beta2=0.999, epsilon=1e-8 (the optimizer's standard
    constants). Moments are allocated lazily, positionally keyed to the
    parameter list, which must therefore be stable across steps.
    """

    def __init__(self, beta1: float = 0.9, beta2: float = 0.999,
                 epsilon: float = 1e-8):
        if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
            raise InvalidConfigError("betas must be in [0, 1)")
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.step_count = 0
        self.m: list[np.ndarray] = []
        self.v: list[np.ndarray] = []

    def _ensure(self, params) -> None:
        while len(self.m) < len(params):
            i = len(self.m)
            self.m.append(np.zeros_like(params[i].data))
            self.v.append(np.zeros_like(params[i].data))


def adam_step(params, grads, state: AdamState, lr: float,
              names=None) -> None:
    """One in-place, bias-corrected Adam update.

    `params` are Tensors; `grads` is a matching list of arrays (pass
    [p.grad for p in params] after backward). NaN gradients abort with the
    offending parameter named.
    """
    if lr <= 0:
        raise InvalidConfigError(f"learning rate must be positive, got {lr}")
    if len(params) != len(grads):
        raise ContractError("params and grads length mismatch")
    state._ensure(params)
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            continue
        if g.shape != p.data.shape:
            raise ContractError(f"grad shape {g.shape} != param shape {p.data.shape}")
        if not np.all(np.isfinite(g)):
            name = names[i] if names else f"param[{i}]"
            raise NumericsError(f"non-finite gradient for {name}")
        m, v = state.m[i], state.v[i]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        mhat = m / m.dtype.type(c1)
        vhat = v / v.dtype.type(c2)
        p.data -= p.data.dtype.type(lr) * mhat / (np.sqrt(vhat) + p.data.dtype.type(state.epsilon))


@dataclass(frozen=True)
class PolySchedule:
    """rate(n) = eta0 * (1 - n/N)^power; rate(0)=eta0, rate(N)=0."""
    eta0: float
    total_epochs: int
    power: float = 0.9

    def __post_init__(self):
        if self.eta0 <= 0 or self.total_epochs < 1 or self.power <= 0:
            raise InvalidConfigError("PolySchedule needs eta0>0, N>=1, power>0")


def poly_lr(schedule: PolySchedule, epoch: int) -> float:
    if epoch < 0:
        raise ContractError(f"epoch must be >= 0, got {epoch}")
    N = schedule.total_epochs
    if epoch > N:
        warnings.warn(f"epoch {epoch} beyond schedule end {N}; rate clamped to 0",
                      stacklevel=2)
        return 0.0
    return schedule.eta0 * (1.0 - epoch / N) ** schedule.power
