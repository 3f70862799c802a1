"""Batch normalization and inverted dropout."""

from __future__ import annotations

import numpy as np

from ..errors import DimensionError, InvalidConfigError
from . import ckernels
from .tensor import Tensor


class BatchNormState:
    """Per-channel affine normalization with running statistics.

    Running stats update only in training mode:
        running <- (1 - momentum) * running + momentum * batch_stat
    Variance is the biased (ddof=0) batch variance, used consistently for
    normalization and for the running estimate.
    """

    def __init__(self, channels: int, momentum: float = 0.1,
                 epsilon: float = 1e-5, dtype=np.float32):
        if channels < 1:
            raise InvalidConfigError("channels must be positive")
        if not (0.0 < momentum <= 1.0):
            raise InvalidConfigError(f"momentum must be in (0, 1], got {momentum}")
        self.channels = channels
        self.gamma = Tensor(np.ones(channels, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.momentum = momentum
        self.epsilon = epsilon
        self.training_mode = True



def _batch_stats(d: np.ndarray):
    """Per-channel mean and biased variance over (batch, H, W)."""
    if ckernels.available() and d.flags.c_contiguous:
        mu = np.empty(d.shape[1], dtype=d.dtype)
        var = np.empty(d.shape[1], dtype=d.dtype)
        ckernels.bn_stats(d, mu, var)
        return mu, var
    return d.mean(axis=(0, 2, 3)), d.var(axis=(0, 2, 3))


def batchnorm2d(x: Tensor, state: BatchNormState) -> Tensor:
    if x.data.ndim != 4:
        raise DimensionError("batchnorm2d expects (B,C,H,W)")
    if x.shape[1] != state.channels:
        raise DimensionError(
            f"input has {x.shape[1]} channels, state has {state.channels}")
    gamma, beta = state.gamma, state.beta
    d = x.data
    if state.training_mode:
        mu, var = _batch_stats(d)
        phi = d.dtype.type(state.momentum)
        state.running_mean = ((1 - phi) * state.running_mean + phi * mu).astype(d.dtype)
        state.running_var = ((1 - phi) * state.running_var + phi * var).astype(d.dtype)
    else:
        mu = state.running_mean.astype(d.dtype)
        var = state.running_var.astype(d.dtype)
    inv = 1.0 / np.sqrt(var + d.dtype.type(state.epsilon))
    xhat = d - mu.reshape(1, -1, 1, 1)
    xhat *= inv.reshape(1, -1, 1, 1)
    y = xhat * gamma.data.reshape(1, -1, 1, 1)
    y += beta.data.reshape(1, -1, 1, 1)

    out = Tensor._node(y, (x, gamma, beta), "batchnorm2d")
    if not out.requires_grad:
        return out

    training = state.training_mode

    def bwd(g):
        dbeta = g.sum(axis=(0, 2, 3))
        dgamma = np.einsum("bchw,bchw->c", g, xhat)
        if gamma.requires_grad:
            gamma.accumulate_grad(dgamma, owned=True)
        if beta.requires_grad:
            beta.accumulate_grad(dbeta, owned=True)
        if x.requires_grad:
            gi = (gamma.data * inv).reshape(1, -1, 1, 1)
            if training:
                n = g.dtype.type(g.shape[0] * g.shape[2] * g.shape[3])
                dx = g * n
                dx -= dbeta.reshape(1, -1, 1, 1)
                dx -= xhat * dgamma.reshape(1, -1, 1, 1)
                dx *= gi / n
            else:
                dx = gi * g
            x.accumulate_grad(dx, owned=True)

    out._backward = bwd
    return out


def bn_relu_dropout(x: Tensor, state: BatchNormState, rate: float,
                    training: bool, rng: np.random.Generator) -> Tensor:
    """batchnorm2d -> relu -> dropout as one fused node.

    Produces bit-identical values to composing the three ops (same
    per-element expressions, same dropout stream) while touching memory a
    fraction as often. Falls back to the composed ops when the C kernels
    are unavailable.
    """
    from .tensor import relu

    if not ckernels.available():
        return dropout(relu(batchnorm2d(x, state)), rate, training, rng)
    if x.data.ndim != 4:
        raise DimensionError("bn_relu_dropout expects (B,C,H,W)")
    if x.shape[1] != state.channels:
        raise DimensionError(
            f"input has {x.shape[1]} channels, state has {state.channels}")
    if not (0.0 <= rate < 1.0):
        raise InvalidConfigError(f"dropout rate must be in [0, 1), got {rate}")

    gamma, beta = state.gamma, state.beta
    d = x.data
    if state.training_mode:
        mu, var = _batch_stats(d)
        phi = d.dtype.type(state.momentum)
        state.running_mean = ((1 - phi) * state.running_mean + phi * mu).astype(d.dtype)
        state.running_var = ((1 - phi) * state.running_var + phi * var).astype(d.dtype)
    else:
        mu = state.running_mean.astype(d.dtype)
        var = state.running_var.astype(d.dtype)
    inv = (1.0 / np.sqrt(var + d.dtype.type(state.epsilon))).astype(d.dtype)
    mu = np.ascontiguousarray(mu, dtype=d.dtype)

    active = training and rate > 0.0
    if active:
        seed = int(rng.integers(1, np.iinfo(np.int64).max))
        scale = 1.0 / (1.0 - rate)
    else:
        seed, scale = 0, 1.0
    y = np.empty_like(d)
    m3 = np.empty_like(d)
    ckernels.bnrd_fwd(d, mu, inv, gamma.data, beta.data, y, m3,
                      rate if active else -1.0, scale, seed)

    out = Tensor._node(y, (x, gamma, beta), "bn_relu_drop")
    if not out.requires_grad:
        return out

    batch_stats = state.training_mode

    def bwd(g):
        s1 = np.empty_like(gamma.data)
        s2 = np.empty_like(gamma.data)
        ckernels.bnrd_bwd_sums(g, m3, d, mu, inv, s1, s2)
        if beta.requires_grad:
            beta.accumulate_grad(s1.copy(), owned=True)
        if gamma.requires_grad:
            gamma.accumulate_grad(s2.copy(), owned=True)
        if x.requires_grad:
            if batch_stats:
                n = d.dtype.type(g.shape[0] * g.shape[2] * g.shape[3])
                coef = gamma.data * inv / n
            else:
                n = d.dtype.type(1.0)
                coef = gamma.data * inv
            dx = np.empty_like(g)
            ckernels.bnrd_bwd_dx(g, m3, d, mu, inv, s1, s2, coef, dx, n,
                                 1 if batch_stats else 0)
            x.accumulate_grad(dx, owned=True)

    out._backward = bwd
    return out


def dropout(x: Tensor, rate: float, training: bool, rng: np.random.Generator) -> Tensor:
    """Inverted dropout: survivors scaled by 1/(1-rate); eval is identity."""
    if not (0.0 <= rate < 1.0):
        raise InvalidConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    scale = x.dtype.type(1.0 / (1.0 - rate))
    if ckernels.available():
        seed = int(rng.integers(1, np.iinfo(np.int64).max))
        y = np.empty_like(x.data)
        mask = np.empty_like(x.data)
        ckernels.dropout(x.data, y, mask, rate, scale, seed)
    else:
        mask = np.where(rng.random(x.shape) >= rate, scale, x.dtype.type(0))
        mask = mask.astype(x.dtype)
        y = x.data * mask
    out = Tensor._node(y, (x,), "dropout")
    if out.requires_grad:
        out._backward = lambda g: x.accumulate_grad(g * mask, owned=True)
    return out
