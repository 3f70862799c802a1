"""Network construction: the dilated multi-branch segmentation model and
the 14-layer encoder-decoder baseline.

Both models are fully convolutional, sigmoid-headed, single-channel-out.
The dilated model preserves spatial size end to end (same padding, stride
1, no pooling); the baseline pools 3 times and restores resolution with
nearest-neighbor upsampling plus skip concatenations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .engine import (BatchNormState, ConvSpec, Tensor, bn_relu_dropout,
                     concat_channels, conv2d, global_avg_pool_broadcast,
                     maxpool2, sigmoid, upsample_nearest2)
from .errors import DimensionError, InvalidConfigError


@dataclass(frozen=True)
class AsppConfig:
    base_width: int = 32          # channels of the stem blocks (a)/(b)
    branch_width: int = 32        # channels of each parallel conv branch
    head_width: int = 32          # channels of the first 1x1 head layer
    dropout_rate: float = 0.4
    dilations: tuple = (6, 12, 18, 24)
    stem_dilation: int = 2        # block (b) dilation
    bn_momentum: float = 0.1

    def __post_init__(self):
        if min(self.base_width, self.branch_width, self.head_width) < 1:
            raise InvalidConfigError("widths must be positive")
        if len(self.dilations) != 4:
            raise InvalidConfigError("exactly 4 dilated-branch rates required")


@dataclass(frozen=True)
class UnetConfig:
    depth: int = 3                # number of pooling stages
    base_width: int = 34
    dropout_rate: float = 0.4
    bn_momentum: float = 0.1

    def __post_init__(self):
        if self.depth < 1 or self.base_width < 1:
            raise InvalidConfigError("depth and base_width must be positive")


class ConvUnit:
    """conv -> [BN -> ReLU -> dropout] with He-uniform fan-in init."""

    def __init__(self, name, cin, cout, k, rng, dtype, dilation=1,
                 normed=True, drop=0.4, bn_momentum=0.1):
        self.name = name
        self.spec = ConvSpec(cin, cout, k, k, dilation=dilation, padding="same")
        fan_in = cin * k * k
        bound = np.sqrt(6.0 / fan_in)
        w = rng.uniform(-bound, bound, size=self.spec.weight_shape)
        self.weight = Tensor(w.astype(dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(cout, dtype=dtype), requires_grad=True)
        self.bn = BatchNormState(cout, momentum=bn_momentum, dtype=dtype) if normed else None
        self.drop = drop if normed else 0.0

    def forward(self, x, training, rng):
        y = conv2d(x, self.spec, self.weight, self.bias)
        if self.bn is not None:
            self.bn.training_mode = training
            y = bn_relu_dropout(y, self.bn, self.drop, training, rng)
        return y

    def named_tensors(self):
        yield self.name + ".weight", self.weight
        yield self.name + ".bias", self.bias
        if self.bn is not None:
            yield self.name + ".gamma", self.bn.gamma
            yield self.name + ".beta", self.bn.beta

    def named_buffers(self):
        if self.bn is not None:
            yield self.name + ".running_mean", self.bn
            yield self.name + ".running_var", self.bn


class Network:
    """A built model: ordered units, named parameter table, train/eval mode."""

    def __init__(self, kind, config, seed, dtype):
        self.kind = kind
        self.config = config
        self.seed = int(seed)
        self.dtype = np.dtype(dtype)
        self.mode = "train"
        self.units: list[ConvUnit] = []
        self._rng = np.random.default_rng(self.seed)

    def set_mode(self, mode: str) -> None:
        if mode not in ("train", "eval"):
            raise InvalidConfigError(f"mode must be 'train' or 'eval', got {mode!r}")
        self.mode = mode

    def reseed_dropout(self, seed: int) -> None:
        self._rng = np.random.default_rng(int(seed))

    def named_parameters(self):
        out = []
        for u in self.units:
            out.extend(u.named_tensors())
        return out

    def named_buffers(self):
        out = []
        for u in self.units:
            out.extend(u.named_buffers())
        return out

    def forward(self, batch: Tensor) -> Tensor:
        raise NotImplementedError


class AsppNetwork(Network):
    def __init__(self, config: AsppConfig, seed=0, dtype=np.float32):
        super().__init__("aspp", config, seed, dtype)
        c = config
        rng, dt = self._rng, self.dtype
        mk = lambda name, ci, co, k, r=1, normed=True: ConvUnit(
            name, ci, co, k, rng, dt, dilation=r, normed=normed,
            drop=c.dropout_rate, bn_momentum=c.bn_momentum)
        B, R, H = c.base_width, c.branch_width, c.head_width
        self.stem = [mk("stem0", 1, B, 3), mk("stem1", B, B, 3),
                     mk("stem2", B, B, 3, c.stem_dilation),
                     mk("stem3", B, B, 3, c.stem_dilation)]
        self.branches = [[mk("br0u0", B, R, 1), mk("br0u1", R, R, 1)]]
        for i, r in enumerate(c.dilations):
            self.branches.append([mk(f"br{i+1}u0", B, R, 3, r),
                                  mk(f"br{i+1}u1", R, R, 3, r)])
        concat_ch = 5 * R + B
        self.head = [mk("head0", concat_ch, H, 1)]
        self.out = mk("out", H, 1, 1, normed=False)
        for group in (self.stem, *self.branches, self.head, [self.out]):
            self.units.extend(group)

    def forward(self, batch: Tensor) -> Tensor:
        if batch.data.ndim != 4 or batch.shape[1] != 1:
            raise DimensionError(f"expected (B,1,H,W), got {batch.shape}")
        training = self.mode == "train"
        rng = self._rng
        x = batch
        for u in self.stem:
            x = u.forward(x, training, rng)
        feats = []
        for branch in self.branches:
            y = x
            for u in branch:
                y = u.forward(y, training, rng)
            feats.append(y)
        feats.append(global_avg_pool_broadcast(x))
        y = concat_channels(feats)
        for u in self.head:
            y = u.forward(y, training, rng)
        return sigmoid(self.out.forward(y, training, rng))


class UnetNetwork(Network):
    def __init__(self, config: UnetConfig, seed=0, dtype=np.float32):
        super().__init__("unet", config, seed, dtype)
        c = config
        rng, dt = self._rng, self.dtype
        mk = lambda name, ci, co, k=3: ConvUnit(
            name, ci, co, k, rng, dt, drop=c.dropout_rate,
            bn_momentum=c.bn_momentum)
        w, d = c.base_width, c.depth
        self.enc = []
        prev = 1
        for i in range(d):
            ch = w * 2 ** i
            self.enc.append([mk(f"enc{i}a", prev, ch), mk(f"enc{i}b", ch, ch)])
            prev = ch
        self.bottleneck = mk("bottleneck", prev, prev)
        self.dec = []
        for i in range(d - 1, -1, -1):
            skip = w * 2 ** i
            ch = w * 2 ** max(i - 1, 0)
            self.dec.append([mk(f"dec{i}a", prev + skip, ch), mk(f"dec{i}b", ch, ch)])
            prev = ch
        self.out = ConvUnit("out", prev, 1, 1, rng, dt, normed=False)
        for block in self.enc:
            self.units.extend(block)
        self.units.append(self.bottleneck)
        for block in self.dec:
            self.units.extend(block)
        self.units.append(self.out)

    def forward(self, batch: Tensor) -> Tensor:
        if batch.data.ndim != 4 or batch.shape[1] != 1:
            raise DimensionError(f"expected (B,1,H,W), got {batch.shape}")
        training = self.mode == "train"
        rng = self._rng
        d = self.config.depth
        # symmetric pad to a multiple of 2^depth, cropped back at the end
        m = 2 ** d
        B, _, H, W = batch.shape
        ph, pw = (-H) % m, (-W) % m
        pt, pl = ph // 2, pw // 2
        if ph or pw:
            padded = np.zeros((B, 1, H + ph, W + pw), dtype=batch.data.dtype)
            padded[:, :, pt:pt + H, pl:pl + W] = batch.data
            src = Tensor._node(padded, (batch,), "pad")
            if src.requires_grad:
                src._backward = lambda g: batch.accumulate_grad(
                    np.ascontiguousarray(g[:, :, pt:pt + H, pl:pl + W]))
        else:
            src = batch
        x = src
        skips = []
        for block in self.enc:
            for u in block:
                x = u.forward(x, training, rng)
            skips.append(x)
            x = maxpool2(x)
        x = self.bottleneck.forward(x, training, rng)
        for block, skip in zip(self.dec, reversed(skips)):
            x = upsample_nearest2(x)
            x = concat_channels([x, skip])
            for u in block:
                x = u.forward(x, training, rng)
        y = sigmoid(self.out.forward(x, training, rng))
        if ph or pw:
            cropped = np.ascontiguousarray(y.data[:, :, pt:pt + H, pl:pl + W])
            out = Tensor._node(cropped, (y,), "crop")
            if out.requires_grad:
                def bwd(g):
                    full = np.zeros_like(y.data)
                    full[:, :, pt:pt + H, pl:pl + W] = g
                    y.accumulate_grad(full)
                out._backward = bwd
            return out
        return y


def build_aspp(config: AsppConfig, seed: int = 0, dtype=np.float32) -> AsppNetwork:
    return AsppNetwork(config, seed=seed, dtype=dtype)


def build_unet(config: UnetConfig, seed: int = 0, dtype=np.float32) -> UnetNetwork:
    return UnetNetwork(config, seed=seed, dtype=dtype)


def param_count(network: Network) -> int:
    """Number of trainable scalars (conv weights/biases, BN gamma/beta)."""
    return sum(t.size for _, t in network.named_parameters())


def forward(network: Network, batch: Tensor) -> Tensor:
    return network.forward(batch)
