"""Dilated 2-D convolution (cross-correlation) with exact gradients.

The kernel samples its input with a stride of `dilation` between taps;
dilation 1 is a standard convolution. No kernel flip is applied: the
operation is written in correlation form, and kernels are centered so
"same" padding is symmetric for odd kernel sizes.

Three execution paths produce identical forward values:
  * 1x1 stride-1 kernels run as channel-mixing matmuls (BLAS);
  * 3x3/NxM stride-1 kernels run through the C kernels when available;
  * everything else (and every install without a C compiler) runs the
    numpy mirror, which accumulates taps in the same order with the same
    per-element expression grouping as the C code.
The input gradient reuses the forward kernels (gather form), so it is
likewise path-identical; the weight gradient uses a different reduction
order in C and agrees with the numpy path to rounding only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DimensionError, InvalidConfigError
from . import ckernels
from .tensor import Tensor


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel_height: int
    kernel_width: int
    dilation: int = 1
    stride: int = 1
    padding: object = "same"  # "same", int, or (top, bottom, left, right)
    has_bias: bool = True
    padding_mode: str = "zeros"  # "circular" only for equivariance testing

    def __post_init__(self):
        if self.dilation < 1:
            raise InvalidConfigError(f"dilation must be >= 1, got {self.dilation}")
        if self.stride < 1:
            raise InvalidConfigError(f"stride must be >= 1, got {self.stride}")
        if min(self.in_channels, self.out_channels,
               self.kernel_height, self.kernel_width) < 1:
            raise InvalidConfigError("channel and kernel extents must be positive")
        if self.padding_mode not in ("zeros", "circular"):
            raise InvalidConfigError(f"unknown padding_mode {self.padding_mode!r}")
        if self.padding == "same" and (self.kernel_height % 2 == 0
                                       or self.kernel_width % 2 == 0):
            raise InvalidConfigError("'same' padding requires odd kernel sizes")

    def pad_sides(self):
        """(top, bottom, left, right) pixel counts."""
        if self.padding == "same":
            ph = self.dilation * (self.kernel_height - 1) // 2
            pw = self.dilation * (self.kernel_width - 1) // 2
            return (ph, ph, pw, pw)
        if isinstance(self.padding, int):
            p = self.padding
            return (p, p, p, p)
        pt, pb, pl, pr = self.padding
        return (int(pt), int(pb), int(pl), int(pr))

    @property
    def weight_shape(self):
        return (self.out_channels, self.in_channels,
                self.kernel_height, self.kernel_width)


def _out_extent(n, pad0, pad1, k, r, stride):
    eff = r * (k - 1) + 1
    span = n + pad0 + pad1 - eff
    if span < 0:
        raise DimensionError(
            f"kernel extent {eff} exceeds padded input extent {n + pad0 + pad1}")
    return span // stride + 1


def _pad_input(x: np.ndarray, sides, mode: str) -> np.ndarray:
    pt, pb, pl, pr = sides
    if pt == pb == pl == pr == 0:
        return x
    if mode == "circular":
        H, W = x.shape[2], x.shape[3]
        if max(pt, pb) >= H or max(pl, pr) >= W:
            raise DimensionError("circular padding wider than the input")
        return np.ascontiguousarray(
            np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)), mode="wrap"))
    out = np.empty((x.shape[0], x.shape[1],
                    x.shape[2] + pt + pb, x.shape[3] + pl + pr), dtype=x.dtype)
    out[:, :, pt:pt + x.shape[2], pl:pl + x.shape[3]] = x
    if pt:
        out[:, :, :pt] = 0
    if pb:
        out[:, :, pt + x.shape[2]:] = 0
    if pl:
        out[:, :, pt:pt + x.shape[2], :pl] = 0
    if pr:
        out[:, :, pt:pt + x.shape[2], pl + x.shape[3]:] = 0
    return out


def _fold_padding(dxp: np.ndarray, sides, shape, mode: str) -> np.ndarray:
    """Collapse a padded-gradient buffer back onto the input gradient."""
    pt, pb, pl, pr = sides
    H, W = shape[2], shape[3]
    if mode == "zeros" or (pt == pb == pl == pr == 0):
        return np.ascontiguousarray(dxp[:, :, pt:pt + H, pl:pl + W])
    tmp = dxp[:, :, :, pl:pl + W].copy()
    if pl:
        tmp[:, :, :, W - pl:] += dxp[:, :, :, :pl]
    if pr:
        tmp[:, :, :, :pr] += dxp[:, :, :, pl + W:]
    dx = tmp[:, :, pt:pt + H].copy()
    if pt:
        dx[:, :, H - pt:] += tmp[:, :, :pt]
    if pb:
        dx[:, :, :pb] += tmp[:, :, pt + H:]
    return dx


# -- numpy mirror of the C kernels ----------------------------------------


def _np_fwd(xp, w, r, stride, H, W):
    B = xp.shape[0]
    Co, Ci, kh, kw = w.shape
    y = np.zeros((B, Co, H, W), dtype=xp.dtype)
    rows = slice(None)
    for co in range(Co):
        acc = y[:, co]
        for ci in range(Ci):
            for ky in range(kh):
                r0 = ky * r
                rect = xp[:, ci, r0:r0 + (H - 1) * stride + 1:stride, :]
                def col(kx):
                    c0 = kx * r
                    return rect[:, rows, c0:c0 + (W - 1) * stride + 1:stride]
                if kw == 3:
                    w0, w1, w2 = w[co, ci, ky]
                    acc += w0 * col(0) + w1 * col(1) + w2 * col(2)
                else:
                    for kx in range(kw):
                        acc += w[co, ci, ky, kx] * col(kx)
    return y


def _np_dx_strided(gy, w, dxp, r, stride):
    B, Co, H, W = gy.shape
    _, Ci, kh, kw = w.shape
    for co in range(Co):
        g = gy[:, co]
        for ci in range(Ci):
            for ky in range(kh):
                r0 = ky * r
                rect = dxp[:, ci, r0:r0 + (H - 1) * stride + 1:stride, :]
                for kx in range(kw):
                    c0 = kx * r
                    rect[:, :, c0:c0 + (W - 1) * stride + 1:stride] += w[co, ci, ky, kx] * g


def _np_dw(gy, xp, wshape, r, stride):
    B, Co, H, W = gy.shape
    _, Ci, kh, kw = wshape
    dw = np.empty(wshape, dtype=gy.dtype)
    for co in range(Co):
        g = gy[:, co]
        for ci in range(Ci):
            for ky in range(kh):
                r0 = ky * r
                rect = xp[:, ci, r0:r0 + (H - 1) * stride + 1:stride, :]
                for kx in range(kw):
                    c0 = kx * r
                    view = rect[:, :, c0:c0 + (W - 1) * stride + 1:stride]
                    dw[co, ci, ky, kx] = (g * view).sum()
    return dw


# -- public op -------------------------------------------------------------


def conv2d(x: Tensor, spec: ConvSpec, weight: Tensor,
           bias: Tensor | None = None) -> Tensor:
    """Dilated convolution of a (B,Cin,H,W) activation, graph-registered."""
    if x.data.ndim != 4:
        raise DimensionError(f"conv2d expects (B,Cin,H,W), got shape {x.shape}")
    if x.shape[1] != spec.in_channels:
        raise DimensionError(
            f"input has {x.shape[1]} channels, spec expects {spec.in_channels}")
    if tuple(weight.shape) != spec.weight_shape:
        raise DimensionError(
            f"weight shape {tuple(weight.shape)} != spec {spec.weight_shape}")
    if spec.has_bias:
        if bias is None or tuple(bias.shape) != (spec.out_channels,):
            raise DimensionError("bias must have shape (out_channels,)")
    elif bias is not None:
        raise DimensionError("spec.has_bias is False but a bias was passed")
    if weight.dtype != x.dtype or (bias is not None and bias.dtype != x.dtype):
        raise DimensionError("conv2d operand dtypes disagree")

    B, Ci, H, W = x.shape
    r, stride = spec.dilation, spec.stride
    sides = spec.pad_sides()
    kh, kw = spec.kernel_height, spec.kernel_width
    Ho = _out_extent(H, sides[0], sides[1], kh, r, stride)
    Wo = _out_extent(W, sides[2], sides[3], kw, r, stride)

    pointwise = (kh == 1 and kw == 1 and stride == 1 and sides == (0, 0, 0, 0))
    if pointwise:
        w2d = weight.data.reshape(spec.out_channels, Ci)
        y = np.matmul(w2d, x.data.reshape(B, Ci, H * W)).reshape(B, -1, H, W)
        xp = None
    else:
        xp = _pad_input(x.data, sides, spec.padding_mode)
        use_c = stride == 1 and ckernels.available()
        if use_c:
            y = np.empty((B, spec.out_channels, Ho, Wo), dtype=x.dtype)
            ckernels.conv_fwd(xp, weight.data, y, r)
        else:
            y = _np_fwd(xp, weight.data, r, stride, Ho, Wo)
    if bias is not None:
        y += bias.data.reshape(1, -1, 1, 1)

    parents = (x, weight) if bias is None else (x, weight, bias)
    out = Tensor._node(np.ascontiguousarray(y), parents, "conv2d")
    if not out.requires_grad:
        return out

    def bwd(g):
        g = np.ascontiguousarray(g)
        if bias is not None and bias.requires_grad:
            bias.accumulate_grad(g.sum(axis=(0, 2, 3)), owned=True)
        if pointwise:
            w2d = weight.data.reshape(spec.out_channels, Ci)
            g3 = g.reshape(B, spec.out_channels, H * W)
            if weight.requires_grad:
                x3t = x.data.reshape(B, Ci, H * W).transpose(0, 2, 1)
                dw = np.matmul(g3, x3t).sum(axis=0)
                weight.accumulate_grad(dw.reshape(weight.shape), owned=True)
            if x.requires_grad:
                dx = np.matmul(w2d.T.copy(), g3).reshape(B, Ci, H, W)
                x.accumulate_grad(dx, owned=True)
            return
        use_c = stride == 1 and ckernels.available()
        if weight.requires_grad:
            if use_c:
                dw = np.empty(weight.shape, dtype=g.dtype)
                ckernels.conv_dw(g, xp, dw, r)
            else:
                dw = _np_dw(g, xp, weight.shape, r, stride)
            weight.accumulate_grad(dw, owned=True)
        if x.requires_grad:
            if stride == 1:
                # gather form: the input gradient is a forward convolution
                # of the (zero-extended) output gradient with the
                # channel-transposed, spatially flipped kernel
                eh, ew = r * (kh - 1), r * (kw - 1)
                gp = _pad_input(g, (eh, eh, ew, ew), "zeros")
                wT = np.ascontiguousarray(
                    weight.data.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1])
                Hp = H + sides[0] + sides[1]
                Wp = W + sides[2] + sides[3]
                if use_c:
                    dxp = np.empty((B, Ci, Hp, Wp), dtype=g.dtype)
                    ckernels.conv_fwd(gp, wT, dxp, r)
                else:
                    dxp = _np_fwd(gp, wT, r, 1, Hp, Wp)
            else:
                dxp = np.zeros_like(xp)
                _np_dx_strided(g, weight.data, dxp, r, stride)
            x.accumulate_grad(_fold_padding(dxp, sides, x.shape, spec.padding_mode),
                              owned=True)

    out._backward = bwd
    return out
