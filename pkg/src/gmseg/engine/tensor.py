"""Dense tensors with reverse-mode automatic differentiation.

A Tensor wraps a numpy array plus an optional same-shape gradient slot.
Every differentiable operation appends a node to an implicit DAG by
recording its parents and a closure that pushes the output gradient back
to them. `backward()` on a scalar root runs the closures in reverse
topological order; gradients accumulate additively across multiple uses.

Precision is per-tensor: float32 by default, float64 for gradient
checking. Operations require their operands to share a dtype.
"""

from __future__ import annotations

import numpy as np

from ..errors import ContractError, DimensionError
from . import ckernels

DEFAULT_DTYPE = np.float32


def _as_dtype(dtype):
    dt = np.dtype(dtype if dtype is not None else DEFAULT_DTYPE)
    if dt not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ContractError(f"unsupported dtype {dt}; use float32 or float64")
    return dt


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_prev", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, dtype=None,
                 _prev: tuple = (), _op: str = "leaf"):
        if isinstance(data, Tensor):
            raise ContractError("wrap raw arrays, not Tensors")
        dt = _as_dtype(dtype) if (dtype is not None or not isinstance(data, np.ndarray)) \
            else _as_dtype(data.dtype)
        self.data = np.ascontiguousarray(data, dtype=dt)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._prev = _prev
        self._backward = None
        self.op = _op

    # -- bookkeeping ----------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def zero_grad(self) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        else:
            self.grad[...] = 0

    def accumulate_grad(self, g: np.ndarray, owned: bool = False) -> None:
        """Add `g` into the gradient slot.

        `owned=True` promises that `g` is a freshly allocated array no one
        else holds, letting an empty slot adopt it without a copy.
        """
        if self.grad is not None:
            self.grad += g
        elif owned and g.shape == self.data.shape and g.dtype == self.data.dtype:
            self.grad = g
        else:
            self.grad = np.array(np.broadcast_to(g, self.data.shape),
                                 dtype=self.data.dtype)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype.name}, op={self.op})"

    # -- graph construction ---------------------------------------------

    @staticmethod
    def _node(data, parents, op):
        req = any(p.requires_grad for p in parents)
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        out.requires_grad = req
        out._prev = tuple(parents) if req else ()
        out._backward = None
        out.op = op
        return out

    def backward(self) -> None:
        """Backpropagate from a scalar root through the recorded graph."""
        if self.data.size != 1:
            raise ContractError(f"backward root must be scalar, got shape {self.data.shape}")
        if not self.requires_grad:
            raise ContractError("root does not require grad; nothing to differentiate")
        order = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._prev:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- arithmetic -------------------------------------------------------

    def _coerce(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.dtype))

    def _check(self, other: "Tensor") -> None:
        if other.dtype != self.dtype:
            raise ContractError(f"dtype mismatch: {self.dtype} vs {other.dtype}")
        if other.shape != self.shape and other.size != 1 and self.size != 1:
            raise DimensionError(f"shape mismatch: {self.shape} vs {other.shape}")

    def __add__(self, other):
        o = self._coerce(other)
        self._check(o)
        out = Tensor._node(self.data + o.data, (self, o), "add")
        if out.requires_grad:
            def bwd(g):
                if self.requires_grad:
                    self.accumulate_grad(_unbroadcast(g, self.shape))
                if o.requires_grad:
                    o.accumulate_grad(_unbroadcast(g, o.shape))
            out._backward = bwd
        return out

    def __mul__(self, other):
        o = self._coerce(other)
        self._check(o)
        out = Tensor._node(self.data * o.data, (self, o), "mul")
        if out.requires_grad:
            a, b = self.data, o.data
            def bwd(g):
                if self.requires_grad:
                    self.accumulate_grad(_unbroadcast(g * b, self.shape), owned=True)
                if o.requires_grad:
                    o.accumulate_grad(_unbroadcast(g * a, o.shape), owned=True)
            out._backward = bwd
        return out

    def __truediv__(self, other):
        o = self._coerce(other)
        self._check(o)
        out = Tensor._node(self.data / o.data, (self, o), "div")
        if out.requires_grad:
            a, b = self.data, o.data
            def bwd(g):
                if self.requires_grad:
                    self.accumulate_grad(_unbroadcast(g / b, self.shape), owned=True)
                if o.requires_grad:
                    o.accumulate_grad(_unbroadcast(-g * a / (b * b), o.shape), owned=True)
            out._backward = bwd
        return out

    def __neg__(self):
        out = Tensor._node(-self.data, (self,), "neg")
        if out.requires_grad:
            out._backward = lambda g: self.accumulate_grad(-g, owned=True)
        return out

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __radd__(self, other):
        return self + other

    def __rmul__(self, other):
        return self * other

    def sum(self) -> "Tensor":
        out = Tensor._node(np.asarray(self.data.sum()).reshape(()), (self,), "sum")
        if out.requires_grad:
            shape = self.shape
            out._backward = lambda g: self.accumulate_grad(
                np.broadcast_to(g, shape).astype(self.dtype, copy=True), owned=True)
        return out

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single element, shape {self.shape}")
        return float(self.data.reshape(())[()])


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Reduce a gradient back to `shape` after scalar/implicit broadcasting."""
    if g.shape == tuple(shape):
        return g
    return np.asarray(g.sum()).reshape(shape) if np.prod(shape, dtype=int) == 1 \
        else g.reshape(shape)


# -- simple differentiable nonlinearities / structure ops -----------------


def relu(x: Tensor) -> Tensor:
    out = Tensor._node(np.maximum(x.data, 0), (x,), "relu")
    if out.requires_grad:
        y = out.data
        def bwd(g):
            if ckernels.available() and y.flags.c_contiguous and g.flags.c_contiguous:
                gx = np.empty_like(g)
                ckernels.relu_bwd(y, g, gx)
            else:
                gx = np.where(y > 0, g, 0)
            x.accumulate_grad(gx, owned=True)
        out._backward = bwd
    return out


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    e = np.exp(-np.abs(d))
    e /= 1.0 + e
    y = np.where(d >= 0, 1.0 - e, e)
    out = Tensor._node(y, (x,), "sigmoid")
    if out.requires_grad:
        out._backward = lambda g: x.accumulate_grad(g * y * (1.0 - y), owned=True)
    return out


def concat_channels(tensors) -> Tensor:
    """Concatenate 4-D activations along the channel axis."""
    tensors = list(tensors)
    if not tensors:
        raise DimensionError("concat of zero tensors")
    ref = tensors[0]
    for t in tensors[1:]:
        if t.data.ndim != 4 or ref.data.ndim != 4:
            raise DimensionError("concat_channels expects 4-D tensors")
        if t.shape[0] != ref.shape[0] or t.shape[2:] != ref.shape[2:]:
            raise DimensionError(
                f"concat shape disagreement: {ref.shape} vs {t.shape}")
        if t.dtype != ref.dtype:
            raise ContractError("concat dtype mismatch")
    out = Tensor._node(np.concatenate([t.data for t in tensors], axis=1),
                       tuple(tensors), "concat")
    if out.requires_grad:
        sizes = [t.shape[1] for t in tensors]
        def bwd(g):
            ofs = 0
            for t, c in zip(tensors, sizes):
                if t.requires_grad:
                    t.accumulate_grad(g[:, ofs:ofs + c])
                ofs += c
        out._backward = bwd
    return out


def global_avg_pool_broadcast(x: Tensor) -> Tensor:
    """Replace each spatial position with its channel's spatial mean."""
    if x.data.ndim != 4:
        raise DimensionError("global_avg_pool_broadcast expects (B,C,H,W)")
    B, C, H, W = x.shape
    m = x.data.mean(axis=(2, 3), keepdims=True)
    y = np.empty_like(x.data)
    y[...] = m
    out = Tensor._node(y, (x,), "gap_broadcast")
    if out.requires_grad:
        n = x.dtype.type(H * W)
        def bwd(g):
            gm = g.sum(axis=(2, 3), keepdims=True) / n
            gx = np.empty_like(x.data)
            gx[...] = gm
            x.accumulate_grad(gx, owned=True)
        out._backward = bwd
    return out


def maxpool2(x: Tensor) -> Tensor:
    """2x2 max pooling, stride 2. H and W must be even."""
    if x.data.ndim != 4:
        raise DimensionError("maxpool2 expects (B,C,H,W)")
    B, C, H, W = x.shape
    if H % 2 or W % 2:
        raise DimensionError(f"maxpool2 needs even spatial dims, got {H}x{W}")
    win = x.data.reshape(B, C, H // 2, 2, W // 2, 2)
    flat = win.transpose(0, 1, 2, 4, 3, 5).reshape(B, C, H // 2, W // 2, 4)
    idx = flat.argmax(axis=-1)  # first max wins on ties
    y = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
    out = Tensor._node(np.ascontiguousarray(y), (x,), "maxpool2")
    if out.requires_grad:
        def bwd(g):
            gwin = np.zeros((B, C, H // 2, W // 2, 4), dtype=g.dtype)
            np.put_along_axis(gwin, idx[..., None], g[..., None], axis=-1)
            gx = gwin.reshape(B, C, H // 2, W // 2, 2, 2) \
                     .transpose(0, 1, 2, 4, 3, 5).reshape(B, C, H, W)
            x.accumulate_grad(np.ascontiguousarray(gx), owned=True)
        out._backward = bwd
    return out


def upsample_nearest2(x: Tensor) -> Tensor:
    """Double spatial dims by pixel replication."""
    if x.data.ndim != 4:
        raise DimensionError("upsample_nearest2 expects (B,C,H,W)")
    B, C, H, W = x.shape
    y = np.ascontiguousarray(
        np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3))
    out = Tensor._node(y, (x,), "upsample2")
    if out.requires_grad:
        def bwd(g):
            x.accumulate_grad(g.reshape(B, C, H, 2, W, 2).sum(axis=(3, 5)), owned=True)
        out._backward = bwd
    return out
