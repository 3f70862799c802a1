"""Autodiff engine: graph mechanics and per-op gradients."""

import numpy as np
import pytest

from conftest import central_diff, max_rel_err
from gmseg.engine import (Tensor, concat_channels, global_avg_pool_broadcast,
                          maxpool2, relu, sigmoid, upsample_nearest2)


def leaf(arr):
    return Tensor(np.asarray(arr, dtype=np.float64), requires_grad=True)


def test_leaf_defaults():
    t = Tensor(np.ones(3))
    assert not t.requires_grad and t.grad is None
    g = leaf(np.ones(3))
    assert g.requires_grad


def test_add_mul_grads():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
    ta, tb = leaf(a), leaf(b)
    ((ta + tb) * ta).sum().backward()
    assert np.allclose(ta.grad, 2 * a + b)
    assert np.allclose(tb.grad, a)


def test_div_neg_sub():
    rng = np.random.default_rng(1)
    a = rng.normal(size=(5,)) + 3.0
    b = rng.normal(size=(5,)) + 3.0
    ta, tb = leaf(a), leaf(b)
    (ta / tb - (-ta)).sum().backward()
    assert np.allclose(ta.grad, 1.0 / b + 1.0)
    assert np.allclose(tb.grad, -a / b ** 2)


def test_scalar_broadcast_unbroadcast():
    a, b = leaf(np.ones((2, 3))), leaf(np.asarray(2.0))
    (a * b).sum().backward()
    assert a.grad.shape == (2, 3) and b.grad.size == 1
    assert np.allclose(a.grad, 2.0) and np.allclose(b.grad, 6.0)


def test_incompatible_shapes_rejected():
    import pytest as _pytest
    from gmseg.errors import DimensionError
    with _pytest.raises(DimensionError):
        _ = leaf(np.ones((2, 3))) + leaf(np.ones(3))


def test_reused_node_accumulates():
    x = leaf([2.0])
    y = x * x
    (y + y).sum().backward()
    assert np.allclose(x.grad, 8.0)


def test_scalar_coercion():
    x = leaf([1.0, 2.0])
    (3.0 * x + 1.0).sum().backward()
    assert np.allclose(x.grad, 3.0)


def test_detach_blocks_gradient():
    x = leaf([1.0, 2.0])
    (x.detach() * x).sum().backward()
    assert np.allclose(x.grad, x.data)


def test_zero_grad():
    x = leaf([1.0])
    (x * x).sum().backward()
    x.zero_grad()
    assert np.all(x.grad == 0.0)


@pytest.mark.parametrize("seed", range(20))
def test_elementwise_fd(seed):
    rng = np.random.default_rng(seed)
    shape = tuple(rng.integers(1, 5, size=2))
    a = rng.normal(size=shape)
    b = rng.normal(size=shape) + 2.5  # keep divisors away from zero
    # avoid relu kinks
    a[np.abs(a) < 1e-3] += 0.1

    def run(fn, ref_arr):
        t = leaf(ref_arr)
        o = leaf(b)
        fn(t, o).sum().backward()
        num = central_diff(lambda v: float(fn(Tensor(v), Tensor(b)).sum().item()),
                           ref_arr)
        assert max_rel_err(t.grad, num) < 1e-6

    run(lambda t, o: t * o + t / o - o, a)
    run(lambda t, o: relu(t) * o, a)
    run(lambda t, o: sigmoid(t) * o, a)


@pytest.mark.parametrize("seed", range(20))
def test_pool_upsample_concat_fd(seed):
    rng = np.random.default_rng(100 + seed)
    x = rng.normal(size=(2, 3, 4, 4))
    x += rng.normal(size=x.shape) * 1e-3  # break maxpool ties
    w = rng.normal(size=(2, 6, 4, 4))     # weights for concat output

    def scalar(fn, v):
        return float(fn(Tensor(v)).sum().item())

    for fn in (maxpool2,
               upsample_nearest2,
               global_avg_pool_broadcast,
               lambda t: concat_channels([t, t * 2.0]) * Tensor(w)):
        t = leaf(x)
        fn(t).sum().backward()
        num = central_diff(lambda v: scalar(fn, v), x)
        assert max_rel_err(t.grad, num) < 1e-6


def test_maxpool_shape_and_value():
    x = np.arange(16, dtype=np.float64).reshape(1, 1, 4, 4)
    y = maxpool2(Tensor(x))
    assert y.shape == (1, 1, 2, 2)
    assert np.allclose(y.data[0, 0], [[5, 7], [13, 15]])


def test_upsample_inverts_shape():
    x = np.arange(4, dtype=np.float64).reshape(1, 1, 2, 2)
    y = upsample_nearest2(Tensor(x))
    assert y.shape == (1, 1, 4, 4)
    assert np.allclose(y.data[0, 0, :2, :2], x[0, 0, 0, 0])


def test_global_avg_pool_broadcasts():
    x = np.ones((2, 3, 4, 5))
    x[0, 0] = 2.0
    y = global_avg_pool_broadcast(Tensor(x))
    assert y.shape == x.shape
    assert np.allclose(y.data[0, 0], 2.0) and np.allclose(y.data[1, 2], 1.0)


def test_backward_requires_scalar():
    x = leaf(np.ones((2, 2)))
    s = (x * x).sum()
    s.backward()
    assert x.grad is not None
