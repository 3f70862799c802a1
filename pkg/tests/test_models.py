"""Model construction: shapes, parameter counts, modes, determinism."""

import numpy as np
import pytest

from gmseg.engine import Tensor
from gmseg.errors import DimensionError, InvalidConfigError
from gmseg.models import (AsppConfig, UnetConfig, build_aspp, build_unet,
                          param_count)


def small_aspp(**kw):
    return build_aspp(AsppConfig(base_width=2, branch_width=2, head_width=2,
                                 **kw), seed=0)


def test_reference_param_counts_in_band():
    aspp = build_aspp(AsppConfig())
    unet = build_unet(UnetConfig())
    n_aspp, n_unet = param_count(aspp), param_count(unet)
    assert 100_000 <= n_aspp <= 150_000, n_aspp
    assert 700_000 <= n_unet <= 850_000, n_unet
    assert n_unet / n_aspp >= 6.0


def test_aspp_preserves_spatial_size():
    net = small_aspp()
    net.set_mode("eval")
    for h, w in ((20, 20), (33, 41)):
        y = net.forward(Tensor(np.zeros((1, 1, h, w), np.float32)))
        assert y.shape == (1, 1, h, w)


def test_unet_handles_non_multiple_sizes():
    net = build_unet(UnetConfig(depth=3, base_width=2), seed=0)
    net.set_mode("eval")
    for h, w in ((16, 16), (17, 19), (21, 16)):
        y = net.forward(Tensor(np.zeros((1, 1, h, w), np.float32)))
        assert y.shape == (1, 1, h, w)


def test_output_is_probability():
    net = small_aspp()
    net.set_mode("eval")
    x = np.random.default_rng(0).normal(size=(2, 1, 16, 16)).astype(np.float32)
    y = net.forward(Tensor(x)).data
    assert y.min() > 0.0 and y.max() < 1.0


def test_init_deterministic_under_seed():
    a = small_aspp()
    b = small_aspp()
    for (na, ta), (nb, tb) in zip(a.named_parameters(), b.named_parameters()):
        assert na == nb and np.array_equal(ta.data, tb.data)


def test_different_seeds_differ():
    a = build_aspp(AsppConfig(base_width=2, branch_width=2, head_width=2),
                   seed=0)
    b = build_aspp(AsppConfig(base_width=2, branch_width=2, head_width=2),
                   seed=1)
    weights_equal = [np.array_equal(ta.data, tb.data)
                     for (_, ta), (_, tb) in zip(a.named_parameters(),
                                                 b.named_parameters())]
    assert not all(weights_equal)


def test_named_parameters_unique_and_grad_enabled():
    net = small_aspp()
    names = [n for n, _ in net.named_parameters()]
    assert len(names) == len(set(names))
    assert all(t.requires_grad for _, t in net.named_parameters())


def test_eval_mode_is_deterministic():
    net = small_aspp()
    net.set_mode("eval")
    x = Tensor(np.random.default_rng(1).normal(size=(1, 1, 12, 12))
               .astype(np.float32))
    y1 = net.forward(x).data.copy()
    y2 = net.forward(x).data
    assert np.array_equal(y1, y2)


def test_train_mode_dropout_varies():
    net = small_aspp()
    x = Tensor(np.random.default_rng(2).normal(size=(1, 1, 12, 12))
               .astype(np.float32))
    y1 = net.forward(x).data.copy()
    y2 = net.forward(x).data
    assert not np.array_equal(y1, y2)


def test_backward_reaches_every_parameter():
    net = small_aspp()
    net.set_mode("eval")  # no dropout: all paths active
    x = Tensor(np.random.default_rng(3).normal(size=(1, 1, 16, 16))
               .astype(np.float32))
    net.forward(x).sum().backward()
    for name, t in net.named_parameters():
        assert t.grad is not None, name
        assert np.isfinite(t.grad).all(), name


def test_unet_backward_reaches_every_parameter():
    net = build_unet(UnetConfig(depth=2, base_width=2), seed=0)
    net.set_mode("eval")
    x = Tensor(np.random.default_rng(4).normal(size=(1, 1, 12, 12))
               .astype(np.float32))
    net.forward(x).sum().backward()
    for name, t in net.named_parameters():
        assert t.grad is not None, name


def test_input_validation():
    net = small_aspp()
    with pytest.raises(DimensionError):
        net.forward(Tensor(np.zeros((1, 2, 8, 8), np.float32)))
    with pytest.raises(DimensionError):
        net.forward(Tensor(np.zeros((8, 8), np.float32)))
    with pytest.raises(InvalidConfigError):
        net.set_mode("test")


def test_config_validation():
    with pytest.raises(InvalidConfigError):
        AsppConfig(base_width=0)
    with pytest.raises(InvalidConfigError):
        AsppConfig(dilations=(6, 12))
    with pytest.raises(InvalidConfigError):
        UnetConfig(depth=0)
