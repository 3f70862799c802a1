"""Dice loss contract and thresholding."""

import numpy as np
import pytest

from conftest import central_diff, max_rel_err
from gmseg.engine import Tensor
from gmseg.errors import ContractError, DimensionError, InvalidConfigError
from gmseg.objective import DiceLossParams, dice_loss, threshold_binarize


def test_perfect_overlap_is_minus_one():
    m = np.zeros((1, 1, 8, 8))
    m[0, 0, 2:5, 2:5] = 1.0
    loss = dice_loss(Tensor(m), Tensor(m))
    assert loss.item() == -1.0


def test_both_empty_is_minus_one():
    z = np.zeros((1, 1, 4, 4))
    assert dice_loss(Tensor(z), Tensor(z)).item() == -1.0


def test_range_is_negative_unit_interval():
    rng = np.random.default_rng(0)
    for _ in range(50):
        p = rng.uniform(size=(1, 1, 6, 6))
        g = (rng.uniform(size=p.shape) > 0.5).astype(np.float64)
        v = dice_loss(Tensor(p), Tensor(g)).item()
        assert -1.0 <= v < 0.0


def test_disjoint_masks_near_zero():
    p = np.zeros((1, 1, 10, 10))
    g = np.zeros_like(p)
    p[0, 0, :3], g[0, 0, 7:] = 1.0, 1.0
    v = dice_loss(Tensor(p), Tensor(g)).item()
    assert -1.0 < v < 0.0
    assert v == -1.0 / (p.sum() + g.sum() + 1.0)


def test_epsilon_parameter_used():
    p = np.zeros((1, 1, 4, 4))
    g = np.zeros_like(p)
    g[0, 0, 0, 0] = 1.0
    v1 = dice_loss(Tensor(p), Tensor(g), DiceLossParams(1.0)).item()
    v2 = dice_loss(Tensor(p), Tensor(g), DiceLossParams(0.5)).item()
    assert v1 != v2


@pytest.mark.parametrize("seed", range(5))
def test_gradient_fd(seed):
    rng = np.random.default_rng(seed)
    p = rng.uniform(0.05, 0.95, size=(1, 1, 5, 5))
    g = (rng.uniform(size=p.shape) > 0.6).astype(np.float64)
    tp = Tensor(p, requires_grad=True)
    dice_loss(tp, Tensor(g)).backward()
    num = central_diff(lambda v: dice_loss(Tensor(v), Tensor(g)).item(), p)
    assert max_rel_err(tp.grad, num) < 1e-6


def test_contract_violations():
    ok = np.zeros((1, 1, 2, 2))
    with pytest.raises(DimensionError):
        dice_loss(Tensor(ok), Tensor(np.zeros((1, 1, 3, 3))))
    with pytest.raises(ContractError):
        dice_loss(Tensor(ok + 1.5), Tensor(ok))
    with pytest.raises(ContractError):
        dice_loss(Tensor(ok), Tensor(ok + 0.3))
    with pytest.raises(InvalidConfigError):
        DiceLossParams(0.0)


def test_threshold_inclusive():
    p = np.array([0.0, 0.5, 0.999, 1.0])
    out = threshold_binarize(p, 0.999)
    assert out.dtype == np.uint8
    assert out.tolist() == [0, 0, 1, 1]
    with pytest.raises(InvalidConfigError):
        threshold_binarize(p, 1.5)
