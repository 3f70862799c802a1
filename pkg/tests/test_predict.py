"""Inference pipeline: geometry round trips and determinism."""

import numpy as np

from gmseg.dataio import Volume
from gmseg.models import AsppConfig, build_aspp
from gmseg.predict import predict_volume


def tiny_net():
    net = build_aspp(AsppConfig(base_width=2, branch_width=1, head_width=2),
                     seed=0)
    net.set_mode("eval")
    return net


def make_volume(slices=2, h=30, w=26, ps=(0.5, 0.5, 2.0)):
    rng = np.random.default_rng(0)
    data = rng.normal(1000.0, 100.0, size=(slices, h, w)).astype(np.float32)
    return Volume(data=data, pixel_size=ps, subject="s")


def test_output_matches_input_geometry():
    net = tiny_net()
    vol = make_volume()
    out = predict_volume(net, vol, tau=0.5, target=(0.25, 0.25),
                         size=(32, 32))
    assert out.data.shape == vol.data.shape
    assert out.data.dtype == np.uint8
    assert set(np.unique(out.data)) <= {0, 1}
    assert out.pixel_size == vol.pixel_size


def test_no_resample_path():
    net = tiny_net()
    vol = make_volume(ps=(0.25, 0.25, 2.0))
    out = predict_volume(net, vol, tau=0.5, target=(0.25, 0.25),
                         size=(24, 24))
    assert out.data.shape == vol.data.shape


def test_deterministic():
    net = tiny_net()
    vol = make_volume()
    m1 = predict_volume(net, vol, tau=0.5, target=(0.25, 0.25), size=(32, 32))
    m2 = predict_volume(net, vol, tau=0.5, target=(0.25, 0.25), size=(32, 32))
    assert np.array_equal(m1.data, m2.data)


def test_tau_monotone():
    """A stricter threshold can only shrink the predicted mask."""
    net = tiny_net()
    vol = make_volume()
    loose = predict_volume(net, vol, tau=0.3, target=(0.25, 0.25),
                           size=(32, 32))
    strict = predict_volume(net, vol, tau=0.7, target=(0.25, 0.25),
                            size=(32, 32))
    assert np.all(strict.data <= loose.data)


def test_extreme_tau_gives_empty_mask():
    net = tiny_net()
    vol = make_volume()
    out = predict_volume(net, vol, tau=1.0, target=(0.25, 0.25),
                         size=(32, 32))
    assert out.data.sum() == 0


def test_larger_volume_than_crop():
    net = tiny_net()
    vol = make_volume(h=80, w=90, ps=(0.25, 0.25, 2.0))
    out = predict_volume(net, vol, tau=0.5, target=(0.25, 0.25),
                         size=(40, 40))
    mask = out.data
    assert mask.shape == vol.data.shape
    # everything outside the centered crop must be background
    assert mask[:, :20, :].sum() == 0 and mask[:, :, :25].sum() == 0
