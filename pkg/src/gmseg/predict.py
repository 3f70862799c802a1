"""Inference pipeline: preprocess, infer, binarize, restore geometry.

Prediction mirrors training preprocessing exactly (resample to the target
pixel size, center-crop, per-volume normalize), runs the network in eval
mode slice by slice, thresholds at tau, then inverts the geometry:
un-crop into the resampled frame, nearest-neighbor un-resample back to
the input grid (masks must stay binary). The output volume always has the
input's dimensions.
"""

from __future__ import annotations

import numpy as np

from .dataio import (Volume, center_crop, crop_placement, normalize_volume,
                     resample_inplane, uncrop)
from .engine import Tensor
from .errors import ContractError
from .models import Network
from .objective import threshold_binarize


def _unresample_mask(mask: np.ndarray, orig_hw, src_ps, dst_ps) -> np.ndarray:
    """Nearest-neighbor resample of a (Z,H,W) mask to the original grid."""
    Zs, H, W = mask.shape
    Ho, Wo = orig_hw
    # inverse of the pixel-center forward mapping used by resample_inplane
    rows = np.clip(np.round((np.arange(Ho) + 0.5) * (dst_ps[0] / src_ps[0])
                            - 0.5).astype(np.int64), 0, H - 1)
    cols = np.clip(np.round((np.arange(Wo) + 0.5) * (dst_ps[1] / src_ps[1])
                            - 0.5).astype(np.int64), 0, W - 1)
    return mask[:, rows[:, None], cols[None, :]]


def predict_volume(network: Network, vol: Volume, tau: float = 0.999,
                   target=(0.25, 0.25), size=(200, 200)) -> Volume:
    """Binary gray-matter mask for `vol`, in the input geometry."""
    resampled = resample_inplane(
        Volume(data=vol.data, pixel_size=vol.pixel_size,
               subject=vol.subject, site=vol.site), target)
    rs_shape = resampled.data.shape[1:]
    cropped = np.stack([center_crop(sl, size) for sl in resampled.data])
    work = normalize_volume(Volume(data=cropped,
                                   pixel_size=resampled.pixel_size,
                                   subject=vol.subject, site=vol.site))

    network.set_mode("eval")
    preds = []
    for sl in work.data:
        x = Tensor(sl[None, None].astype(network.dtype))
        prob = network.forward(x).data[0, 0]
        preds.append(threshold_binarize(prob, tau))
    pred = np.stack(preds)

    restored = np.stack([uncrop(p, rs_shape, size) for p in pred])
    out = restored if resampled.pixel_size[:2] == vol.pixel_size[:2] \
        else _unresample_mask(restored, vol.data.shape[1:],
                              resampled.pixel_size, vol.pixel_size)
    if out.shape != vol.data.shape:
        raise ContractError(
            f"geometry round-trip failed: {out.shape} != {vol.data.shape}")
    return Volume(data=out.astype(np.uint8), pixel_size=vol.pixel_size,
                  subject=vol.subject, site=vol.site)
