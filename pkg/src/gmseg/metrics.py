"""Segmentation evaluation battery.

Ten challenge-style metrics (DSC, MSD, HSD, SHD, SMD, TPR, TNR, PPV, JI,
CC) plus seven semantic-segmentation metrics (Dice, MeanAccuracy,
PixelAccuracy, Recall, Precision, FreqWeightedIU, MeanIU), with the
morphology they need: 4-neighbor boundary extraction, Zhang-Suen
skeletonization and exact pairwise point-set distances in millimeters.

Overlap/statistical metrics pool confusion counts over the whole volume;
distance metrics are computed per axial slice and averaged (slice spacing
is far coarser than in-plane resolution, so 3-D surface distances would
be dominated by the slice gap). Undefined values (empty masks, TP=0) are
reported as missing (NaN) with a warning instead of being zero-filled.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError

CHALLENGE_COLUMNS = ("DSC", "MSD", "HSD", "SHD", "SMD",
                     "TPR", "TNR", "PPV", "JI", "CC")
TABLE_COLUMNS = ("Dice", "MeanAccuracy", "PixelAccuracy", "Recall",
                 "Precision", "FreqWeightedIU", "MeanIU")
ALL_COLUMNS = CHALLENGE_COLUMNS + TABLE_COLUMNS


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp,
                               self.tn + other.tn, self.fn + other.fn)


@dataclass
class MetricReport:
    """Per (subject, rater) metric rows plus mean/std aggregates.

    `rows` maps are keyed by metric name; missing values are NaN and are
    excluded from the aggregates. `skipped_slices` counts slices where a
    distance metric could not be computed (one side empty).
    """

    rows: list = field(default_factory=list)   # dicts with subject/rater/metrics
    skipped_slices: int = 0

    def aggregates(self) -> dict:
        out = {}
        for name in ALL_COLUMNS:
            vals = [r[name] for r in self.rows
                    if name in r and not math.isnan(r[name])]
            if vals:
                out[name] = {"mean": float(np.mean(vals)),
                             "std": float(np.std(vals))}
            else:
                out[name] = {"mean": float("nan"), "std": float("nan")}
        return out


def _check_binary_pair(pred: np.ndarray, gold: np.ndarray) -> None:
    if pred.shape != gold.shape:
        raise DimensionError(
            f"pred {pred.shape} and gold {gold.shape} shapes differ")


def confusion(pred: np.ndarray, gold: np.ndarray) -> ConfusionCounts:
    """Pixelwise confusion counts for two binary masks."""
    _check_binary_pair(pred, gold)
    p = pred.astype(bool)
    g = gold.astype(bool)
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    tn = p.size - tp - fp - fn
    return ConfusionCounts(tp, fp, tn, fn)


def overlap_metrics(c: ConfusionCounts) -> dict:
    """DSC, JI, TPR, TNR, PPV (percent) and CC from confusion counts.

    Undefined ratios (TP=0 for CC, empty gold for TPR, empty prediction
    for PPV, ...) come back as NaN with a warning.
    """
    out = {}

    def ratio(name, num, den, scale=1.0):
        if den == 0:
            warnings.warn(f"{name} undefined (zero denominator); "
                          "reported as missing")
            out[name] = float("nan")
        else:
            out[name] = scale * num / den

    ratio("DSC", 2 * c.tp, 2 * c.tp + c.fp + c.fn)
    ratio("JI", c.tp, c.tp + c.fp + c.fn)
    ratio("TPR", c.tp, c.tp + c.fn, 100.0)
    ratio("TNR", c.tn, c.tn + c.fp, 100.0)
    ratio("PPV", c.tp, c.tp + c.fp, 100.0)
    if c.tp == 0:
        warnings.warn("CC undefined (TP=0); reported as missing")
        out["CC"] = float("nan")
    else:
        out["CC"] = 100.0 * (1.0 - (c.fp + c.fn) / c.tp)
    return out


def boundary(mask: np.ndarray, pixel_size=(1.0, 1.0)) -> np.ndarray:
    """Boundary pixel centers of a binary mask, in mm, shape (N, 2).

    A mask pixel is boundary when at least one 4-neighbor is outside the
    mask (the image border counts as outside).
    """
    m = mask.astype(bool)
    if not m.any():
        return np.empty((0, 2))
    interior = m.copy()
    interior[0, :] = interior[-1, :] = False
    interior[:, 0] = interior[:, -1] = False
    inner = interior.copy()
    inner[1:-1, 1:-1] &= (m[:-2, 1:-1] & m[2:, 1:-1]
                          & m[1:-1, :-2] & m[1:-1, 2:])
    b = m & ~inner
    ys, xs = np.nonzero(b)
    return np.stack([ys * float(pixel_size[0]),
                     xs * float(pixel_size[1])], axis=1)


def _pairwise_min(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """min Euclidean distance from each point of `a` to the set `b`."""
    d2 = ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)
    return np.sqrt(d2.min(axis=1))


def surface_distances(pred_boundary: np.ndarray,
                      gold_boundary: np.ndarray) -> dict:
    """MSD and HSD (mm) between two boundary point sets.

    MSD pools both directed distance lists and takes one mean; HSD is the
    classic symmetric Hausdorff maximum. Empty sets yield NaN + warning.
    """
    if len(pred_boundary) == 0 or len(gold_boundary) == 0:
        warnings.warn("surface distance undefined for empty boundary; "
                      "reported as missing")
        return {"MSD": float("nan"), "HSD": float("nan")}
    d_ab = _pairwise_min(pred_boundary, gold_boundary)
    d_ba = _pairwise_min(gold_boundary, pred_boundary)
    pooled = np.concatenate([d_ab, d_ba])
    return {"MSD": float(pooled.mean()),
            "HSD": float(max(d_ab.max(), d_ba.max()))}


_ZS_NEIGHBOR_OFFSETS = ((-1, 0), (-1, 1), (0, 1), (1, 1),
                        (1, 0), (1, -1), (0, -1), (-1, -1))


def skeletonize(mask: np.ndarray) -> np.ndarray:
    """Zhang-Suen iterative thinning to a 1-px-wide skeleton.

    Runs the standard two sub-iterations until no pixel changes; the
    result is a subset of the input mask.
    """
    img = np.pad(mask.astype(np.uint8), 1)

    def neighbors(m):
        # P2..P9 clockwise from north, as stacked shifted views
        return [m[1 + dy: m.shape[0] - 1 + dy, 1 + dx: m.shape[1] - 1 + dx]
                for dy, dx in _ZS_NEIGHBOR_OFFSETS]

    while True:
        changed = False
        for phase in (0, 1):
            p = neighbors(img)
            core = img[1:-1, 1:-1]
            bsum = sum(x.astype(np.int32) for x in p)
            seq = p + [p[0]]
            a = sum(((seq[k] == 0) & (seq[k + 1] == 1)).astype(np.int32)
                    for k in range(8))
            if phase == 0:
                c1 = p[0] * p[2] * p[4]
                c2 = p[2] * p[4] * p[6]
            else:
                c1 = p[0] * p[2] * p[6]
                c2 = p[0] * p[4] * p[6]
            kill = ((core == 1) & (bsum >= 2) & (bsum <= 6) & (a == 1)
                    & (c1 == 0) & (c2 == 0))
            if kill.any():
                core[kill] = 0
                changed = True
        if not changed:
            return img[1:-1, 1:-1].astype(mask.dtype)


def skeleton_distances(pred: np.ndarray, gold: np.ndarray,
                       pixel_size=(1.0, 1.0)) -> dict:
    """SHD and SMD (mm) between the skeletons of two binary masks.

    SHD is the Hausdorff distance between skeleton point sets; SMD is the
    median of the pooled symmetric distance list.
    """
    pts = []
    for m in (pred, gold):
        ys, xs = np.nonzero(skeletonize(m))
        pts.append(np.stack([ys * float(pixel_size[0]),
                             xs * float(pixel_size[1])], axis=1))
    if len(pts[0]) == 0 or len(pts[1]) == 0:
        warnings.warn("skeleton distance undefined for empty skeleton; "
                      "reported as missing")
        return {"SHD": float("nan"), "SMD": float("nan")}
    d_ab = _pairwise_min(pts[0], pts[1])
    d_ba = _pairwise_min(pts[1], pts[0])
    return {"SHD": float(max(d_ab.max(), d_ba.max())),
            "SMD": float(np.median(np.concatenate([d_ab, d_ba])))}


def table3_metrics(pred: np.ndarray, gold: np.ndarray) -> dict:
    """Two-class semantic-segmentation metrics in [0, 1]."""
    c = confusion(pred, gold)
    n = c.total
    out = {"PixelAccuracy": (c.tp + c.tn) / n}
    fg, bg = c.tp + c.fn, c.tn + c.fp          # gold class sizes
    accs, ius, wius = [], [], []
    for cls_tp, cls_size, cls_union in (
            (c.tp, fg, c.tp + c.fn + c.fp),
            (c.tn, bg, c.tn + c.fp + c.fn)):
        if cls_size == 0:
            warnings.warn("class absent from gold; per-class metrics "
                          "reported as missing")
            continue
        accs.append(cls_tp / cls_size)
        iu = cls_tp / cls_union if cls_union else float("nan")
        ius.append(iu)
        wius.append((cls_size / n) * iu)
    out["MeanAccuracy"] = float(np.mean(accs)) if accs else float("nan")
    out["MeanIU"] = float(np.mean(ius)) if ius else float("nan")
    out["FreqWeightedIU"] = float(np.sum(wius)) if wius else float("nan")
    ov = overlap_metrics(c)
    out["Dice"] = ov["DSC"]
    out["Recall"] = ov["TPR"] / 100.0 if not math.isnan(ov["TPR"]) else float("nan")
    out["Precision"] = ov["PPV"] / 100.0 if not math.isnan(ov["PPV"]) else float("nan")
    return out


def _pool_points_3d(vol: np.ndarray, pixel_size, extract) -> np.ndarray:
    """Stack per-slice point sets into (N, 3) mm coordinates."""
    pts = []
    thick = float(pixel_size[2]) if len(pixel_size) > 2 else 1.0
    for z in range(vol.shape[0]):
        p2 = extract(vol[z])
        if len(p2):
            zs = np.full((len(p2), 1), z * thick)
            pts.append(np.concatenate([p2, zs], axis=1))
    return np.concatenate(pts) if pts else np.empty((0, 3))


def _volume_distances(pred: np.ndarray, gold: np.ndarray, pixel_size,
                      mode: str):
    """Distance metrics for a (Z, H, W) pair; returns (dict, skipped).

    mode="slice": per-slice 2-D distances averaged over comparable slices.
    mode="volume": one 3-D point set per volume (z in mm via slice
    thickness), single distance per metric.
    """
    inplane = pixel_size[:2]
    if mode == "volume":
        def skel_pts(m):
            ys, xs = np.nonzero(skeletonize(m))
            return np.stack([ys * float(inplane[0]),
                             xs * float(inplane[1])], axis=1)

        pb = _pool_points_3d(pred, pixel_size, lambda m: boundary(m, inplane))
        gb = _pool_points_3d(gold, pixel_size, lambda m: boundary(m, inplane))
        out = surface_distances(pb, gb)
        ps = _pool_points_3d(pred, pixel_size, skel_pts)
        gs = _pool_points_3d(gold, pixel_size, skel_pts)
        if len(ps) == 0 or len(gs) == 0:
            warnings.warn("skeleton distance undefined for empty skeleton; "
                          "reported as missing")
            out.update({"SHD": float("nan"), "SMD": float("nan")})
        else:
            d_ab = _pairwise_min(ps, gs)
            d_ba = _pairwise_min(gs, ps)
            out["SHD"] = float(max(d_ab.max(), d_ba.max()))
            out["SMD"] = float(np.median(np.concatenate([d_ab, d_ba])))
        return out, 0
    per_slice = {k: [] for k in ("MSD", "HSD", "SHD", "SMD")}
    skipped = 0
    for z in range(pred.shape[0]):
        p, g = pred[z], gold[z]
        p_any, g_any = bool(p.any()), bool(g.any())
        if not p_any and not g_any:
            continue
        if p_any != g_any:
            skipped += 1
            continue
        sd = surface_distances(boundary(p, inplane), boundary(g, inplane))
        kd = skeleton_distances(p, g, inplane)
        for k in ("MSD", "HSD"):
            if not math.isnan(sd[k]):
                per_slice[k].append(sd[k])
        for k in ("SHD", "SMD"):
            if not math.isnan(kd[k]):
                per_slice[k].append(kd[k])
    out = {}
    for k, vals in per_slice.items():
        if vals:
            out[k] = float(np.mean(vals))
        else:
            warnings.warn(f"{k} undefined for volume (no comparable "
                          "slices); reported as missing")
            out[k] = float("nan")
    return out, skipped


def evaluate_volume(pred_volume: np.ndarray, gold_masks: dict,
                    pixel_size=(1.0, 1.0, 1.0), subject: str = "",
                    report: MetricReport | None = None,
                    distance_mode: str = "slice") -> MetricReport:
    """One MetricReport row per rater for a binarized (Z, H, W) prediction.

    Overlap and statistical metrics use confusion counts pooled over the
    volume; MSD/HSD/SHD/SMD are averaged over slices where both masks are
    nonempty (mismatched-emptiness slices are counted in
    `skipped_slices`).
    """
    if report is None:
        report = MetricReport()
    pred = np.asarray(pred_volume)
    if pred.ndim == 2:
        pred = pred[None]
    for rater in sorted(gold_masks):
        gold = np.asarray(gold_masks[rater])
        if gold.ndim == 2:
            gold = gold[None]
        _check_binary_pair(pred, gold)
        row = {"subject": subject, "rater": rater}
        row.update(overlap_metrics(confusion(pred, gold)))
        dist, skipped = _volume_distances(pred, gold, pixel_size,
                                          distance_mode)
        row.update(dist)
        row.update(table3_metrics(pred, gold))
        report.rows.append(row)
        report.skipped_slices += skipped
    return report


def write_report_csv(report: MetricReport, path) -> None:
    """One row per subject×rater; fixed column order; NaN left blank."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("subject", "rater") + ALL_COLUMNS)
        for r in report.rows:
            w.writerow([r["subject"], r["rater"]]
                       + ["" if math.isnan(r[k]) else repr(r[k])
                          for k in ALL_COLUMNS])


def write_report_json(report: MetricReport, path) -> None:
    """Nested rows + aggregate mean/std block (NaN serialized as null)."""
    def clean(v):
        return None if isinstance(v, float) and math.isnan(v) else v

    payload = {
        "rows": [{k: clean(v) for k, v in r.items()} for r in report.rows],
        "skipped_slices": report.skipped_slices,
        "aggregates": {k: {kk: clean(vv) for kk, vv in st.items()}
                       for k, st in report.aggregates().items()},
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")
