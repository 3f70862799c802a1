"""Evaluation metrics vs independent brute-force oracles."""

import json
import math
import warnings

import numpy as np
import pytest

from conftest import (boundary_reference, confusion_reference, directed_dists,
                      zhang_suen_reference)
from gmseg import metrics as M


def rand_mask(rng, h, w, p=0.4):
    return (rng.uniform(size=(h, w)) < p).astype(np.uint8)


def test_confusion_matches_reference():
    rng = np.random.default_rng(0)
    for _ in range(30):
        pred, gold = rand_mask(rng, 9, 7), rand_mask(rng, 9, 7)
        c = M.confusion(pred, gold)
        assert (c.tp, c.fp, c.fn, c.tn) == confusion_reference(pred, gold)


def test_overlap_metrics_formulas():
    rng = np.random.default_rng(1)
    for _ in range(50):
        pred, gold = rand_mask(rng, 8, 8), rand_mask(rng, 8, 8)
        c = M.confusion(pred, gold)
        tp, fp, fn, tn = c.tp, c.fp, c.fn, c.tn
        if min(tp + fn, tn + fp, tp + fp, tp) == 0:
            continue
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            o = M.overlap_metrics(c)
        assert math.isclose(o["DSC"], 2 * tp / (2 * tp + fp + fn),
                            abs_tol=1e-12)
        assert math.isclose(o["TPR"], 100 * tp / (tp + fn), abs_tol=1e-9)
        assert math.isclose(o["TNR"], 100 * tn / (tn + fp), abs_tol=1e-9)
        assert math.isclose(o["PPV"], 100 * tp / (tp + fp), abs_tol=1e-9)
        assert math.isclose(o["JI"], tp / (tp + fp + fn), abs_tol=1e-12)
        assert math.isclose(o["CC"], 100 * (1 - (fp + fn) / tp), abs_tol=1e-9)
        # conformity identity against DSC
        assert math.isclose(o["CC"], 100 * (3 - 2 / o["DSC"]), abs_tol=1e-9)


def test_undefined_overlap_reported_as_nan():
    c = M.confusion(np.zeros((4, 4), np.uint8), np.zeros((4, 4), np.uint8))
    with pytest.warns(UserWarning):
        o = M.overlap_metrics(c)
    assert math.isnan(o["DSC"]) and math.isnan(o["CC"])


def test_boundary_matches_reference():
    rng = np.random.default_rng(2)
    for _ in range(20):
        m = rand_mask(rng, 10, 11)
        got = M.boundary(m, (0.5, 0.7))
        ref = boundary_reference(m, (0.5, 0.7))
        assert got.shape == ref.shape
        if len(ref):
            assert np.allclose(sorted(map(tuple, got)),
                               sorted(map(tuple, ref)))


def test_surface_distances_match_reference():
    rng = np.random.default_rng(3)
    for _ in range(30):
        a = rand_mask(rng, 12, 12, 0.3)
        b = rand_mask(rng, 12, 12, 0.3)
        ba, bb = M.boundary(a), M.boundary(b)
        if len(ba) == 0 or len(bb) == 0:
            continue
        d = M.surface_distances(ba, bb)
        d_ab = directed_dists(ba, bb)
        d_ba = directed_dists(bb, ba)
        assert math.isclose(d["MSD"], float(np.mean(d_ab + d_ba)),
                            abs_tol=1e-9)
        assert math.isclose(d["HSD"], max(max(d_ab), max(d_ba)),
                            abs_tol=1e-9)


def test_surface_distance_zero_for_identical():
    m = np.zeros((8, 8), np.uint8)
    m[2:6, 2:6] = 1
    b = M.boundary(m)
    d = M.surface_distances(b, b)
    assert d["MSD"] == 0.0 and d["HSD"] == 0.0


def test_skeletonize_matches_reference():
    rng = np.random.default_rng(4)
    shapes = []
    for _ in range(25):
        m = np.zeros((16, 16), np.uint8)
        r0, c0 = rng.integers(0, 8, 2)
        h, w = rng.integers(3, 8, 2)
        m[r0:r0 + h, c0:c0 + w] = 1
        if rng.uniform() < 0.5:  # add a second rectangle
            r0, c0 = rng.integers(0, 8, 2)
            m[r0:r0 + 3, c0:c0 + 6] = 1
        shapes.append(m)
    for m in shapes:
        assert np.array_equal(M.skeletonize(m), zhang_suen_reference(m))


def test_skeletonize_properties():
    m = np.zeros((20, 20), np.uint8)
    m[5:15, 8:12] = 1  # vertical bar
    sk = M.skeletonize(m)
    assert sk.sum() > 0
    assert np.all(m[sk > 0] == 1)  # skeleton is a subset of the mask
    assert sk.sum() < m.sum()


def test_skeleton_distances_known_shift():
    a = np.zeros((20, 20), np.uint8)
    b = np.zeros((20, 20), np.uint8)
    a[4:16, 9:12] = 1
    b[4:16, 9:12] = 1
    b = np.roll(b, 4, axis=1)  # shift perpendicular to the bar
    d = M.skeleton_distances(a, b, (1.0, 1.0))
    assert math.isclose(d["SHD"], 4.0, abs_tol=1e-9)
    assert math.isclose(d["SMD"], 4.0, abs_tol=1e-9)


def test_distances_scale_with_pixel_size():
    rng = np.random.default_rng(5)
    a = rand_mask(rng, 14, 14, 0.3)
    b = rand_mask(rng, 14, 14, 0.3)
    d1 = M.surface_distances(M.boundary(a, (1.0, 1.0)),
                             M.boundary(b, (1.0, 1.0)))
    d2 = M.surface_distances(M.boundary(a, (2.0, 2.0)),
                             M.boundary(b, (2.0, 2.0)))
    assert math.isclose(d2["MSD"], 2 * d1["MSD"], rel_tol=1e-12)
    assert math.isclose(d2["HSD"], 2 * d1["HSD"], rel_tol=1e-12)
    s1 = M.skeleton_distances(a, b, (1.0, 1.0))
    s2 = M.skeleton_distances(a, b, (2.0, 2.0))
    assert math.isclose(s2["SHD"], 2 * s1["SHD"], rel_tol=1e-12)
    assert math.isclose(s2["SMD"], 2 * s1["SMD"], rel_tol=1e-12)


def test_table_metrics_formulas():
    rng = np.random.default_rng(6)
    for _ in range(30):
        pred, gold = rand_mask(rng, 8, 8), rand_mask(rng, 8, 8)
        if gold.sum() in (0, gold.size) or pred.sum() == 0:
            continue
        t = M.table3_metrics(pred, gold)
        tp, fp, fn, tn = confusion_reference(pred, gold)
        n = gold.size
        iu_fg = tp / (tp + fp + fn)
        iu_bg = tn / (tn + fn + fp)
        assert math.isclose(t["Dice"], 2 * tp / (2 * tp + fp + fn),
                            abs_tol=1e-12)
        assert math.isclose(t["PixelAccuracy"], (tp + tn) / n, abs_tol=1e-12)
        assert math.isclose(t["MeanAccuracy"],
                            0.5 * (tp / (tp + fn) + tn / (tn + fp)),
                            abs_tol=1e-12)
        assert math.isclose(t["Recall"], tp / (tp + fn), abs_tol=1e-12)
        assert math.isclose(t["Precision"], tp / (tp + fp), abs_tol=1e-12)
        assert math.isclose(t["MeanIU"], 0.5 * (iu_fg + iu_bg), abs_tol=1e-12)
        assert math.isclose(t["FreqWeightedIU"],
                            ((tp + fn) * iu_fg + (tn + fp) * iu_bg) / n,
                            abs_tol=1e-12)


def test_column_sets():
    assert len(M.ALL_COLUMNS) == 17
    assert set(M.CHALLENGE_COLUMNS) == {"DSC", "MSD", "HSD", "SHD", "SMD",
                                        "TPR", "TNR", "PPV", "JI", "CC"}
    assert len(M.TABLE_COLUMNS) == 7


def test_evaluate_volume_identity():
    rng = np.random.default_rng(7)
    gold = np.zeros((3, 16, 16), np.uint8)
    gold[:, 4:12, 5:13] = 1
    report = M.evaluate_volume(gold, {"rater1": gold}, (0.5, 0.5, 2.0), "s1")
    row = report.rows[0]
    assert row["DSC"] == 1.0
    assert row["MSD"] == 0.0 and row["HSD"] == 0.0
    assert row["SHD"] == 0.0 and row["SMD"] == 0.0


def test_evaluate_volume_multiple_raters_and_aggregates():
    rng = np.random.default_rng(8)
    pred = rand_mask(rng, 16, 16)[None].repeat(2, axis=0)
    golds = {"r1": rand_mask(rng, 16, 16)[None].repeat(2, axis=0),
             "r2": rand_mask(rng, 16, 16)[None].repeat(2, axis=0)}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        report = M.evaluate_volume(pred, golds, (1, 1, 1), "s")
    assert len(report.rows) == 2
    agg = report.aggregates()
    assert "DSC" in agg and len(agg["DSC"]) == 2  # (mean, std)


def test_report_csv_json_round_trip(tmp_path):
    gold = np.zeros((2, 10, 10), np.uint8)
    gold[:, 3:7, 3:7] = 1
    report = M.evaluate_volume(gold, {"r1": gold}, (1, 1, 1), "s")
    csv_path, json_path = tmp_path / "r.csv", tmp_path / "r.json"
    M.write_report_csv(report, csv_path)
    M.write_report_json(report, json_path)
    lines = csv_path.read_text().strip().splitlines()
    assert len(lines) == 2
    header = lines[0].split(",")
    for col in M.ALL_COLUMNS:
        assert col in header
    payload = json.loads(json_path.read_text())
    assert payload["rows"][0]["DSC"] == 1.0
