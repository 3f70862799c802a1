"""Shared numerical oracles for the test suite.

Everything here is written independently of the package internals (plain
loops, exhaustive enumeration) so tests compare two implementations that
share no code.
"""

import numpy as np


def central_diff(f, x, eps=1e-6):
    """Central finite-difference gradient of scalar f w.r.t. ndarray x."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f(x)
        flat[i] = orig - eps
        fm = f(x)
        flat[i] = orig
        gf[i] = (fp - fm) / (2.0 * eps)
    return g


def max_rel_err(analytic, numeric, floor=1.0):
    """Largest |a - n| / max(floor, |n|) over all elements."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(floor, np.abs(numeric))
    return float(np.max(np.abs(analytic - numeric) / denom))


def conv_reference(x, w, dilation=1, stride=1, pad=None, mode="zeros"):
    """Naive dilated cross-correlation with explicit loops.

    x: (B, Ci, H, W); w: (Co, Ci, kh, kw); pad: (top, bottom, left, right),
    defaulting to centered "same" padding for stride 1.
    """
    B, Ci, H, W = x.shape
    Co, _, kh, kw = w.shape
    r = dilation
    if pad is None:
        span_h, span_w = r * (kh - 1), r * (kw - 1)
        pad = (span_h // 2, span_h - span_h // 2,
               span_w // 2, span_w - span_w // 2)
    pt, pb, pl, pr = pad
    if mode == "zeros":
        xp = np.zeros((B, Ci, H + pt + pb, W + pl + pr), dtype=x.dtype)
        xp[:, :, pt:pt + H, pl:pl + W] = x
    else:  # circular
        xp = np.concatenate([x[:, :, H - pt:], x, x[:, :, :pb]], axis=2)
        xp = np.concatenate([xp[:, :, :, W - pl:], xp, xp[:, :, :, :pr]], axis=3)
    Hp, Wp = xp.shape[2:]
    Ho = (Hp - r * (kh - 1) - 1) // stride + 1
    Wo = (Wp - r * (kw - 1) - 1) // stride + 1
    y = np.zeros((B, Co, Ho, Wo), dtype=x.dtype)
    for b in range(B):
        for co in range(Co):
            for i in range(Ho):
                for j in range(Wo):
                    acc = 0.0
                    for ci in range(Ci):
                        for a in range(kh):
                            for c in range(kw):
                                acc += (w[co, ci, a, c]
                                        * xp[b, ci, i * stride + r * a,
                                             j * stride + r * c])
                    y[b, co, i, j] = acc
    return y


def confusion_reference(pred, gold):
    """Per-pixel confusion counts via explicit iteration."""
    tp = fp = fn = tn = 0
    for p, g in zip(pred.reshape(-1).tolist(), gold.reshape(-1).tolist()):
        if p and g:
            tp += 1
        elif p and not g:
            fp += 1
        elif g:
            fn += 1
        else:
            tn += 1
    return tp, fp, fn, tn


def boundary_reference(mask, pixel_size=(1.0, 1.0)):
    """Foreground pixels with a background (or outside) 4-neighbor, in mm."""
    H, W = mask.shape
    pts = []
    for i in range(H):
        for j in range(W):
            if not mask[i, j]:
                continue
            edge = False
            for di, dj in ((-1, 0), (1, 0), (0, -1), (0, 1)):
                ni, nj = i + di, j + dj
                if ni < 0 or ni >= H or nj < 0 or nj >= W or not mask[ni, nj]:
                    edge = True
            if edge:
                pts.append((i * pixel_size[0], j * pixel_size[1]))
    return np.array(pts, dtype=np.float64).reshape(-1, 2)


def directed_dists(a, b):
    """For each point of a, its distance to the closest point of b."""
    out = []
    for p in a:
        best = min(float(np.hypot(p[0] - q[0], p[1] - q[1])) for q in b)
        out.append(best)
    return out


def zhang_suen_reference(mask):
    """Textbook two-subiteration thinning with per-pixel loops."""
    img = (np.asarray(mask) > 0).astype(np.uint8).copy()
    H, W = img.shape

    def nb(i, j):
        # p2..p9 clockwise starting north
        coords = [(i - 1, j), (i - 1, j + 1), (i, j + 1), (i + 1, j + 1),
                  (i + 1, j), (i + 1, j - 1), (i, j - 1), (i - 1, j - 1)]
        return [img[a, b] if 0 <= a < H and 0 <= b < W else 0
                for a, b in coords]

    changed = True
    while changed:
        changed = False
        for phase in (0, 1):
            to_del = []
            for i in range(H):
                for j in range(W):
                    if not img[i, j]:
                        continue
                    p = nb(i, j)
                    bsum = sum(p)
                    if not (2 <= bsum <= 6):
                        continue
                    a = sum(1 for k in range(8)
                            if p[k] == 0 and p[(k + 1) % 8] == 1)
                    if a != 1:
                        continue
                    if phase == 0:
                        if p[0] * p[2] * p[4] != 0 or p[2] * p[4] * p[6] != 0:
                            continue
                    else:
                        if p[0] * p[2] * p[6] != 0 or p[0] * p[4] * p[6] != 0:
                            continue
                    to_del.append((i, j))
            for i, j in to_del:
                img[i, j] = 0
            if to_del:
                changed = True
    return img
