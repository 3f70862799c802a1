"""Volume I/O, preprocessing, dataset splitting, and batch sampling.

Two on-disk formats are supported:

* a directory of 16-bit PGM (P5) axial slices plus a ``volume.json``
  sidecar -- the fully controlled native format used throughout the test
  suite;
* a deliberately minimal NIfTI-1 subset: single ``.nii`` / ``.nii.gz``
  files with datatype uint8, int16 or float32, honoring ``dim[1..3]``,
  ``pixdim[1..3]`` and the ``scl_slope``/``scl_inter`` intensity scaling.

The preprocessing pipeline is fixed: resample in-plane to a common pixel
size, center-crop each slice, then normalize intensities with per-volume
statistics.
"""

from __future__ import annotations

import gzip
import json
import re
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (DegenerateInputError, DimensionError, InvalidConfigError,
                     SchemaError, UnsupportedFormatError)


@dataclass
class Volume:
    """A stack of axial slices with physical pixel sizes and rater masks."""

    data: np.ndarray                  # (slices, H, W)
    pixel_size: tuple                 # (row mm, col mm, slice thickness mm)
    subject: str = ""
    site: str = ""
    masks: list = field(default_factory=list)   # 0..n binary (slices, H, W)

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 3:
            raise DimensionError(f"volume data must be 3-D, got {self.data.ndim}-D")
        if len(self.pixel_size) != 3 or min(self.pixel_size) <= 0:
            raise InvalidConfigError(
                f"pixel_size must be 3 positive extents, got {self.pixel_size}")
        self.pixel_size = tuple(float(p) for p in self.pixel_size)
        checked = []
        for m in self.masks:
            m = np.asarray(m)
            if m.shape != self.data.shape:
                raise DimensionError(
                    f"mask shape {m.shape} != data shape {self.data.shape}")
            vals = np.unique(m)
            if not np.isin(vals, (0, 1)).all():
                raise SchemaError(f"mask is not binary (values {vals[:5]}...)")
            checked.append(m.astype(np.uint8))
        self.masks = checked


@dataclass
class SliceSample:
    """One training example: a preprocessed slice and one rater's mask."""

    image: np.ndarray
    mask: np.ndarray
    subject: str = ""
    slice_index: int = 0
    rater: int = 0


# -- PGM + JSON sidecar ------------------------------------------------------

_SIDECAR = "volume.json"


def _read_pgm(path: Path) -> np.ndarray:
    raw = path.read_bytes()
    m = re.match(rb"P5\s+(?:#[^\n]*\n\s*)*(\d+)\s+(\d+)\s+(\d+)\s", raw)
    if m is None:
        raise UnsupportedFormatError(f"{path}: not a binary PGM (P5) file")
    w, h, maxval = (int(g) for g in m.groups())
    if maxval != 65535:
        raise UnsupportedFormatError(
            f"{path}: expected 16-bit PGM (maxval 65535), got {maxval}")
    pixels = np.frombuffer(raw, dtype=">u2", offset=m.end(), count=h * w)
    if pixels.size != h * w:
        raise SchemaError(f"{path}: truncated pixel data")
    return pixels.reshape(h, w).astype(np.uint16)


def _write_pgm(path: Path, img: np.ndarray) -> None:
    if img.min() < 0 or img.max() > 65535:
        raise DegenerateInputError(
            "PGM output requires values in [0, 65535]; rescale first")
    arr = np.round(img).astype(">u2")
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n65535\n" % (img.shape[1], img.shape[0]))
        f.write(arr.tobytes())


def _require(d: dict, key: str, where: str):
    if key not in d:
        raise SchemaError(f"{where}: missing required field {key!r}")
    return d[key]


def _read_pgm_dir(root: Path) -> Volume:
    sidecar = root / _SIDECAR
    if not sidecar.exists():
        raise SchemaError(f"{root}: missing {_SIDECAR} sidecar")
    meta = json.loads(sidecar.read_text())
    px = _require(meta, "pixel_size_mm", str(sidecar))
    names = _require(meta, "slices", str(sidecar))
    data = np.stack([_read_pgm(root / n) for n in names])
    masks = []
    for rater in meta.get("masks", []):
        if len(rater) != len(names):
            raise SchemaError(f"{sidecar}: mask slice count != image slice count")
        masks.append(np.stack([_read_pgm(root / n) for n in rater]))
    return Volume(data=data, pixel_size=tuple(px),
                  subject=meta.get("subject", root.name),
                  site=meta.get("site", ""), masks=masks)


def _write_pgm_dir(vol: Volume, root: Path) -> None:
    root.mkdir(parents=True, exist_ok=True)
    names = [f"slice_{i:04d}.pgm" for i in range(vol.data.shape[0])]
    for n, sl in zip(names, vol.data):
        _write_pgm(root / n, sl)
    meta = {"pixel_size_mm": list(vol.pixel_size), "slices": names,
            "subject": vol.subject, "site": vol.site}
    if vol.masks:
        meta["masks"] = []
        for r, m in enumerate(vol.masks):
            rnames = [f"mask_r{r}_{i:04d}.pgm" for i in range(m.shape[0])]
            for n, sl in zip(rnames, m):
                _write_pgm(root / n, sl.astype(np.uint16))
            meta["masks"].append(rnames)
    (root / _SIDECAR).write_text(json.dumps(meta, indent=1))


# -- minimal NIfTI-1 ---------------------------------------------------------

_NIFTI_DTYPES = {2: np.uint8, 4: np.int16, 16: np.float32}
_NIFTI_CODES = {np.dtype(np.uint8): (2, 8), np.dtype(np.int16): (4, 16),
                np.dtype(np.float32): (16, 32)}


def _read_nifti(path: Path) -> Volume:
    raw = path.read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    if len(raw) < 352:
        raise UnsupportedFormatError(f"{path}: file shorter than a NIfTI-1 header")
    for bo in ("<", ">"):
        (sizeof_hdr,) = struct.unpack_from(bo + "i", raw, 0)
        if sizeof_hdr == 348:
            break
    else:
        raise UnsupportedFormatError(f"{path}: sizeof_hdr != 348; not NIfTI-1")
    magic = raw[344:348]
    if magic not in (b"n+1\x00", b"ni1\x00"):
        raise UnsupportedFormatError(f"{path}: bad NIfTI magic {magic!r}")
    dim = struct.unpack_from(bo + "8h", raw, 40)
    datatype, _bitpix = struct.unpack_from(bo + "2h", raw, 70)
    pixdim = struct.unpack_from(bo + "8f", raw, 76)
    (vox_offset,) = struct.unpack_from(bo + "f", raw, 108)
    scl_slope, scl_inter = struct.unpack_from(bo + "2f", raw, 112)
    if datatype not in _NIFTI_DTYPES:
        raise UnsupportedFormatError(
            f"{path}: unsupported NIfTI datatype code {datatype} "
            f"(supported: uint8=2, int16=4, float32=16)")
    if dim[0] < 3:
        if dim[0] != 2:
            raise UnsupportedFormatError(f"{path}: dim[0]={dim[0]}, need 2-D/3-D")
        nx, ny, nz = dim[1], dim[2], 1
    else:
        nx, ny, nz = dim[1], dim[2], dim[3]
    dt = np.dtype(_NIFTI_DTYPES[datatype]).newbyteorder(bo)
    n = nx * ny * nz
    arr = np.frombuffer(raw, dtype=dt, count=n, offset=int(vox_offset))
    if arr.size != n:
        raise SchemaError(f"{path}: truncated NIfTI data section")
    # x varies fastest on disk, so the C-ordered view is (z, y, x)
    data = arr.reshape(nz, ny, nx).astype(np.float32)
    if scl_slope not in (0.0, 1.0) or scl_inter != 0.0:
        slope = scl_slope if scl_slope != 0.0 else 1.0
        data = data * np.float32(slope) + np.float32(scl_inter)
    px = (abs(pixdim[2]) or 1.0, abs(pixdim[1]) or 1.0, abs(pixdim[3]) or 1.0)
    return Volume(data=data, pixel_size=px, subject=path.stem.split(".")[0])


def _write_nifti(vol: Volume, path: Path) -> None:
    data = np.asarray(vol.data)
    if data.dtype not in _NIFTI_CODES:
        data = data.astype(np.float32)
    code, bitpix = _NIFTI_CODES[data.dtype]
    nz, ny, nx = data.shape
    hdr = bytearray(352)
    struct.pack_into("<i", hdr, 0, 348)
    struct.pack_into("<8h", hdr, 40, 3, nx, ny, nz, 1, 1, 1, 1)
    struct.pack_into("<2h", hdr, 70, code, bitpix)
    struct.pack_into("<8f", hdr, 76, 1.0, vol.pixel_size[1], vol.pixel_size[0],
                     vol.pixel_size[2], 0, 0, 0, 0)
    struct.pack_into("<f", hdr, 108, 352.0)
    struct.pack_into("<2f", hdr, 112, 1.0, 0.0)
    hdr[344:348] = b"n+1\x00"
    payload = bytes(hdr) + data.astype(data.dtype.newbyteorder("<")).tobytes()
    if path.suffix == ".gz":
        # fixed mtime so identical volumes produce identical files
        with open(path, "wb") as f:
            with gzip.GzipFile(fileobj=f, mode="wb", mtime=0) as gz:
                gz.write(payload)
    else:
        path.write_bytes(payload)


# -- public I/O --------------------------------------------------------------


def read_volume(path) -> Volume:
    """Load a volume from a PGM slice directory or a NIfTI-1 file."""
    p = Path(path)
    if p.is_dir():
        return _read_pgm_dir(p)
    if not p.exists():
        raise UnsupportedFormatError(f"{p}: no such file or directory")
    if p.name.endswith((".nii", ".nii.gz")):
        return _read_nifti(p)
    raise UnsupportedFormatError(
        f"{p}: unrecognized volume path (expected a .nii/.nii.gz file "
        "or a PGM slice directory)")


def write_volume(vol: Volume, path) -> None:
    """Write a volume in the format implied by `path` (directory or .nii)."""
    p = Path(path)
    if p.name.endswith((".nii", ".nii.gz")):
        _write_nifti(vol, p)
    else:
        _write_pgm_dir(vol, p)


# -- preprocessing -----------------------------------------------------------


def _bilinear(img: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Sample `img` at fractional (row, col) grids with edge clamping."""
    H, W = img.shape
    r0 = np.clip(np.floor(rows).astype(np.int64), 0, H - 1)
    c0 = np.clip(np.floor(cols).astype(np.int64), 0, W - 1)
    r1 = np.minimum(r0 + 1, H - 1)
    c1 = np.minimum(c0 + 1, W - 1)
    fr = np.clip(rows, 0, H - 1) - r0
    fc = np.clip(cols, 0, W - 1) - c0
    top = img[r0[:, None], c0[None, :]] * (1 - fc)[None, :] \
        + img[r0[:, None], c1[None, :]] * fc[None, :]
    bot = img[r1[:, None], c0[None, :]] * (1 - fc)[None, :] \
        + img[r1[:, None], c1[None, :]] * fc[None, :]
    return top * (1 - fr)[:, None] + bot * fr[:, None]


def resample_inplane(vol: Volume, target=(0.25, 0.25)) -> Volume:
    """Resample every slice to `target` (row mm, col mm) pixel size.

    Intensities are interpolated bilinearly on pixel centers; masks are
    warped with the same transform and re-binarized at 0.5. The slice
    axis is untouched.
    """
    tr, tc = float(target[0]), float(target[1])
    if tr <= 0 or tc <= 0:
        raise InvalidConfigError(f"target pixel size must be positive, got {target}")
    sr, sc, thick = vol.pixel_size
    if (sr, sc) == (tr, tc):
        return vol
    S, H, W = vol.data.shape
    if H <= 1 or W <= 1:
        raise DegenerateInputError("cannot resample a <=1-pixel-wide volume")
    Ho = max(int(round(H * sr / tr)), 1)
    Wo = max(int(round(W * sc / tc)), 1)
    # pixel-center mapping: output center i sits at (i + 0.5)*t/s - 0.5 in
    # source pixel coordinates
    rows = (np.arange(Ho) + 0.5) * (tr / sr) - 0.5
    cols = (np.arange(Wo) + 0.5) * (tc / sc) - 0.5
    data = np.stack([_bilinear(sl.astype(np.float64), rows, cols)
                     for sl in vol.data]).astype(np.float32)
    masks = []
    for m in vol.masks:
        warped = np.stack([_bilinear(sl.astype(np.float64), rows, cols)
                           for sl in m])
        masks.append((warped >= 0.5).astype(np.uint8))
    return Volume(data=data, pixel_size=(tr, tc, thick),
                  subject=vol.subject, site=vol.site, masks=masks)


def center_crop(sl: np.ndarray, size=(200, 200)) -> np.ndarray:
    """Center crop (or zero-pad) a 2-D slice to `size`.

    Odd differences leave the extra pixel on the bottom/right, i.e. the
    window is tied toward the top-left.
    """
    if sl.ndim != 2:
        raise DimensionError(f"center_crop expects a 2-D slice, got {sl.ndim}-D")
    th, tw = size
    out = sl
    for axis, t in ((0, th), (1, tw)):
        n = out.shape[axis]
        if n > t:
            start = (n - t) // 2
            out = out[start:start + t] if axis == 0 else out[:, start:start + t]
        elif n < t:
            before = (t - n) // 2
            pad = [(0, 0), (0, 0)]
            pad[axis] = (before, t - n - before)
            out = np.pad(out, pad)
    return out


def crop_placement(shape, size=(200, 200)):
    """(row_offset, col_offset) of the original inside the cropped frame.

    Negative offsets mean the original was cropped; positive mean it was
    padded. Used to invert center_crop when writing predictions back.
    """
    offs = []
    for n, t in zip(shape, size):
        offs.append((t - n) // 2 if n < t else -((n - t) // 2))
    return tuple(offs)


def uncrop(sl: np.ndarray, orig_shape, size=(200, 200)) -> np.ndarray:
    """Place a cropped/padded slice back into its original geometry."""
    ro, co = crop_placement(orig_shape, size)
    out = np.zeros(orig_shape, dtype=sl.dtype)
    src_r = slice(max(ro, 0), max(ro, 0) + min(orig_shape[0], size[0]))
    src_c = slice(max(co, 0), max(co, 0) + min(orig_shape[1], size[1]))
    dst_r = slice(max(-ro, 0), max(-ro, 0) + min(orig_shape[0], size[0]))
    dst_c = slice(max(-co, 0), max(-co, 0) + min(orig_shape[1], size[1]))
    out[dst_r, dst_c] = sl[src_r, src_c]
    return out


def normalize_volume(vol: Volume) -> Volume:
    """Mean-center and unit-scale intensities using per-volume statistics."""
    d = vol.data.astype(np.float32)
    mu = float(d.mean())
    sd = float(d.std())
    if sd == 0.0:
        raise DegenerateInputError("volume has zero intensity variance")
    return Volume(data=(d - mu) / np.float32(sd), pixel_size=vol.pixel_size,
                  subject=vol.subject, site=vol.site, masks=vol.masks)


def preprocess_volume(vol: Volume, target=(0.25, 0.25), size=(200, 200)) -> Volume:
    """The full pipeline: resample -> center-crop -> normalize."""
    vol = resample_inplane(vol, target)
    data = np.stack([center_crop(sl, size) for sl in vol.data])
    masks = [np.stack([center_crop(sl, size) for sl in m]) for m in vol.masks]
    vol = Volume(data=data, pixel_size=vol.pixel_size, subject=vol.subject,
                 site=vol.site, masks=masks)
    return normalize_volume(vol)


# -- splitting and sampling --------------------------------------------------


def evenly_spaced_indices(n: int, k: int) -> list:
    """k indices spread over range(n): round(i*(n-1)/(k-1))."""
    if k > n:
        raise InvalidConfigError(f"cannot pick {k} evenly spaced out of {n}")
    if k == 1:
        return [0]
    return [int(round(i * (n - 1) / (k - 1))) for i in range(k)]


def split_by_subject(volumes, val_per_site: int = 2):
    """Hold out `val_per_site` subjects per site (last in sorted order)."""
    by_site = {}
    for v in sorted(volumes, key=lambda v: (v.site, v.subject)):
        by_site.setdefault(v.site, []).append(v)
    train, val = [], []
    for site, vols in sorted(by_site.items()):
        if val_per_site >= len(vols):
            raise InvalidConfigError(
                f"site {site!r} has {len(vols)} subjects; cannot hold out "
                f"{val_per_site}")
        train.extend(vols[:-val_per_site])
        val.extend(vols[-val_per_site:])
    return train, val


def split_by_slices(volume: Volume, counts=(15, 7, 8)):
    """Evenly-spaced slice split of one volume into train/val/test lists.

    Train indices are evenly spaced over all slices; validation indices
    evenly spaced over the remainder; the rest of the first
    train+val+test picks goes to test.
    """
    n = volume.data.shape[0]
    k_train, k_val, k_test = counts
    if k_train + k_val + k_test > n:
        raise InvalidConfigError(
            f"split {counts} needs {k_train + k_val + k_test} slices, have {n}")
    train = evenly_spaced_indices(n, k_train)
    remaining = [i for i in range(n) if i not in set(train)]
    val = [remaining[j] for j in evenly_spaced_indices(len(remaining), k_val)]
    remaining = [i for i in remaining if i not in set(val)]
    test = [remaining[j] for j in evenly_spaced_indices(len(remaining), k_test)]
    return train, val, test


def volume_slices(vol: Volume):
    """Flatten a volume into per-slice records (image, rater masks, meta)."""
    out = []
    for i in range(vol.data.shape[0]):
        out.append({"image": vol.data[i],
                    "masks": [m[i] for m in vol.masks],
                    "subject": vol.subject, "slice_index": i})
    return out


def sample_batch(train_slices, batch_size: int = 11,
                 rng: np.random.Generator | None = None):
    """Draw slices uniformly with replacement; rater chosen uniformly.

    Slices without any rater mask are skipped with a warning (they cannot
    supervise training).
    """
    if rng is None:
        rng = np.random.default_rng()
    usable = [s for s in train_slices if s["masks"]]
    if len(usable) < len(train_slices):
        warnings.warn(f"skipping {len(train_slices) - len(usable)} slices "
                      "with no rater mask")
    if not usable:
        raise DegenerateInputError("no slices with masks to sample from")
    batch = []
    for _ in range(batch_size):
        s = usable[int(rng.integers(0, len(usable)))]
        rater = int(rng.integers(0, len(s["masks"])))
        batch.append(SliceSample(image=s["image"], mask=s["masks"][rater],
                                 subject=s["subject"],
                                 slice_index=s["slice_index"], rater=rater))
    return batch
