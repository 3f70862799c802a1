"""Checkpoint serialization.

Layout (all integers little-endian):

    magic   b"GMDL"
    u16     format version (currently 1)
    u8      precision tag: 4 (float32) or 8 (float64)
    3 sections, each:
        u16  section-name length, name bytes (ascii)
        u64  payload length, payload bytes
        u32  CRC32 of the payload

Sections, in order:
    config    canonical JSON: model kind, model config, build seed
    tensors   named tensor table: parameters then BN running stats
    optimizer JSON meta (step count, betas, epsilon) + moment tensor table

A tensor table is a u32 record count followed by records of
    u16 name length, name bytes, u8 dtype code (1=f32, 2=f64),
    u8 ndim, u32 dims..., raw little-endian data.

Loading verifies magic, version and every CRC before touching any state,
so a truncated or corrupted file never yields a partial model.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import asdict

import numpy as np

from .engine import AdamState
from .errors import IntegrityError, UnsupportedFormatError
from .models import (AsppConfig, Network, UnetConfig, build_aspp, build_unet)

MAGIC = b"GMDL"
VERSION = 1
_DTYPE_CODE = {np.dtype(np.float32): 1, np.dtype(np.float64): 2}
_CODE_DTYPE = {1: np.dtype("<f4"), 2: np.dtype("<f8")}


def _pack_tensor_table(items) -> bytes:
    parts = [struct.pack("<I", len(items))]
    for name, arr in items:
        nb = name.encode("ascii")
        arr = np.ascontiguousarray(arr)
        parts.append(struct.pack("<H", len(nb)))
        parts.append(nb)
        parts.append(struct.pack("<BB", _DTYPE_CODE[arr.dtype], arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes())
    return b"".join(parts)


def _unpack_tensor_table(buf: bytes):
    out = {}
    ofs = 0
    try:
        (count,) = struct.unpack_from("<I", buf, ofs); ofs += 4
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", buf, ofs); ofs += 2
            name = buf[ofs:ofs + nlen].decode("ascii"); ofs += nlen
            code, ndim = struct.unpack_from("<BB", buf, ofs); ofs += 2
            shape = struct.unpack_from(f"<{ndim}I", buf, ofs); ofs += 4 * ndim
            dt = _CODE_DTYPE[code]
            nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
            arr = np.frombuffer(buf[ofs:ofs + nbytes], dtype=dt).reshape(shape)
            if arr.nbytes != nbytes:
                raise IntegrityError("tensor table truncated")
            ofs += nbytes
            out[name] = arr.copy()
    except (struct.error, KeyError) as e:
        raise IntegrityError(f"malformed tensor table: {e}") from e
    if ofs != len(buf):
        raise IntegrityError("trailing bytes in tensor table")
    return out


def _write_section(fh, name: str, payload: bytes) -> None:
    nb = name.encode("ascii")
    fh.write(struct.pack("<H", len(nb)))
    fh.write(nb)
    fh.write(struct.pack("<Q", len(payload)))
    fh.write(payload)
    fh.write(struct.pack("<I", zlib.crc32(payload)))


def _read_section(buf: bytes, ofs: int, expect: str):
    try:
        (nlen,) = struct.unpack_from("<H", buf, ofs); ofs += 2
        name = buf[ofs:ofs + nlen].decode("ascii"); ofs += nlen
        (plen,) = struct.unpack_from("<Q", buf, ofs); ofs += 8
        payload = buf[ofs:ofs + plen]; ofs += plen
        if len(payload) != plen:
            raise IntegrityError(f"section {expect!r} truncated")
        (crc,) = struct.unpack_from("<I", buf, ofs); ofs += 4
    except struct.error as e:
        raise IntegrityError(f"truncated checkpoint near section {expect!r}") from e
    if name != expect:
        raise IntegrityError(f"expected section {expect!r}, found {name!r}")
    if zlib.crc32(payload) != crc:
        raise IntegrityError(f"CRC mismatch in section {name!r}")
    return payload, ofs


def save_checkpoint(network: Network, optimizer_state: AdamState | None,
                    path) -> None:
    cfg = {"kind": network.kind, "config": asdict(network.config),
           "seed": network.seed, "dtype": network.dtype.name}
    config_payload = json.dumps(cfg, sort_keys=True,
                                separators=(",", ":")).encode()
    tensors = [(n, t.data) for n, t in network.named_parameters()]
    for name, bn in network.named_buffers():
        tensors.append((name, bn.running_mean if name.endswith("running_mean")
                        else bn.running_var))
    opt = {"present": optimizer_state is not None}
    moments = []
    if optimizer_state is not None:
        opt.update(step_count=optimizer_state.step_count,
                   beta1=optimizer_state.beta1, beta2=optimizer_state.beta2,
                   epsilon=optimizer_state.epsilon,
                   n_params=len(optimizer_state.m))
        for i, (m, v) in enumerate(zip(optimizer_state.m, optimizer_state.v)):
            moments.append((f"m{i}", m))
            moments.append((f"v{i}", v))
    opt_meta = json.dumps(opt, sort_keys=True, separators=(",", ":")).encode()
    opt_payload = struct.pack("<I", len(opt_meta)) + opt_meta + _pack_tensor_table(moments)

    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<HB", VERSION, network.dtype.itemsize))
        _write_section(fh, "config", config_payload)
        _write_section(fh, "tensors", _pack_tensor_table(tensors))
        _write_section(fh, "optimizer", opt_payload)


def load_checkpoint(path):
    """Rebuild (network, optimizer_state) exactly as saved."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != MAGIC:
        raise UnsupportedFormatError(f"{path}: not a GMDL checkpoint")
    try:
        version, prec = struct.unpack_from("<HB", buf, 4)
    except struct.error as e:
        raise IntegrityError("truncated checkpoint header") from e
    if version != VERSION:
        raise UnsupportedFormatError(
            f"checkpoint format version {version} unsupported (expected {VERSION})")
    if prec not in (4, 8):
        raise UnsupportedFormatError(f"unknown precision tag {prec}")
    ofs = 7
    config_payload, ofs = _read_section(buf, ofs, "config")
    tensor_payload, ofs = _read_section(buf, ofs, "tensors")
    opt_payload, ofs = _read_section(buf, ofs, "optimizer")
    if ofs != len(buf):
        raise IntegrityError("trailing bytes after final section")

    meta = json.loads(config_payload)
    dtype = np.dtype(meta["dtype"])
    cfg = meta["config"]
    if meta["kind"] == "aspp":
        cfg["dilations"] = tuple(cfg["dilations"])
        net = build_aspp(AsppConfig(**cfg), seed=meta["seed"], dtype=dtype)
    elif meta["kind"] == "unet":
        net = build_unet(UnetConfig(**cfg), seed=meta["seed"], dtype=dtype)
    else:
        raise UnsupportedFormatError(f"unknown model kind {meta['kind']!r}")

    table = _unpack_tensor_table(tensor_payload)
    for name, t in net.named_parameters():
        if name not in table:
            raise IntegrityError(f"checkpoint missing tensor {name!r}")
        arr = table[name].astype(dtype)
        if arr.shape != t.data.shape:
            raise IntegrityError(f"tensor {name!r} shape mismatch")
        t.data = np.ascontiguousarray(arr)
    for name, bn in net.named_buffers():
        if name not in table:
            raise IntegrityError(f"checkpoint missing buffer {name!r}")
        arr = np.ascontiguousarray(table[name].astype(dtype))
        if name.endswith("running_mean"):
            bn.running_mean = arr
        else:
            bn.running_var = arr

    (mlen,) = struct.unpack_from("<I", opt_payload, 0)
    opt_meta = json.loads(opt_payload[4:4 + mlen])
    opt_state = None
    if opt_meta["present"]:
        opt_state = AdamState(opt_meta["beta1"], opt_meta["beta2"],
                              opt_meta["epsilon"])
        opt_state.step_count = opt_meta["step_count"]
        moments = _unpack_tensor_table(opt_payload[4 + mlen:])
        for i in range(opt_meta["n_params"]):
            opt_state.m.append(np.ascontiguousarray(moments[f"m{i}"].astype(dtype)))
            opt_state.v.append(np.ascontiguousarray(moments[f"v{i}"].astype(dtype)))
    return net, opt_state
