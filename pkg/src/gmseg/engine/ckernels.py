"""Compile-on-first-use loader for the C hot kernels.

The shared object is built from kernels.c with a system C compiler and
cached under ~/.cache/gmseg keyed by a hash of the source. When no
compiler is available (or GMSEG_NO_CKERNELS is set) the engine falls back
to the pure-numpy implementations in conv.py / norm.py, which compute the
same results.
"""

import ctypes
import hashlib
import os
import subprocess
import sys
import tempfile
from pathlib import Path

import numpy as np

_SRC = Path(__file__).with_name("kernels.c")
_lib = None
_tried = False


def _cache_dir() -> Path:
    base = os.environ.get("XDG_CACHE_HOME") or os.path.join(Path.home(), ".cache")
    return Path(base) / "gmseg"


def _compiler():
    for cc in (os.environ.get("CC"), "cc", "gcc", "clang"):
        if cc:
            from shutil import which
            if which(cc):
                return cc
    return None


def _build() -> ctypes.CDLL | None:
    cc = _compiler()
    if cc is None:
        return None
    src = _SRC.read_bytes()
    tag = hashlib.sha256(src + cc.encode()).hexdigest()[:16]
    cache = _cache_dir()
    so = cache / f"kernels_{tag}.so"
    if not so.exists():
        cache.mkdir(parents=True, exist_ok=True)
        # strict FP: no fast-math, no fma contraction (bit-compat with numpy path)
        cmd = [cc, "-O3", "-march=native", "-ffp-contract=off", "-fno-math-errno",
               "-shared", "-fPIC", str(_SRC), "-o", ""]
        with tempfile.NamedTemporaryFile(dir=cache, suffix=".so", delete=False) as tf:
            cmd[-1] = tf.name
        try:
            subprocess.run(cmd, check=True, capture_output=True)
            os.replace(cmd[-1], so)
        except (subprocess.CalledProcessError, OSError):
            try:
                os.unlink(cmd[-1])
            except OSError:
                pass
            return None
    try:
        return ctypes.CDLL(str(so))
    except OSError:
        return None


def _setup(lib: ctypes.CDLL) -> None:
    i, z = ctypes.c_int, ctypes.c_size_t
    for suffix, ptr in (("f32", ctypes.POINTER(ctypes.c_float)),
                        ("f64", ctypes.POINTER(ctypes.c_double))):
        for name in ("conv_fwd", "conv_dw"):
            fn = getattr(lib, f"{name}_{suffix}")
            fn.argtypes = [ptr, ptr, ptr] + [i] * 10
            fn.restype = None
        fn = getattr(lib, f"dropout_{suffix}")
        fn.argtypes = [ptr, ptr, ptr, z, ctypes.c_double,
                       ctypes.c_float if suffix == "f32" else ctypes.c_double,
                       ctypes.c_uint64]
        fn.restype = None
        fn = getattr(lib, f"relu_bwd_{suffix}")
        fn.argtypes = [ptr, ptr, ptr, z]
        fn.restype = None
        scalar = ctypes.c_float if suffix == "f32" else ctypes.c_double
        fn = getattr(lib, f"bnrd_fwd_{suffix}")
        fn.argtypes = [ptr] * 7 + [i, i, z, ctypes.c_double, scalar,
                                   ctypes.c_uint64]
        fn.restype = None
        fn = getattr(lib, f"bnrd_bwd_sums_{suffix}")
        fn.argtypes = [ptr] * 7 + [i, i, z]
        fn.restype = None
        fn = getattr(lib, f"bnrd_bwd_dx_{suffix}")
        fn.argtypes = [ptr] * 9 + [i, i, z, scalar, i]
        fn.restype = None
        fn = getattr(lib, f"bn_stats_{suffix}")
        fn.argtypes = [ptr, ptr, ptr, i, i, z]
        fn.restype = None


def _tune_malloc() -> None:
    """Raise glibc's mmap/trim thresholds so large activation buffers are
    recycled through the heap instead of being mmap'd and unmapped on every
    training step (which costs a page fault per 4 KiB touched). Best effort;
    silently skipped on non-glibc platforms.
    """
    try:
        libc = ctypes.CDLL(None)
        m_trim_threshold, m_mmap_threshold = -1, -3
        libc.mallopt(m_mmap_threshold, 256 << 20)
        libc.mallopt(m_trim_threshold, 256 << 20)
    except (OSError, AttributeError):
        pass


def get_lib() -> ctypes.CDLL | None:
    """The loaded kernel library, or None when unavailable."""
    global _lib, _tried
    if _tried:
        return _lib
    _tried = True
    if os.environ.get("GMSEG_NO_CKERNELS"):
        return None
    _tune_malloc()
    lib = _build()
    if lib is not None:
        try:
            _setup(lib)
        except AttributeError:
            lib = None
    _lib = lib
    return _lib


def available() -> bool:
    return get_lib() is not None


def _ptr(a: np.ndarray):
    if a.dtype == np.float32:
        return a.ctypes.data_as(ctypes.POINTER(ctypes.c_float))
    return a.ctypes.data_as(ctypes.POINTER(ctypes.c_double))


def _suffix(dtype) -> str:
    return "f32" if dtype == np.float32 else "f64"


def conv_fwd(xp, w, y, r):
    lib = get_lib()
    B, Ci, Hp, Wp = xp.shape
    _, Co, H, W = y.shape
    kh, kw = w.shape[2], w.shape[3]
    fn = getattr(lib, f"conv_fwd_{_suffix(xp.dtype)}")
    fn(_ptr(xp), _ptr(w), _ptr(y), B, Ci, Co, Hp, Wp, H, W, kh, kw, r)


def conv_dw(gy, xp, dw, r):
    lib = get_lib()
    B, Ci, Hp, Wp = xp.shape
    _, Co, H, W = gy.shape
    kh, kw = dw.shape[2], dw.shape[3]
    fn = getattr(lib, f"conv_dw_{_suffix(gy.dtype)}")
    fn(_ptr(gy), _ptr(xp), _ptr(dw), B, Ci, Co, Hp, Wp, H, W, kh, kw, r)


def dropout(x, y, mask, rate, scale, seed):
    lib = get_lib()
    fn = getattr(lib, f"dropout_{_suffix(x.dtype)}")
    fn(_ptr(x), _ptr(y), _ptr(mask), x.size, float(rate),
       x.dtype.type(scale), ctypes.c_uint64(seed))


def relu_bwd(y, g, gx):
    lib = get_lib()
    fn = getattr(lib, f"relu_bwd_{_suffix(y.dtype)}")
    fn(_ptr(y), _ptr(g), _ptr(gx), y.size)


def bnrd_fwd(d, mu, inv, gamma, beta, y, m3, rate, scale, seed):
    lib = get_lib()
    B, C = d.shape[0], d.shape[1]
    hw = d.shape[2] * d.shape[3]
    fn = getattr(lib, f"bnrd_fwd_{_suffix(d.dtype)}")
    fn(_ptr(d), _ptr(mu), _ptr(inv), _ptr(gamma), _ptr(beta),
       _ptr(y), _ptr(m3), B, C, hw, float(rate),
       d.dtype.type(scale), ctypes.c_uint64(seed))


def bnrd_bwd_sums(g, m3, d, mu, inv, s1, s2):
    lib = get_lib()
    B, C = g.shape[0], g.shape[1]
    hw = g.shape[2] * g.shape[3]
    fn = getattr(lib, f"bnrd_bwd_sums_{_suffix(g.dtype)}")
    fn(_ptr(g), _ptr(m3), _ptr(d), _ptr(mu), _ptr(inv), _ptr(s1), _ptr(s2),
       B, C, hw)


def bn_stats(d, mean, var):
    lib = get_lib()
    B, C = d.shape[0], d.shape[1]
    hw = d.shape[2] * d.shape[3]
    fn = getattr(lib, f"bn_stats_{_suffix(d.dtype)}")
    fn(_ptr(d), _ptr(mean), _ptr(var), B, C, hw)


def bnrd_bwd_dx(g, m3, d, mu, inv, s1, s2, coef, dx, n, batch_terms):
    lib = get_lib()
    B, C = g.shape[0], g.shape[1]
    hw = g.shape[2] * g.shape[3]
    fn = getattr(lib, f"bnrd_bwd_dx_{_suffix(g.dtype)}")
    fn(_ptr(g), _ptr(m3), _ptr(d), _ptr(mu), _ptr(inv), _ptr(s1), _ptr(s2),
       _ptr(coef), _ptr(dx), B, C, hw, g.dtype.type(n), int(batch_terms))
