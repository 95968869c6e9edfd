"""LZ4-frame and Zstandard-frame primitives via the system shared libraries.

Thin ctypes bindings to ``liblz4`` (LZ4F API) and ``libzstd``. Both produce
the standard public frame formats, so their output interoperates with any
other LZ4/Zstandard implementation.
"""

from __future__ import annotations

import ctypes
import ctypes.util
import functools
import threading

import numpy as np

from gridtx.exceptions import IntegrityError

__all__ = ["lz4_compress", "lz4_decompress", "zstd_compress", "zstd_decompress", "versions"]

_size_t = ctypes.c_size_t


def _load(name: str, fallback: str) -> ctypes.CDLL:
    path = ctypes.util.find_library(name) or fallback
    try:
        return ctypes.CDLL(path)
    except OSError as exc:  # pragma: no cover - environment problem
        raise ImportError(f"cannot load {name} shared library ({path}): {exc}") from exc


# --- LZ4 frame --------------------------------------------------------------

LZ4F_VERSION = 100


class _LZ4FFrameInfo(ctypes.Structure):
    _fields_ = [
        ("blockSizeID", ctypes.c_int),
        ("blockMode", ctypes.c_int),
        ("contentChecksumFlag", ctypes.c_int),
        ("frameType", ctypes.c_int),
        ("contentSize", ctypes.c_ulonglong),
        ("dictID", ctypes.c_uint),
        ("blockChecksumFlag", ctypes.c_int),
    ]


class _LZ4FPreferences(ctypes.Structure):
    _fields_ = [
        ("frameInfo", _LZ4FFrameInfo),
        ("compressionLevel", ctypes.c_int),
        ("autoFlush", ctypes.c_uint),
        ("favorDecSpeed", ctypes.c_uint),
        ("reserved", ctypes.c_uint * 3),
    ]


@functools.lru_cache(maxsize=None)
def _lz4():
    lib = _load("lz4", "liblz4.so.1")
    lib.LZ4F_compressFrameBound.restype = _size_t
    lib.LZ4F_compressFrameBound.argtypes = [_size_t, ctypes.POINTER(_LZ4FPreferences)]
    lib.LZ4F_compressFrame.restype = _size_t
    lib.LZ4F_compressFrame.argtypes = [
        ctypes.c_void_p, _size_t, ctypes.c_void_p, _size_t, ctypes.POINTER(_LZ4FPreferences)
    ]
    lib.LZ4F_isError.restype = ctypes.c_uint
    lib.LZ4F_isError.argtypes = [_size_t]
    lib.LZ4F_getErrorName.restype = ctypes.c_char_p
    lib.LZ4F_getErrorName.argtypes = [_size_t]
    lib.LZ4F_createDecompressionContext.restype = _size_t
    lib.LZ4F_createDecompressionContext.argtypes = [ctypes.POINTER(ctypes.c_void_p), ctypes.c_uint]
    lib.LZ4F_freeDecompressionContext.restype = _size_t
    lib.LZ4F_freeDecompressionContext.argtypes = [ctypes.c_void_p]
    lib.LZ4F_getFrameInfo.restype = _size_t
    lib.LZ4F_getFrameInfo.argtypes = [
        ctypes.c_void_p, ctypes.POINTER(_LZ4FFrameInfo), ctypes.c_void_p, ctypes.POINTER(_size_t)
    ]
    lib.LZ4F_decompress.restype = _size_t
    lib.LZ4F_decompress.argtypes = [
        ctypes.c_void_p, ctypes.c_void_p, ctypes.POINTER(_size_t), ctypes.c_void_p,
        ctypes.POINTER(_size_t), ctypes.c_void_p,
    ]
    lib.LZ4_versionString.restype = ctypes.c_char_p
    return lib


def _lz4_check(lib, code: int, what: str) -> int:
    if lib.LZ4F_isError(code):
        raise IntegrityError(f"lz4 {what}: {lib.LZ4F_getErrorName(code).decode()}")
    return code


def _pointer(data):
    """``(address, length, keepalive)`` for any contiguous bytes-like object."""
    if isinstance(data, bytes):
        return ctypes.cast(ctypes.c_char_p(data), ctypes.c_void_p).value, len(data), data
    arr = np.frombuffer(data, dtype=np.uint8)
    return arr.ctypes.data, arr.size, arr


def _out_buffer(size: int):
    buf = bytearray(size)
    return buf, ctypes.addressof((ctypes.c_char * max(size, 1)).from_buffer(buf)) if size else 0


def lz4_compress(data, acceleration: int) -> bytes:
    """LZ4 frame with content size and content checksum.

    LZ4F maps a negative compression level ``-k`` to acceleration ``k + 1``.
    """
    lib = _lz4()
    src, n, keep = _pointer(data)
    prefs = _LZ4FPreferences()
    prefs.frameInfo.contentChecksumFlag = 1
    prefs.frameInfo.contentSize = n
    prefs.compressionLevel = 1 - acceleration
    cap = lib.LZ4F_compressFrameBound(n, ctypes.byref(prefs))
    dst = ctypes.create_string_buffer(cap)
    written = _lz4_check(lib, lib.LZ4F_compressFrame(dst, cap, src, n, ctypes.byref(prefs)), "compress")
    return ctypes.string_at(dst, written)


_local = threading.local()


def _dctx(lib):
    # a finished frame leaves the context ready for the next one
    ctx = getattr(_local, "lz4_dctx", None)
    if ctx is None:
        ctx = ctypes.c_void_p()
        _lz4_check(lib, lib.LZ4F_createDecompressionContext(ctypes.byref(ctx), LZ4F_VERSION), "context")
        _local.lz4_dctx = ctx
    return ctx


def _drop_dctx(lib):
    ctx = getattr(_local, "lz4_dctx", None)
    if ctx is not None:
        _local.lz4_dctx = None
        lib.LZ4F_freeDecompressionContext(ctx)


def lz4_decompress(data, expected: int | None = None) -> bytearray:
    """Decode one LZ4 frame.

    ``expected`` skips the header probe when the caller already knows the
    decoded length; the frame's own content size is still enforced.
    """
    lib = _lz4()
    base, length, keep = _pointer(data)
    ctx = _dctx(lib)
    try:
        if expected is None:
            info = _LZ4FFrameInfo()
            consumed = _size_t(length)
            _lz4_check(lib, lib.LZ4F_getFrameInfo(ctx, ctypes.byref(info), base, ctypes.byref(consumed)), "header")
            pos = consumed.value
            expected = info.contentSize
        else:
            pos = 0
        # one spare byte so an understated content size is detected, not truncated
        out, addr = _out_buffer(expected + 1)
        written = 0
        hint = 1
        dst_size = _size_t()
        src_size = _size_t()
        while True:
            dst_size.value = expected + 1 - written
            src_size.value = length - pos
            hint = _lz4_check(
                lib,
                lib.LZ4F_decompress(ctx, addr + written, ctypes.byref(dst_size),
                                    base + pos, ctypes.byref(src_size), None),
                "decompress",
            )
            written += dst_size.value
            pos += src_size.value
            if hint == 0 or (src_size.value == 0 and dst_size.value == 0) or pos >= length:
                break
        if hint != 0:
            raise IntegrityError("lz4 frame truncated")
        if pos != length:
            raise IntegrityError("trailing bytes after lz4 frame")
        if written != expected:
            raise IntegrityError(f"lz4 frame decoded to {written} bytes, expected {expected}")
    except BaseException:
        # a context left mid-frame must not leak into the next call
        _drop_dctx(lib)
        raise
    del out[expected:]
    return out


# --- Zstandard --------------------------------------------------------------

_ZSTD_C_COMPRESSION_LEVEL = 100
_ZSTD_C_CONTENT_SIZE_FLAG = 200
_ZSTD_C_CHECKSUM_FLAG = 201
_ZSTD_CONTENTSIZE_UNKNOWN = 2**64 - 1
_ZSTD_CONTENTSIZE_ERROR = 2**64 - 2


@functools.lru_cache(maxsize=None)
def _zstd():
    lib = _load("zstd", "libzstd.so.1")
    lib.ZSTD_createCCtx.restype = ctypes.c_void_p
    lib.ZSTD_freeCCtx.argtypes = [ctypes.c_void_p]
    lib.ZSTD_CCtx_setParameter.restype = _size_t
    lib.ZSTD_CCtx_setParameter.argtypes = [ctypes.c_void_p, ctypes.c_int, ctypes.c_int]
    lib.ZSTD_compress2.restype = _size_t
    lib.ZSTD_compress2.argtypes = [ctypes.c_void_p, ctypes.c_void_p, _size_t, ctypes.c_void_p, _size_t]
    lib.ZSTD_compressBound.restype = _size_t
    lib.ZSTD_compressBound.argtypes = [_size_t]
    lib.ZSTD_isError.restype = ctypes.c_uint
    lib.ZSTD_isError.argtypes = [_size_t]
    lib.ZSTD_getErrorName.restype = ctypes.c_char_p
    lib.ZSTD_getErrorName.argtypes = [_size_t]
    lib.ZSTD_getFrameContentSize.restype = ctypes.c_ulonglong
    lib.ZSTD_getFrameContentSize.argtypes = [ctypes.c_void_p, _size_t]
    lib.ZSTD_findFrameCompressedSize.restype = _size_t
    lib.ZSTD_findFrameCompressedSize.argtypes = [ctypes.c_void_p, _size_t]
    lib.ZSTD_decompress.restype = _size_t
    lib.ZSTD_decompress.argtypes = [ctypes.c_void_p, _size_t, ctypes.c_void_p, _size_t]
    lib.ZSTD_versionString.restype = ctypes.c_char_p
    return lib


@functools.lru_cache(maxsize=None)
def _cctx(level: int):
    # one context per level; compression is single-threaded
    lib = _zstd()
    cctx = lib.ZSTD_createCCtx()
    for key, value in (
        (_ZSTD_C_COMPRESSION_LEVEL, level),
        (_ZSTD_C_CONTENT_SIZE_FLAG, 1),
        (_ZSTD_C_CHECKSUM_FLAG, 1),
    ):
        code = lib.ZSTD_CCtx_setParameter(cctx, key, value)
        if lib.ZSTD_isError(code):
            raise ValueError(f"zstd parameter {key}={value}: {lib.ZSTD_getErrorName(code).decode()}")
    return cctx


def zstd_compress(data, level: int) -> bytes:
    lib = _zstd()
    src, n, keep = _pointer(data)
    cap = lib.ZSTD_compressBound(n)
    dst = ctypes.create_string_buffer(cap)
    written = lib.ZSTD_compress2(_cctx(level), dst, cap, src, n)
    if lib.ZSTD_isError(written):
        raise IntegrityError(f"zstd compress: {lib.ZSTD_getErrorName(written).decode()}")
    return ctypes.string_at(dst, written)


def zstd_decompress(data) -> bytearray:
    lib = _zstd()
    src, n, keep = _pointer(data)
    size = lib.ZSTD_getFrameContentSize(src, n)
    if size in (_ZSTD_CONTENTSIZE_ERROR, _ZSTD_CONTENTSIZE_UNKNOWN):
        raise IntegrityError("zstd frame header damaged or without content size")
    frame_len = lib.ZSTD_findFrameCompressedSize(src, n)
    if lib.ZSTD_isError(frame_len):
        raise IntegrityError(f"zstd frame: {lib.ZSTD_getErrorName(frame_len).decode()}")
    if frame_len != n:
        raise IntegrityError("trailing bytes after zstd frame")
    out, addr = _out_buffer(size)
    written = lib.ZSTD_decompress(addr, size, src, n)
    if lib.ZSTD_isError(written):
        raise IntegrityError(f"zstd decompress: {lib.ZSTD_getErrorName(written).decode()}")
    if written != size:
        raise IntegrityError(f"zstd frame decoded to {written} bytes, header says {size}")
    return out


def versions() -> dict[str, str]:
    return {
        "lz4": _lz4().LZ4_versionString().decode(),
        "zstd": _zstd().ZSTD_versionString().decode(),
    }
