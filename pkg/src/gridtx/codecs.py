"""Lossless codecs over opaque byte strings.

``compress``/``decompress`` dispatch on a :class:`CodecSpec`:

======  =====================================================  ==============
codec   encoding                                               param
======  =====================================================  ==============
NONE    identity                                               0
RLE     ``(count u8, value u8)`` pairs, ``1 <= count <= 255``  0
LZ4     LZ4 frame, content checksum + size                     acceleration >= 1
RLZ4    LZ4 frame over the RLE stream                          acceleration >= 1
ZSTD    Zstandard frame, content checksum + size               level in [-100, 10]
PNG     8-bit grayscale PNG, one byte per pixel                0
======  =====================================================  ==============

Level 0 for Zstandard selects the library default (3).
"""

from __future__ import annotations

import enum
import io
import zlib
from dataclasses import dataclass

import numpy as np

from gridtx import _backend
from gridtx.exceptions import ConfigurationError, IntegrityError, MalformedStreamError

__all__ = [
    "Algorithm",
    "CodecSpec",
    "CompressedBlock",
    "rle_encode",
    "rle_decode",
    "compress",
    "decompress",
    "LZ4_ACCELERATIONS",
    "ZSTD_LEVELS",
    "ZSTD_LEVEL_RANGE",
]

ZSTD_LEVEL_RANGE = (-100, 10)
LZ4_MAX_ACCELERATION = 65537
LZ4_ACCELERATIONS = tuple(2**k for k in range(13))
ZSTD_LEVELS = tuple(range(-100, -10, 10)) + tuple(range(-10, 11))


class Algorithm(enum.IntEnum):
    """Codec identifiers; the values are the on-wire codec ids."""

    NONE = 0
    RLE = 1
    LZ4 = 2
    RLZ4 = 3
    ZSTD = 4
    PNG = 5

    @classmethod
    def parse(cls, name) -> "Algorithm":
        if isinstance(name, cls):
            return name
        try:
            return cls[str(name).upper()]
        except KeyError:
            raise ConfigurationError(
                f"unknown algorithm {name!r}; choose from {', '.join(a.name.lower() for a in cls)}"
            ) from None


@dataclass(frozen=True, order=True)
class CodecSpec:
    algorithm: Algorithm = Algorithm.NONE
    param: int = 0

    def __post_init__(self):
        algo = Algorithm.parse(self.algorithm)
        object.__setattr__(self, "algorithm", algo)
        p = self.param
        if isinstance(p, bool) or int(p) != p:
            raise ConfigurationError(f"param must be an integer, got {p!r}")
        object.__setattr__(self, "param", int(p))
        p = int(p)
        if algo in (Algorithm.LZ4, Algorithm.RLZ4):
            if not 1 <= p <= LZ4_MAX_ACCELERATION:
                raise ConfigurationError(f"{algo.name} acceleration must be in [1, {LZ4_MAX_ACCELERATION}], got {p}")
        elif algo is Algorithm.ZSTD:
            lo, hi = ZSTD_LEVEL_RANGE
            if not lo <= p <= hi:
                raise ConfigurationError(f"ZSTD level must be in [{lo}, {hi}], got {p}")
        elif p != 0:
            raise ConfigurationError(f"{algo.name} takes no parameter, got {p}")

    @classmethod
    def parse(cls, text: str) -> "CodecSpec":
        """``"zstd:3"``, ``"lz4"`` (acceleration 1), ``"none"``..."""
        name, _, param = str(text).partition(":")
        algo = Algorithm.parse(name)
        if param:
            try:
                value = int(param)
            except ValueError:
                raise ConfigurationError(f"bad codec parameter in {text!r}") from None
        else:
            value = 1 if algo in (Algorithm.LZ4, Algorithm.RLZ4) else (3 if algo is Algorithm.ZSTD else 0)
        return cls(algo, value)

    def __str__(self):
        if self.algorithm in (Algorithm.LZ4, Algorithm.RLZ4, Algorithm.ZSTD):
            return f"{self.algorithm.name.lower()}:{self.param}"
        return self.algorithm.name.lower()


@dataclass(frozen=True)
class CompressedBlock:
    spec: CodecSpec
    uncompressed_len: int
    data: bytes


# ---------------------------------------------------------------------------
# RLE
# ---------------------------------------------------------------------------


def rle_encode(data) -> bytes:
    """Run-length encode into ``(count, value)`` byte pairs.

    Runs longer than 255 are split, so the output is at most twice the input.
    """
    a = np.frombuffer(memoryview(data), dtype=np.uint8)
    n = a.size
    if n == 0:
        return b""
    starts = np.flatnonzero(np.diff(a)) + 1
    starts = np.concatenate(([0], starts))
    lengths = np.diff(np.append(starts, n))
    values = a[starts]
    pieces = (lengths + 254) // 255
    out_values = np.repeat(values, pieces)
    counts = np.full(out_values.size, 255, dtype=np.int64)
    # last piece of each run carries the remainder
    last = np.cumsum(pieces) - 1
    counts[last] = lengths - 255 * (pieces - 1)
    out = np.empty((out_values.size, 2), dtype=np.uint8)
    out[:, 0] = counts
    out[:, 1] = out_values
    return out.tobytes()


def rle_decode(data) -> bytes:
    a = np.frombuffer(memoryview(data), dtype=np.uint8)
    if a.size % 2:
        raise MalformedStreamError("RLE stream has odd length")
    pairs = a.reshape(-1, 2)
    counts = pairs[:, 0]
    if (counts == 0).any():
        raise MalformedStreamError("RLE stream contains a zero count")
    return np.repeat(pairs[:, 1], counts).tobytes()


# ---------------------------------------------------------------------------
# PNG
# ---------------------------------------------------------------------------


def _png_encode(data: bytes, row_stride: int | None) -> bytes:
    from PIL import Image

    n = len(data)
    if row_stride is None:
        raise ConfigurationError("PNG needs the row stride of the originating patch")
    if row_stride <= 0 or n == 0 or n % row_stride:
        raise ConfigurationError(f"PNG payload of {n} bytes does not tile rows of {row_stride}")
    image = Image.frombytes("L", (row_stride, n // row_stride), bytes(data))
    buf = io.BytesIO()
    image.save(buf, format="PNG", compress_level=6)
    return buf.getvalue()


_PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


def _png_check_chunks(data) -> None:
    # Pillow skips CRCs of image-data chunks; damage there must not decode silently
    view = memoryview(data)
    if bytes(view[:8]) != _PNG_SIGNATURE:
        raise IntegrityError("missing PNG signature")
    pos = 8
    while pos < len(view):
        if pos + 12 > len(view):
            raise IntegrityError("truncated PNG chunk")
        length = int.from_bytes(view[pos:pos + 4], "big")
        end = pos + 8 + length
        if end + 4 > len(view):
            raise IntegrityError("truncated PNG chunk")
        if zlib.crc32(view[pos + 4:end]) != int.from_bytes(view[end:end + 4], "big"):
            raise IntegrityError("PNG chunk CRC mismatch")
        if bytes(view[pos + 4:pos + 8]) == b"IEND":
            if end + 4 != len(view):
                raise IntegrityError("trailing bytes after PNG")
            return
        pos = end + 4
    raise IntegrityError("PNG without IEND chunk")


def _png_decode(data: bytes) -> bytes:
    from PIL import Image

    _png_check_chunks(data)
    try:
        with Image.open(io.BytesIO(data), formats=["PNG"]) as image:
            if image.mode != "L":
                raise IntegrityError(f"PNG mode {image.mode}, expected L")
            image.load()
            return image.tobytes()
    except IntegrityError:
        raise
    except Exception as exc:  # Pillow raises a zoo of types
        raise IntegrityError(f"corrupt PNG stream: {exc}") from exc


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------


def compress(spec: CodecSpec, data, row_stride: int | None = None) -> CompressedBlock:
    """Compress ``data`` with ``spec``.

    ``row_stride`` is only used by PNG: the image width in bytes.
    """
    if not isinstance(spec, CodecSpec):
        spec = CodecSpec.parse(spec)
    raw = memoryview(data)
    algo = spec.algorithm
    if algo is Algorithm.NONE:
        out = raw.tobytes()
    elif algo is Algorithm.RLE:
        out = rle_encode(raw)
    elif algo is Algorithm.LZ4:
        out = _backend.lz4_compress(raw, spec.param)
    elif algo is Algorithm.RLZ4:
        out = _backend.lz4_compress(rle_encode(raw), spec.param)
    elif algo is Algorithm.ZSTD:
        out = _backend.zstd_compress(raw, spec.param)
    else:
        out = _png_encode(raw.tobytes(), row_stride)
    return CompressedBlock(spec, raw.nbytes, out)


def decompress(block: CompressedBlock) -> bytes:
    """Inverse of :func:`compress`; raises :class:`IntegrityError` on any damage.

    LZ4 and Zstandard return a ``bytearray`` to avoid a copy.
    """
    algo = block.spec.algorithm
    data = block.data
    if algo is Algorithm.NONE:
        out = bytes(data)
    elif algo is Algorithm.RLE:
        out = rle_decode(data)
    elif algo is Algorithm.LZ4:
        out = _backend.lz4_decompress(data, block.uncompressed_len)
    elif algo is Algorithm.RLZ4:
        out = rle_decode(_backend.lz4_decompress(data))
    elif algo is Algorithm.ZSTD:
        out = _backend.zstd_decompress(data)
    else:
        out = _png_decode(data)
    if len(out) != block.uncompressed_len:
        raise IntegrityError(f"decompressed {len(out)} bytes, expected {block.uncompressed_len}")
    return out
