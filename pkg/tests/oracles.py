"""Independent reference implementations used as test oracles.

Everything here is deliberately naive (pure Python integers, fractions,
hand-packed bytes) and shares no code with the package.
"""

from fractions import Fraction
from itertools import groupby

MASK64 = (1 << 64) - 1


def quantize(m) -> int:
    """Nearest level of m * 255, ties upward (away from zero for m >= 0)."""
    x = Fraction(m) * 255 + Fraction(1, 2)
    return x.numerator // x.denominator


def dequantize(q: int) -> Fraction:
    return Fraction(q, 255)


def quantize_pair(b, d) -> tuple[int, int]:
    bq = quantize(b)
    return bq, min(quantize(d), 255 - bq)


def rle_encode(data: bytes) -> bytes:
    out = bytearray()
    for value, run in groupby(data):
        n = len(list(run))
        while n:
            k = min(n, 255)
            out += bytes((k, value))
            n -= k
    return bytes(out)


def rle_decode(data: bytes) -> bytes:
    out = bytearray()
    for i in range(0, len(data), 2):
        out += bytes((data[i + 1],)) * data[i]
    return bytes(out)


def splitmix64_output(x: int) -> int:
    """Reference SplitMix64 step: state += gamma, then the output mix."""
    z = (x + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def _le(value: int, width: int, signed: bool = False) -> bytes:
    return int(value).to_bytes(width, "little", signed=signed)


def _f32(x: float) -> bytes:
    import struct

    return struct.pack("<f", x)


def _f64(x: float) -> bytes:
    import struct

    return struct.pack("<d", x)


def message_bytes(*, flags, codec_id, param, base_rate, timestamp, frame_id, patches) -> bytes:
    """Hand-assembled inner message. ``patches`` items:
    ``(patch_id, ox, oy, cell_size, cells_per_side, payload)``."""
    frame = frame_id.encode()
    out = bytearray(b"APGM")
    out += _le(1, 1) + _le(flags, 1) + _le(codec_id, 1) + _le(param, 4, True)
    out += _f32(base_rate) + _le(timestamp, 8)
    out += _le(len(frame), 1) + frame
    out += _le(len(patches), 4)
    for pid, ox, oy, cs, n, payload in patches:
        out += _le(pid, 8) + _f64(ox) + _f64(oy) + _f32(cs) + _le(n, 4) + _le(len(payload), 4)
        out += payload
    return bytes(out)


def envelope_bytes(codec_id: int, param: int, inner_len: int, blob: bytes) -> bytes:
    return b"APGC" + _le(codec_id, 1) + _le(param, 4, True) + _le(inner_len, 8) + blob
