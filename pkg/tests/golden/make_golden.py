"""Regenerate the committed wire fixtures (run only when the format changes).

    python tests/golden/make_golden.py
"""

from pathlib import Path

import numpy as np

from gridtx import GridMap, Patch
from gridtx.codecs import CodecSpec
from gridtx.wire import Mode, encode

HERE = Path(__file__).parent

SPECS = ("none", "rle", "lz4:1", "rlz4:1", "zstd:3", "png")


def known_grid() -> GridMap:
    """Two patches with values that are exact in float32."""
    patches = []
    for pid, n, origin, size in ((7, 8, (-1.6, 0.8), 0.2), (2**40 + 3, 4, (3.2, -0.8), 0.4)):
        i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
        b = ((i * 3 + j) % 5) / 8.0
        d = np.where((i + j) % 3 == 0, (8 - ((i * 3 + j) % 5)) / 8.0 - 0.125, 0.0)
        d = np.where(j >= n // 2, 0.0, d)  # a run of pure "unknown" cells
        b = np.where(j >= n // 2, 0.0, b)
        patches.append(Patch(pid, origin, size, n, np.stack([b, d], -1).astype(np.float32)))
    return GridMap(0.25, tuple(patches), timestamp=1_700_000_000_123_456_789, frame_id="golden")


def fixture_name(spec: str, quantized: bool, mode: Mode) -> str:
    return f"{spec.replace(':', '_')}_{'q' if quantized else 'f'}_{mode.value}.bin"


def cases():
    for spec in SPECS:
        for quantized in (False, True):
            for mode in (Mode.PATCHWISE, Mode.FULL):
                if spec == "png" and mode is Mode.FULL:
                    continue
                yield spec, quantized, mode


if __name__ == "__main__":
    g = known_grid()
    for spec, q, mode in cases():
        (HERE / fixture_name(spec, q, mode)).write_bytes(encode(g, CodecSpec.parse(spec), q, mode).data)
    print("ok")
