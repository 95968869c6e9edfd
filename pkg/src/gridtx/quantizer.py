"""Uniform 1-byte quantization of opinion masses.

[0, 1] is split into 255 equal steps (``STEP = 1/255``), giving 256
reconstruction levels and a scalar reconstruction error of at most
``STEP / 2``. Rounding is to nearest with ties away from zero.

Independently rounded pairs can reach ``belief_q + disbelief_q = 256`` when
``b + d`` is close to 1; the disbelief level is then clamped to
``255 - belief_q``. Inside that boundary band the disbelief error can grow
to ``3 * STEP / 2``; the belief error stays within ``STEP / 2``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from gridtx.exceptions import DataError
from gridtx.model import CELL_DTYPE, QCELL_DTYPE, GridMap, Patch

__all__ = [
    "STEP",
    "MAX_ERROR",
    "QuantizedCell",
    "quantize_mass",
    "dequantize_mass",
    "quantize_cells",
    "dequantize_cells",
    "quantize_grid",
    "dequantize_grid",
]

LEVELS = 255
STEP = 1.0 / LEVELS
MAX_ERROR = STEP / 2


@dataclass(frozen=True)
class QuantizedCell:
    belief_q: int
    disbelief_q: int

    def __post_init__(self):
        if not (0 <= self.belief_q <= LEVELS and 0 <= self.disbelief_q <= LEVELS):
            raise DataError("quantized level outside [0, 255]")
        if self.belief_q + self.disbelief_q > LEVELS:
            raise DataError("quantized belief + disbelief exceeds 255")


def quantize_mass(m):
    """Map mass(es) in [0, 1] to levels 0..255.

    Accepts a scalar (returns ``int``) or an array (returns ``uint8``).
    """
    arr = np.asarray(m, dtype=np.float64)
    if np.isnan(arr).any() or (arr < 0.0).any() or (arr > 1.0).any():
        raise DataError("mass outside [0, 1]")
    q = _round_levels(arr).astype(np.uint8)
    return int(q) if q.ndim == 0 else q


_SPLIT = 134217729.0  # 2**27 + 1


def _round_levels(m: np.ndarray) -> np.ndarray:
    """Exact ``floor(m * 255 + 1/2)`` for ``m`` in [0, 1].

    ``m * 255`` is rounded in float64, which can move values that sit within
    an ulp of a half-level across it. The exact product is ``p + err``
    (Dekker two-product), and the candidate level is corrected by checking
    the sign of ``m * 255 - (q -+ 1/2)`` exactly.
    """
    p = m * LEVELS
    c = _SPLIT * m
    hi = c - (c - m)
    lo = m - hi
    err = (hi * LEVELS - p) + lo * LEVELS
    q = np.floor(p + 0.5)
    q -= (p - (q - 0.5)) + err < 0
    q += (p - (q + 0.5)) + err >= 0
    return q


def dequantize_mass(q):
    """Level(s) 0..255 back to mass; scalar in, ``float`` out."""
    arr = np.asarray(q)
    if arr.dtype.kind not in "ui" or (arr < 0).any() or (arr > LEVELS).any():
        raise DataError("level outside [0, 255]")
    m = arr.astype(np.float64) / LEVELS
    return float(m) if m.ndim == 0 else m


def quantize_cells(cells: np.ndarray) -> np.ndarray:
    """``(..., 2)`` float masses to ``uint8`` levels with the additivity clamp."""
    q = quantize_mass(np.asarray(cells, dtype=np.float64))
    bq = q[..., 0]
    dq = np.minimum(q[..., 1], LEVELS - bq)
    return np.stack([bq, dq], axis=-1).astype(QCELL_DTYPE)


def _build_lut() -> np.ndarray:
    levels = np.arange(LEVELS + 1)
    b = (levels[:, None] / LEVELS).astype(np.float32) + np.zeros((1, LEVELS + 1), np.float32)
    d = (levels[None, :] / LEVELS).astype(np.float32) + np.zeros((LEVELS + 1, 1), np.float32)
    valid = levels[:, None] + levels[None, :] <= LEVELS
    # float32 rounding may push a valid pair a hair above 1
    over = valid & (b.astype(np.float64) + d > 1.0)
    while over.any():
        d[over] = np.nextafter(d[over], np.float32(0.0))
        over = valid & (b.astype(np.float64) + d > 1.0)
    return np.stack([b, d], axis=-1)


_LUT = _build_lut()


def dequantize_cells(qcells: np.ndarray) -> np.ndarray:
    """``uint8`` levels to ``float32`` masses that satisfy ``b + d <= 1``."""
    qcells = np.asarray(qcells)
    if qcells.dtype != QCELL_DTYPE:
        raise DataError("expected uint8 levels")
    if (qcells[..., 0].astype(np.uint16) + qcells[..., 1] > LEVELS).any():
        raise DataError("quantized belief + disbelief exceeds 255")
    return _LUT[qcells[..., 0], qcells[..., 1]].astype(CELL_DTYPE)


def quantize_grid(grid: GridMap) -> GridMap:
    """Quantized view of ``grid``: same structure, uint8 cells.

    Already-quantized grids are returned unchanged.
    """
    if grid.quantized:
        return grid
    patches = tuple(p.with_cells(quantize_cells(p.cells)) for p in grid.patches)
    return GridMap(grid.base_rate, patches, grid.timestamp, grid.frame_id)


def dequantize_grid(qgrid: GridMap) -> GridMap:
    if qgrid.patches and not qgrid.quantized:
        raise DataError("grid is not quantized")
    patches = tuple(p.with_cells(dequantize_cells(p.cells)) for p in qgrid.patches)
    return GridMap(qgrid.base_rate, patches, qgrid.timestamp, qgrid.frame_id)


def quantized_view(patch: Patch) -> Patch:
    return patch if patch.quantized else patch.with_cells(quantize_cells(patch.cells))
