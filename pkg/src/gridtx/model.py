"""Adaptive patched grid map data model and a deterministic synthetic corpus.

Cells hold subjective-logic binomial opinions. Only belief and disbelief are
stored; uncertainty is implied by ``1 - belief - disbelief`` and the base rate
is kept once per map.

A patch stores its cells as an ``(n, n, 2)`` array, row-major, with
``[..., 0]`` the belief and ``[..., 1]`` the disbelief. The array dtype is
``float32`` for normal maps and ``uint8`` for quantized maps (levels
``0..255``, see :mod:`gridtx.quantizer`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from gridtx.exceptions import ConfigurationError, DataError

__all__ = [
    "BinomialOpinion",
    "Patch",
    "GridMap",
    "CorpusConfig",
    "total_cells",
    "payload_bytes",
    "generate_corpus",
    "splitmix64",
    "BYTES_PER_CELL",
    "BYTES_PER_CELL_QUANTIZED",
]

BYTES_PER_CELL = 8
BYTES_PER_CELL_QUANTIZED = 2

CELL_DTYPE = np.dtype("<f4")
QCELL_DTYPE = np.dtype("u1")


@dataclass(frozen=True)
class BinomialOpinion:
    """Occupancy evidence of one cell: belief (occupied) and disbelief (free)."""

    belief: float
    disbelief: float

    def __post_init__(self):
        b, d = self.belief, self.disbelief
        if not (0.0 <= b <= 1.0 and 0.0 <= d <= 1.0):
            raise DataError(f"masses out of [0, 1]: b={b!r}, d={d!r}")
        if b + d > 1.0:
            raise DataError(f"belief + disbelief exceeds 1: b={b!r}, d={d!r}")

    @property
    def uncertainty(self) -> float:
        return 1.0 - self.belief - self.disbelief

    def projected_probability(self, base_rate: float) -> float:
        return self.belief + base_rate * self.uncertainty


def _check_cells(cells: np.ndarray) -> None:
    if cells.dtype == CELL_DTYPE:
        if cells.size == 0:
            return
        lo, hi = cells.min(), cells.max()
        if not (lo >= 0.0 and hi <= 1.0):  # also rejects NaN
            raise DataError("mass out of [0, 1] in patch")
        # a float32 sum rounds to >= 1 whenever the exact sum exceeds 1
        approx = cells[..., 0] + cells[..., 1]
        if approx.max() >= 1.0:
            near = approx >= 1.0
            exact = cells[..., 0][near].astype(np.float64) + cells[..., 1][near]
            if exact.max() > 1.0:
                raise DataError("belief + disbelief exceeds 1 in patch")
    elif cells.dtype == QCELL_DTYPE:
        total = cells[..., 0].astype(np.uint16) + cells[..., 1]
        if total.max(initial=0) > 255:
            raise DataError("quantized belief + disbelief exceeds 255 in patch")
    else:
        raise DataError(f"unsupported cell dtype {cells.dtype}")


@dataclass(frozen=True, eq=False)
class Patch:
    """Square block of cells at one resolution.

    ``origin`` is the map-frame position (meters) of the lower-left corner of
    cell ``(0, 0)``. Rows run along +y, columns along +x.
    """

    patch_id: int
    origin: tuple[float, float]
    cell_size: float
    cells_per_side: int
    cells: np.ndarray

    def __post_init__(self):
        if not 0 <= self.patch_id < 2**64:
            raise DataError(f"patch_id {self.patch_id} outside u64")
        if self.cells_per_side <= 0:
            raise DataError("cells_per_side must be positive")
        cs = float(np.float32(self.cell_size))
        if not cs > 0.0:
            raise DataError(f"cell_size must be positive, got {self.cell_size}")
        object.__setattr__(self, "cell_size", cs)
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))
        cells = np.asarray(self.cells)
        if cells.dtype.kind == "f" and cells.dtype != CELL_DTYPE:
            cells = cells.astype(CELL_DTYPE)
        n = self.cells_per_side
        if cells.shape == (n * n, 2):
            cells = cells.reshape(n, n, 2)
        if cells.shape != (n, n, 2):
            raise DataError(f"cells shape {cells.shape} does not match {n}x{n}x2")
        _check_cells(cells)
        cells = np.ascontiguousarray(cells)
        cells.flags.writeable = False
        object.__setattr__(self, "cells", cells)

    @property
    def quantized(self) -> bool:
        return self.cells.dtype == QCELL_DTYPE

    @property
    def num_cells(self) -> int:
        return self.cells_per_side * self.cells_per_side

    @property
    def side_m(self) -> float:
        return self.cell_size * self.cells_per_side

    @property
    def bytes_per_cell(self) -> int:
        return BYTES_PER_CELL_QUANTIZED if self.quantized else BYTES_PER_CELL

    def payload(self) -> bytes:
        """Cell payload: row-major, belief then disbelief, little-endian."""
        return self.cells.tobytes()

    def payload_view(self) -> memoryview:
        """Zero-copy view of :meth:`payload`."""
        return memoryview(self.cells.reshape(-1).view(np.uint8))

    def opinion(self, row: int, col: int) -> BinomialOpinion:
        b, d = self.cells[row, col]
        if self.quantized:
            return BinomialOpinion(int(b) / 255.0, int(d) / 255.0)
        return BinomialOpinion(float(b), float(d))

    def with_cells(self, cells: np.ndarray) -> "Patch":
        return Patch(self.patch_id, self.origin, self.cell_size, self.cells_per_side, cells)

    def __eq__(self, other):
        if not isinstance(other, Patch):
            return NotImplemented
        return (
            self.patch_id == other.patch_id
            and self.origin == other.origin
            and self.cell_size == other.cell_size
            and self.cells_per_side == other.cells_per_side
            and self.cells.dtype == other.cells.dtype
            and np.array_equal(self.cells, other.cells)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class GridMap:
    """One grid map message: patches plus the shared base rate."""

    base_rate: float = 0.5
    patches: tuple[Patch, ...] = ()
    timestamp: int = 0
    frame_id: str = "map"

    def __post_init__(self):
        a = float(np.float32(self.base_rate))
        if not 0.0 <= a <= 1.0:
            raise DataError(f"base_rate {self.base_rate} outside [0, 1]")
        object.__setattr__(self, "base_rate", a)
        patches = tuple(self.patches)
        ids = [p.patch_id for p in patches]
        if len(set(ids)) != len(ids):
            raise DataError("duplicate patch_id in grid map")
        if len({p.quantized for p in patches}) > 1:
            raise DataError("grid map mixes quantized and normal patches")
        object.__setattr__(self, "patches", patches)
        if not 0 <= self.timestamp < 2**64:
            raise DataError("timestamp outside u64")
        if len(self.frame_id.encode("utf-8")) > 255:
            raise DataError("frame_id longer than 255 bytes")

    @property
    def quantized(self) -> bool:
        return bool(self.patches) and self.patches[0].quantized

    def __eq__(self, other):
        if not isinstance(other, GridMap):
            return NotImplemented
        return (
            self.base_rate == other.base_rate
            and self.timestamp == other.timestamp
            and self.frame_id == other.frame_id
            and self.patches == other.patches
        )

    __hash__ = None


def total_cells(grid: GridMap) -> int:
    return sum(p.cells_per_side * p.cells_per_side for p in grid.patches)


def payload_bytes(grid: GridMap, quantized: bool) -> int:
    """Cell payload size in bytes, headers excluded."""
    per_cell = BYTES_PER_CELL_QUANTIZED if quantized else BYTES_PER_CELL
    return total_cells(grid) * per_cell


# ---------------------------------------------------------------------------
# Synthetic corpus
# ---------------------------------------------------------------------------

_SM_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_SM_M1 = np.uint64(0xBF58476D1CE4E5B9)
_SM_M2 = np.uint64(0x94D049BB133111EB)


def splitmix64(x) -> np.ndarray:
    """SplitMix64 output function applied elementwise (uint64, wrapping)."""
    with np.errstate(over="ignore"):
        z = np.asarray(x, dtype=np.uint64) + _SM_GAMMA
        z = (z ^ (z >> np.uint64(30))) * _SM_M1
        z = (z ^ (z >> np.uint64(27))) * _SM_M2
    return z ^ (z >> np.uint64(31))


def _hash(*keys) -> np.ndarray:
    h = np.zeros(1, dtype=np.uint64)
    for k in keys:
        k = np.asarray(k)
        if k.dtype.kind == "i":
            k = k.astype(np.int64).view(np.uint64)
        h = splitmix64(h ^ k.astype(np.uint64))
    return h


def _uniform(*keys) -> np.ndarray:
    """Uniform doubles in [0, 1) from 53 high bits of the hash."""
    return (_hash(*keys) >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)


def _value_noise(seed: int, stream: int, x: np.ndarray, y: np.ndarray, spacing: float) -> np.ndarray:
    gx = x / spacing
    gy = y / spacing
    ix = np.floor(gx)
    iy = np.floor(gy)
    fx = gx - ix
    fy = gy - iy
    fx = fx * fx * (3.0 - 2.0 * fx)
    fy = fy * fy * (3.0 - 2.0 * fy)
    ix = ix.astype(np.int64)
    iy = iy.astype(np.int64)
    v00 = _uniform(seed, stream, ix, iy)
    v10 = _uniform(seed, stream, ix + 1, iy)
    v01 = _uniform(seed, stream, ix, iy + 1)
    v11 = _uniform(seed, stream, ix + 1, iy + 1)
    top = v00 + (v10 - v00) * fx
    bottom = v01 + (v11 - v01) * fx
    return top + (bottom - top) * fy


# hash stream tags
_S_UNKNOWN, _S_UNKNOWN_FINE, _S_OCC, _S_OCC_FINE, _S_COUNT, _S_SPECKLE, _S_MINOR, _S_MASS_B, _S_MASS_D = range(1, 10)


@dataclass(frozen=True)
class CorpusConfig:
    """Synthetic corpus parameters.

    ``occupancy_mix`` is the fraction of (free, occupied, unknown, speckle)
    cells per frame.
    """

    seed: int = 0
    target_cells: int = 350_000
    resolutions: tuple[float, ...] = (0.10, 0.20, 0.40)
    patch_side_m: float = 16.0
    occupancy_mix: tuple[float, float, float, float] = (0.28, 0.07, 0.64, 0.01)
    base_rate: float = 0.5
    evidence_cap: int = 24
    frame_period_ns: int = 100_000_000
    speed_mps: float = 15.0
    tolerance: float = 0.10

    def __post_init__(self):
        object.__setattr__(self, "resolutions", tuple(float(r) for r in self.resolutions))
        object.__setattr__(self, "occupancy_mix", tuple(float(f) for f in self.occupancy_mix))
        if not 0 <= self.seed < 2**64:
            raise ConfigurationError("seed must fit in u64")
        if self.target_cells <= 0:
            raise ConfigurationError("target_cells must be positive")
        if len(self.occupancy_mix) != 4 or min(self.occupancy_mix) < 0:
            raise ConfigurationError("occupancy_mix needs four nonnegative fractions")
        if abs(sum(self.occupancy_mix) - 1.0) > 1e-9:
            raise ConfigurationError("occupancy_mix must sum to 1")
        res = self.resolutions
        if not res or min(res) <= 0 or any(b <= a for a, b in zip(res, res[1:])):
            raise ConfigurationError("resolutions must be positive and strictly increasing")
        if self.patch_side_m <= 0:
            raise ConfigurationError("patch_side_m must be positive")
        for r in res:
            n = self.patch_side_m / r
            if abs(n - round(n)) > 1e-6 or round(n) < 1:
                raise ConfigurationError(f"patch side {self.patch_side_m} m is not a multiple of cell size {r} m")

    def cells_per_side(self, resolution: float) -> int:
        return int(round(self.patch_side_m / resolution))


def _ring_slots(max_ring: int):
    """Patch lattice offsets ordered by ring, then counter-clockwise from +x."""
    yield 0, 0, 0
    for r in range(1, max_ring + 1):
        ring = []
        for dx in range(-r, r + 1):
            for dy in range(-r, r + 1):
                if max(abs(dx), abs(dy)) == r:
                    ring.append((math.atan2(dy, dx) % (2 * math.pi), dx, dy))
        ring.sort()
        for _, dx, dy in ring:
            yield r, dx, dy


def _resolution_index(ring: int, n_res: int) -> int:
    # rings 0-1 finest, then one step coarser per ring
    return min(n_res - 1, max(0, ring - 1))


def plan_layout(config: CorpusConfig) -> list[tuple[int, int, int]]:
    """Choose patch slots ``(dx, dy, resolution_index)`` reaching target_cells.

    Slots are taken in ring order; the cut is placed where the total is
    closest to the target. Raises if that total misses by more than the
    configured tolerance.
    """
    n_res = len(config.resolutions)
    chosen: list[tuple[int, int, int]] = []
    total = 0
    max_ring = 64
    for ring, dx, dy in _ring_slots(max_ring):
        k = _resolution_index(ring, n_res)
        cells = config.cells_per_side(config.resolutions[k]) ** 2
        if total >= config.target_cells:
            break
        if total + cells - config.target_cells > config.target_cells - total:
            # overshoot is worse than stopping; try smaller patches further out
            if k == n_res - 1:
                break
            continue
        chosen.append((dx, dy, k))
        total += cells
    if abs(total - config.target_cells) > config.tolerance * config.target_cells:
        raise ConfigurationError(
            f"patch geometry reaches {total} cells, not within "
            f"{config.tolerance:.0%} of target {config.target_cells}"
        )
    return chosen


def _rank_select(values: np.ndarray, candidates: np.ndarray, count: int) -> np.ndarray:
    """Indices of the ``count`` largest values among candidate indices (stable)."""
    if count <= 0:
        return candidates[:0]
    order = np.argsort(-values[candidates], kind="stable")
    return candidates[order[:count]]


def _frame(config: CorpusConfig, index: int, layout) -> GridMap:
    seed = config.seed
    P = config.patch_side_m
    vx = index * config.speed_mps * config.frame_period_ns * 1e-9
    vy = 0.0
    px0 = math.floor(vx / P)
    py0 = math.floor(vy / P)

    xs, ys, sizes, meta = [], [], [], []
    for dx, dy, k in layout:
        res = config.resolutions[k]
        n = config.cells_per_side(res)
        ox = (px0 + dx) * P
        oy = (py0 + dy) * P
        centers = (np.arange(n, dtype=np.float64) + 0.5) * res
        gx, gy = np.meshgrid(ox + centers, oy + centers)  # rows along y
        xs.append(gx.ravel())
        ys.append(gy.ravel())
        sizes.append(n * n)
        pid = ((px0 + dx + 2**31) << 32) | (py0 + dy + 2**31)
        meta.append((pid, (ox, oy), res, n))
    x = np.concatenate(xs)
    y = np.concatenate(ys)
    m = x.size
    cell_index = np.arange(m, dtype=np.int64)
    # world-anchored integer cell keys so overlapping frames agree
    kx = np.floor(x / config.resolutions[0]).astype(np.int64)
    ky = np.floor(y / config.resolutions[0]).astype(np.int64)

    f_free, f_occ, f_unk, f_spk = config.occupancy_mix
    n_spk = int(f_spk * m + 0.5)
    n_unk = int(f_unk * m + 0.5)
    n_occ = min(int(f_occ * m + 0.5), m - n_spk - n_unk)

    cls = np.zeros(m, dtype=np.uint8)  # 0 free, 1 occupied, 2 unknown, 3 speckle
    speckle_key = _uniform(seed, _S_SPECKLE, index, cell_index)
    spk = _rank_select(speckle_key, cell_index, n_spk)
    cls[spk] = 3

    dist = np.hypot(x - vx, y - vy)
    reach = max(float(dist.max()), 1e-9)
    unknown_field = (
        _value_noise(seed, _S_UNKNOWN, x, y, 6.0)
        + 0.5 * _value_noise(seed, _S_UNKNOWN_FINE, x, y, 2.0)
        + 1.2 * dist / reach
    )
    rest = np.flatnonzero(cls == 0)
    cls[_rank_select(unknown_field, rest, n_unk)] = 2

    # free corridor along the road
    road = np.abs(y - vy) < 4.0
    occ_field = (
        _value_noise(seed, _S_OCC, x, y, 3.0)
        + 0.4 * _value_noise(seed, _S_OCC_FINE, x, y, 1.0)
        - 2.0 * road
    )
    rest = np.flatnonzero(cls == 0)
    cls[_rank_select(occ_field, rest, n_occ)] = 1

    count_field = _value_noise(seed, _S_COUNT, x, y, 1.5)
    near = np.clip(1.0 - dist / reach, 0.0, 1.0)
    count = 1 + np.floor(config.evidence_cap * count_field * (0.5 + 0.5 * near)).astype(np.int64)
    minor = (_uniform(seed, _S_MINOR, kx, ky) < 0.05).astype(np.int64)
    r = np.where(cls == 1, count, minor)
    s = np.where(cls == 0, count, minor)
    weight = (r + s + 2).astype(np.float64)
    b = np.where(cls <= 1, r / weight, 0.0)
    d = np.where(cls <= 1, s / weight, 0.0)

    sp = cls == 3
    ub = _uniform(seed, _S_MASS_B, index, cell_index[sp])
    ud = _uniform(seed, _S_MASS_D, index, cell_index[sp])
    b[sp] = ub
    d[sp] = ud * (1.0 - ub)

    b32 = b.astype(np.float32)
    d32 = d.astype(np.float32)
    over = b32.astype(np.float64) + d32 > 1.0
    while over.any():
        d32[over] = np.nextafter(d32[over], np.float32(0.0))
        over = b32.astype(np.float64) + d32 > 1.0
    cells = np.stack([b32, d32], axis=-1)

    patches = []
    start = 0
    for (pid, origin, res, n), size in zip(meta, sizes):
        patches.append(Patch(pid, origin, res, n, cells[start:start + size].reshape(n, n, 2)))
        start += size
    timestamp = 1_700_000_000_000_000_000 + index * config.frame_period_ns
    return GridMap(config.base_rate, tuple(patches), timestamp, "map")


def generate_corpus(config: CorpusConfig, frames: int) -> list[GridMap]:
    """Deterministic synthetic frames of a vehicle driving along +x.

    All randomness comes from SplitMix64 hashes of ``(seed, stream, keys)``,
    so the output is bit-reproducible across runs and platforms.
    """
    if frames < 1:
        raise ConfigurationError("frames must be >= 1")
    layout = plan_layout(config)
    return [_frame(config, i, layout) for i in range(frames)]


def iter_cells(grid: GridMap) -> Sequence[BinomialOpinion]:
    """All cells as opinion objects (slow; for tests and inspection)."""
    return [p.opinion(i, j) for p in grid.patches for i in range(p.cells_per_side) for j in range(p.cells_per_side)]
