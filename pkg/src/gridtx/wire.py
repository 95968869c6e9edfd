"""Bit-exact grid map messages.

All integers and floats are little-endian.

Inner message (magic ``APGM``)::

    magic        4s   b"APGM"
    version      u8   1
    flags        u8   bit0 quantized, bit1 patch-wise
    codec_id     u8   per-patch codec (0 in full mode)
    codec_param  i32
    base_rate    f32
    timestamp    u64  ns since epoch
    frame_id     u8 length + utf-8 bytes
    patch_count  u32
    per patch:
      patch_id        u64
      origin_x        f64
      origin_y        f64
      cell_size       f32
      cells_per_side  u32
      payload_len     u32
      payload         payload_len bytes

A cell payload is ``cells_per_side**2`` cells, row-major, each cell belief
then disbelief: ``f32`` pairs (8 bytes) or ``u8`` level pairs (2 bytes).

Patch-wise messages compress each payload on its own and carry the codec in
the inner header. Full messages serialize an uncompressed inner message and
compress it once inside an envelope::

    magic             4s   b"APGC"
    codec_id          u8
    codec_param       i32
    uncompressed_len  u64
    blob              rest of the message

Corpus / capture files are a concatenation of ``u64`` length-prefixed
messages.
"""

from __future__ import annotations

import enum
import os
import struct
from dataclasses import dataclass
from typing import BinaryIO, Iterable, Iterator, NamedTuple

import numpy as np

from gridtx.codecs import Algorithm, CodecSpec, CompressedBlock, compress, decompress
from gridtx.exceptions import (
    ConfigurationError,
    DataError,
    EncodingError,
    IntegrityError,
    UnsupportedFormatError,
)
from gridtx.model import (
    BYTES_PER_CELL,
    BYTES_PER_CELL_QUANTIZED,
    CELL_DTYPE,
    QCELL_DTYPE,
    GridMap,
    Patch,
)
from gridtx.quantizer import quantize_grid

__all__ = [
    "Mode",
    "WireMessage",
    "DecodedMessage",
    "encode",
    "encode_patchwise",
    "encode_full",
    "decode",
    "message_size",
    "write_messages",
    "read_messages",
    "MAGIC",
    "ENVELOPE_MAGIC",
    "VERSION",
    "PATCH_HEADER",
    "ENVELOPE_HEADER",
]

MAGIC = b"APGM"
ENVELOPE_MAGIC = b"APGC"
VERSION = 1

FLAG_QUANTIZED = 0x01
FLAG_PATCHWISE = 0x02

_HEAD = struct.Struct("<4sBBBifQ")
_COUNT = struct.Struct("<I")
PATCH_HEADER = struct.Struct("<QddfII")
ENVELOPE_HEADER = struct.Struct("<4sBiQ")
_LEN = struct.Struct("<Q")
_U32_MAX = 2**32 - 1


class Mode(enum.Enum):
    FULL = "full"
    PATCHWISE = "patchwise"

    @classmethod
    def parse(cls, value) -> "Mode":
        if isinstance(value, cls):
            return value
        text = str(value).lower().replace("-", "").replace("_", "")
        for mode in cls:
            if mode.value == text:
                return mode
        raise ConfigurationError(f"unknown mode {value!r}; choose full or patchwise")


@dataclass(frozen=True)
class WireMessage:
    mode: Mode
    spec: CodecSpec
    quantized: bool
    data: bytes

    def __len__(self):
        return len(self.data)

    @property
    def size(self) -> int:
        return len(self.data)


class DecodedMessage(NamedTuple):
    grid: GridMap
    spec: CodecSpec
    quantized: bool
    mode: Mode


class PatchRecord(NamedTuple):
    patch_id: int
    origin: tuple[float, float]
    cell_size: float
    cells_per_side: int
    payload: memoryview


class ParsedMessage(NamedTuple):
    """Inner message with payloads still encoded (zero-copy views)."""

    spec: CodecSpec
    quantized: bool
    patchwise: bool
    base_rate: float
    timestamp: int
    frame_id: str
    records: list


def _prepare(grid: GridMap, quantized: bool) -> GridMap:
    if quantized:
        return quantize_grid(grid)
    if grid.quantized:
        raise DataError("grid is quantized but quantized=False was requested")
    return grid


def _header(grid: GridMap, flags: int, spec: CodecSpec) -> bytes:
    frame = grid.frame_id.encode("utf-8")
    return b"".join((
        _HEAD.pack(MAGIC, VERSION, flags, int(spec.algorithm), spec.param, grid.base_rate, grid.timestamp),
        bytes((len(frame),)),
        frame,
        _COUNT.pack(len(grid.patches)),
    ))


def header_size(frame_id: str) -> int:
    return _HEAD.size + 1 + len(frame_id.encode("utf-8")) + _COUNT.size


def message_size(frame_id: str, payload_lens: Iterable[int], mode: Mode = Mode.PATCHWISE,
                 compressed_body_len: int | None = None) -> int:
    """Exact on-wire size.

    Patch-wise: header + sum of (patch header + payload). Full: envelope +
    ``compressed_body_len``.
    """
    if Mode.parse(mode) is Mode.FULL:
        if compressed_body_len is None:
            raise ValueError("full mode needs the compressed body length")
        return ENVELOPE_HEADER.size + compressed_body_len
    return header_size(frame_id) + sum(PATCH_HEADER.size + n for n in payload_lens)


def _serialize(grid: GridMap, flags: int, spec: CodecSpec, payloads: list) -> bytes:
    parts = [_header(grid, flags, spec)]
    for patch, payload in zip(grid.patches, payloads):
        if len(payload) > _U32_MAX:
            raise EncodingError(f"patch {patch.patch_id} payload of {len(payload)} bytes exceeds u32")
        parts.append(PATCH_HEADER.pack(
            patch.patch_id, patch.origin[0], patch.origin[1], patch.cell_size,
            patch.cells_per_side, len(payload),
        ))
        parts.append(payload)
    return b"".join(parts)


# --- pipeline stages (exposed separately for timing) -----------------------


def compress_patches(grid: GridMap, spec: CodecSpec) -> list[CompressedBlock]:
    """Stage 1 of the patch-wise pipeline."""
    return [
        compress(spec, p.payload_view(), row_stride=p.cells_per_side * p.bytes_per_cell)
        for p in grid.patches
    ]


def serialize_patchwise(grid: GridMap, spec: CodecSpec, blocks: list[CompressedBlock]) -> bytes:
    """Stage 2 of the patch-wise pipeline."""
    flags = FLAG_PATCHWISE | (FLAG_QUANTIZED if grid.quantized else 0)
    return _serialize(grid, flags, spec, [b.data for b in blocks])


def serialize_inner(grid: GridMap) -> bytes:
    """Stage 1 of the full-message pipeline: uncompressed inner message."""
    flags = FLAG_QUANTIZED if grid.quantized else 0
    return _serialize(grid, flags, CodecSpec(), [p.payload() for p in grid.patches])


def compress_envelope(spec: CodecSpec, inner: bytes) -> bytes:
    """Stage 2 of the full-message pipeline."""
    block = compress(spec, inner)
    return ENVELOPE_HEADER.pack(ENVELOPE_MAGIC, int(spec.algorithm), spec.param, len(inner)) + block.data


def _spec_from_wire(codec_id: int, param: int) -> CodecSpec:
    try:
        algo = Algorithm(codec_id)
    except ValueError:
        raise UnsupportedFormatError(f"unknown codec id {codec_id}") from None
    try:
        return CodecSpec(algo, param)
    except ConfigurationError as exc:
        raise IntegrityError(f"illegal codec parameter on the wire: {exc}") from None


def open_envelope(data) -> tuple[CodecSpec, bytes]:
    """Receive stage 1 of the full-message pipeline: decompress the body."""
    view = memoryview(data)
    if len(view) < ENVELOPE_HEADER.size:
        raise IntegrityError("message truncated inside envelope header")
    magic, codec_id, param, length = ENVELOPE_HEADER.unpack_from(view)
    if magic != ENVELOPE_MAGIC:
        raise UnsupportedFormatError(f"bad envelope magic {magic!r}")
    spec = _spec_from_wire(codec_id, param)
    if spec.algorithm is Algorithm.PNG:
        raise UnsupportedFormatError("PNG is not supported for full-message compression")
    inner = decompress(CompressedBlock(spec, length, view[ENVELOPE_HEADER.size:]))
    return spec, inner


def parse(data) -> ParsedMessage:
    """Deserialize an inner message; payloads stay encoded."""
    view = memoryview(data)
    end = len(view)
    if end < 4:
        raise IntegrityError("message truncated before magic")
    if bytes(view[:4]) != MAGIC:
        raise UnsupportedFormatError(f"bad magic {bytes(view[:4])!r}")
    if end < _HEAD.size:
        raise IntegrityError("message truncated inside header")
    _, version, flags, codec_id, param, base_rate, timestamp = _HEAD.unpack_from(view)
    if version != VERSION:
        raise UnsupportedFormatError(f"unsupported wire version {version}")
    if flags & ~(FLAG_QUANTIZED | FLAG_PATCHWISE):
        raise UnsupportedFormatError(f"unknown flag bits 0x{flags:02x}")
    spec = _spec_from_wire(codec_id, param)
    pos = _HEAD.size
    if pos + 1 > end:
        raise IntegrityError("message truncated at frame_id")
    flen = view[pos]
    pos += 1
    if pos + flen + _COUNT.size > end:
        raise IntegrityError("message truncated at frame_id")
    try:
        frame_id = bytes(view[pos:pos + flen]).decode("utf-8")
    except UnicodeDecodeError as exc:
        raise IntegrityError("frame_id is not utf-8") from exc
    pos += flen
    (count,) = _COUNT.unpack_from(view, pos)
    pos += _COUNT.size
    records = []
    for _ in range(count):
        if pos + PATCH_HEADER.size > end:
            raise IntegrityError("message truncated inside patch header")
        pid, ox, oy, cs, n, plen = PATCH_HEADER.unpack_from(view, pos)
        pos += PATCH_HEADER.size
        if pos + plen > end:
            raise IntegrityError("message truncated inside patch payload")
        records.append(PatchRecord(pid, (ox, oy), cs, n, view[pos:pos + plen]))
        pos += plen
    if pos != end:
        raise IntegrityError(f"{end - pos} trailing bytes after last patch")
    patchwise = bool(flags & FLAG_PATCHWISE)
    if not patchwise and spec.algorithm is not Algorithm.NONE:
        raise IntegrityError("full-mode inner message must carry raw payloads")
    return ParsedMessage(spec, bool(flags & FLAG_QUANTIZED), patchwise, base_rate, timestamp, frame_id, records)


def _patch_from_payload(rec: PatchRecord, payload, quantized: bool) -> Patch:
    n = rec.cells_per_side
    dtype, per_cell = (QCELL_DTYPE, BYTES_PER_CELL_QUANTIZED) if quantized else (CELL_DTYPE, BYTES_PER_CELL)
    if len(payload) != n * n * per_cell:
        raise IntegrityError(f"patch {rec.patch_id}: payload {len(payload)} bytes, expected {n * n * per_cell}")
    cells = np.frombuffer(payload, dtype=dtype).reshape(n, n, 2)
    return Patch(rec.patch_id, rec.origin, rec.cell_size, n, cells)


def build_grid(parsed: ParsedMessage) -> GridMap:
    """Receive final stage: decompress payloads (patch-wise) and build patches."""
    patches = []
    spec = parsed.spec
    for rec in parsed.records:
        if rec.cells_per_side <= 0:
            raise IntegrityError(f"patch {rec.patch_id}: cells_per_side {rec.cells_per_side}")
        per_cell = BYTES_PER_CELL_QUANTIZED if parsed.quantized else BYTES_PER_CELL
        expected = rec.cells_per_side ** 2 * per_cell
        if parsed.patchwise and spec.algorithm is not Algorithm.NONE:
            payload = decompress(CompressedBlock(spec, expected, rec.payload))
        else:
            payload = rec.payload
        patches.append(_patch_from_payload(rec, payload, parsed.quantized))
    return GridMap(parsed.base_rate, tuple(patches), parsed.timestamp, parsed.frame_id)


# --- public API ---------------------------------------------------------------


def encode_patchwise(grid: GridMap, spec: CodecSpec, quantized: bool = False) -> WireMessage:
    """Compress each patch independently, then serialize."""
    grid = _prepare(grid, quantized)
    blocks = compress_patches(grid, spec)
    return WireMessage(Mode.PATCHWISE, spec, bool(quantized), serialize_patchwise(grid, spec, blocks))


def encode_full(grid: GridMap, spec: CodecSpec, quantized: bool = False) -> WireMessage:
    """Serialize the whole message, then compress it once."""
    if spec.algorithm is Algorithm.PNG:
        raise UnsupportedFormatError("PNG is only supported patch-wise")
    grid = _prepare(grid, quantized)
    return WireMessage(Mode.FULL, spec, bool(quantized), compress_envelope(spec, serialize_inner(grid)))


def encode(grid: GridMap, spec: CodecSpec, quantized: bool = False, mode=Mode.PATCHWISE) -> WireMessage:
    if Mode.parse(mode) is Mode.FULL:
        return encode_full(grid, spec, quantized)
    return encode_patchwise(grid, spec, quantized)


def decode(message) -> DecodedMessage:
    """Decode a :class:`WireMessage` or raw bytes.

    Quantized messages come back as quantized grids (uint8 levels);
    dequantization is up to the caller.
    """
    data = message.data if isinstance(message, WireMessage) else message
    view = memoryview(data)
    if len(view) >= 4 and bytes(view[:4]) == ENVELOPE_MAGIC:
        spec, inner = open_envelope(view)
        parsed = parse(inner)
        if parsed.patchwise:
            raise IntegrityError("envelope wraps a patch-wise message")
        mode = Mode.FULL
    else:
        parsed = parse(view)
        if not parsed.patchwise:
            raise IntegrityError("full-mode inner message without envelope")
        spec = parsed.spec
        mode = Mode.PATCHWISE
    return DecodedMessage(build_grid(parsed), spec, parsed.quantized, mode)


# --- corpus / capture files -----------------------------------------------------


def write_messages(fp: BinaryIO, messages: Iterable) -> int:
    """Append ``u64`` length-prefixed messages; returns bytes written."""
    total = 0
    for msg in messages:
        data = msg.data if isinstance(msg, WireMessage) else bytes(msg)
        fp.write(_LEN.pack(len(data)))
        fp.write(data)
        total += _LEN.size + len(data)
    return total


def read_messages(fp: BinaryIO) -> Iterator[bytes]:
    while True:
        head = fp.read(_LEN.size)
        if not head:
            return
        if len(head) < _LEN.size:
            raise IntegrityError("truncated length prefix")
        (length,) = _LEN.unpack(head)
        data = fp.read(length)
        if len(data) != length:
            raise IntegrityError(f"truncated message: {len(data)} of {length} bytes")
        yield data


def save_corpus(path, grids: Iterable[GridMap], spec: CodecSpec | None = None,
                quantized: bool = False, mode=Mode.PATCHWISE) -> int:
    spec = spec or CodecSpec()
    with open(os.fspath(path), "wb") as fp:
        return write_messages(fp, (encode(g, spec, quantized, mode) for g in grids))


def load_corpus(path) -> list[GridMap]:
    with open(os.fspath(path), "rb") as fp:
        return [decode(m).grid for m in read_messages(fp)]
