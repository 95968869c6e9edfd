"""Compression, quantization and transport of adaptive patched occupancy grid maps."""

from gridtx.codecs import Algorithm, CodecSpec, CompressedBlock, compress, decompress
from gridtx.model import BinomialOpinion, CorpusConfig, GridMap, Patch, generate_corpus, payload_bytes, total_cells
from gridtx.quantizer import dequantize_grid, quantize_grid
from gridtx.wire import Mode, WireMessage, decode, encode, encode_full, encode_patchwise

__version__ = "0.1.0"

__all__ = [
    "Algorithm",
    "BinomialOpinion",
    "CodecSpec",
    "CompressedBlock",
    "CorpusConfig",
    "GridMap",
    "Mode",
    "Patch",
    "WireMessage",
    "compress",
    "decode",
    "decompress",
    "dequantize_grid",
    "encode",
    "encode_full",
    "encode_patchwise",
    "generate_corpus",
    "payload_bytes",
    "quantize_grid",
    "total_cells",
]
