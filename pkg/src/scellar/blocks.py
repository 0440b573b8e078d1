"""Binary wire blocks for bulk numeric payloads.

Metadata rides JSON; per-cell arrays would be wasteful there, so the
service ships them in two little-endian framed blocks. Each starts with
a fixed header, then the gene or embedding name, then zero padding up to
an 8-byte boundary so typed-array views need no copying on the client.

Expression block ("EXPB"):
    magic 4s, version u32, n_cells u64,
    raw_min f64, raw_max f64, clip_value f64,
    name_len u32, name utf-8, pad to 8,
    payload u16[n_cells]  (normalized value * 65535, rounded)

Embedding block ("EMBB"):
    magic 4s, version u32, n_cells u64, dims u32,
    name_len u32, name utf-8, pad to 8,
    payload f32[n_cells * dims]  (row-major)

Annotation block ("ANNB"):
    magic 4s, version u32, n_cells u64, n_categories u32,
    name_len u32, name utf-8, pad to 8,
    payload i32[n_cells]  (category code per cell, -1 = unassigned)
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import ScellarError
from .presentation import NormalizationInfo

EXPR_MAGIC = b"EXPB"
EMBED_MAGIC = b"EMBB"
ANNOT_MAGIC = b"ANNB"
BLOCK_VERSION = 1


class MalformedBlock(ScellarError):
    """The block's magic, version, or framing does not parse."""


def _pad8(n: int) -> bytes:
    return b"\0" * ((8 - n % 8) % 8)


def encode_expression_block(block: np.ndarray, info: NormalizationInfo) -> bytes:
    name = info.gene_name.encode("utf-8")
    head = struct.pack(
        "<4sIQdddI",
        EXPR_MAGIC,
        BLOCK_VERSION,
        len(block),
        info.raw_min,
        info.raw_max,
        info.clip_value,
        len(name),
    )
    prefix = head + name
    payload = np.ascontiguousarray(block, dtype="<u2").tobytes()
    return prefix + _pad8(len(prefix)) + payload


def decode_expression_block(buf: bytes) -> tuple[np.ndarray, NormalizationInfo]:
    head = struct.Struct("<4sIQdddI")
    if len(buf) < head.size:
        raise MalformedBlock("expression block shorter than its header")
    magic, version, n_cells, raw_min, raw_max, clip, name_len = head.unpack_from(buf)
    if magic != EXPR_MAGIC or version != BLOCK_VERSION:
        raise MalformedBlock(f"bad expression block magic/version {magic!r}/{version}")
    pos = head.size
    name = buf[pos : pos + name_len].decode("utf-8")
    pos += name_len
    pos += (8 - pos % 8) % 8
    end = pos + 2 * n_cells
    if len(buf) < end:
        raise MalformedBlock("expression block payload truncated")
    values = np.frombuffer(buf[pos:end], dtype="<u2")
    return values, NormalizationInfo(name, raw_min, raw_max, clip)


def encode_embedding_block(coords: np.ndarray, name: str) -> bytes:
    arr = np.ascontiguousarray(coords, dtype="<f4")
    n_cells, dims = arr.shape
    name_b = name.encode("utf-8")
    head = struct.pack("<4sIQII", EMBED_MAGIC, BLOCK_VERSION, n_cells, dims, len(name_b))
    prefix = head + name_b
    return prefix + _pad8(len(prefix)) + arr.tobytes()


def decode_embedding_block(buf: bytes) -> tuple[np.ndarray, str]:
    head = struct.Struct("<4sIQII")
    if len(buf) < head.size:
        raise MalformedBlock("embedding block shorter than its header")
    magic, version, n_cells, dims, name_len = head.unpack_from(buf)
    if magic != EMBED_MAGIC or version != BLOCK_VERSION:
        raise MalformedBlock(f"bad embedding block magic/version {magic!r}/{version}")
    pos = head.size
    name = buf[pos : pos + name_len].decode("utf-8")
    pos += name_len
    pos += (8 - pos % 8) % 8
    end = pos + 4 * n_cells * dims
    if len(buf) < end:
        raise MalformedBlock("embedding block payload truncated")
    coords = np.frombuffer(buf[pos:end], dtype="<f4").reshape(n_cells, dims)
    return coords, name


def encode_annotation_block(codes: np.ndarray, n_categories: int, name: str) -> bytes:
    arr = np.ascontiguousarray(codes, dtype="<i4")
    name_b = name.encode("utf-8")
    head = struct.pack(
        "<4sIQII", ANNOT_MAGIC, BLOCK_VERSION, len(arr), n_categories, len(name_b)
    )
    prefix = head + name_b
    return prefix + _pad8(len(prefix)) + arr.tobytes()


def decode_annotation_block(buf: bytes) -> tuple[np.ndarray, int, str]:
    head = struct.Struct("<4sIQII")
    if len(buf) < head.size:
        raise MalformedBlock("annotation block shorter than its header")
    magic, version, n_cells, n_categories, name_len = head.unpack_from(buf)
    if magic != ANNOT_MAGIC or version != BLOCK_VERSION:
        raise MalformedBlock(f"bad annotation block magic/version {magic!r}/{version}")
    pos = head.size
    name = buf[pos : pos + name_len].decode("utf-8")
    pos += name_len
    pos += (8 - pos % 8) % 8
    end = pos + 4 * n_cells
    if len(buf) < end:
        raise MalformedBlock("annotation block payload truncated")
    codes = np.frombuffer(buf[pos:end], dtype="<i4")
    return codes, n_categories, name
