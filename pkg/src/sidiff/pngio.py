"""Minimal PNG encode/inspect helpers.

The mock image backends need byte-deterministic output, so encoding is done
by hand (fixed zlib level, no ancillary chunks) instead of going through an
imaging library whose output bytes may vary across versions.
"""

from __future__ import annotations

import struct
import zlib

from .errors import DecodeError

_PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


def _chunk(tag: bytes, data: bytes) -> bytes:
    return (
        struct.pack(">I", len(data))
        + tag
        + data
        + struct.pack(">I", zlib.crc32(tag + data) & 0xFFFFFFFF)
    )


def encode_solid_png(width: int, height: int, rgb: tuple[int, int, int]) -> bytes:
    """Encode a solid-color 8-bit RGB PNG."""
    if width <= 0 or height <= 0:
        raise ValueError("image dimensions must be positive")
    row = b"\x00" + bytes(rgb) * width
    raw = row * height
    ihdr = struct.pack(">IIBBBBB", width, height, 8, 2, 0, 0, 0)
    return b"".join(
        [
            _PNG_MAGIC,
            _chunk(b"IHDR", ihdr),
            _chunk(b"IDAT", zlib.compress(raw, 9)),
            _chunk(b"IEND", b""),
        ]
    )


def read_png_size(data: bytes) -> tuple[int, int]:
    """Return (width, height) from a PNG header, or raise DecodeError."""
    if len(data) < 24 or not data.startswith(_PNG_MAGIC):
        raise DecodeError("payload is not a PNG")
    if data[12:16] != b"IHDR":
        raise DecodeError("PNG missing IHDR chunk")
    width, height = struct.unpack(">II", data[16:24])
    if width <= 0 or height <= 0:
        raise DecodeError("PNG header declares non-positive dimensions")
    return width, height
