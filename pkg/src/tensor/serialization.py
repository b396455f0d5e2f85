"""
DCT1 binary tensor format.

Layout: magic ``DCT1``, u32 little-endian rank, rank × u32 little-endian
extents, then the float64 little-endian payload in row-major order.
"""

import struct

import numpy as np

MAGIC = b"DCT1"


class FormatError(ValueError):
    """Malformed file contents; ``offset`` is the byte position of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


def encode_dct1(array: np.ndarray) -> bytes:
    array = np.asarray(array, dtype="<f8", order="C")
    header = MAGIC + struct.pack("<I", array.ndim) + struct.pack(f"<{array.ndim}I", *array.shape)
    return header + array.tobytes(order="C")


def decode_dct1(payload: bytes) -> np.ndarray:
    if len(payload) < 8:
        raise FormatError("truncated DCT1 header", len(payload))
    if payload[:4] != MAGIC:
        raise FormatError(f"bad magic {payload[:4]!r}, expected {MAGIC!r}", 0)
    (rank,) = struct.unpack_from("<I", payload, 4)
    extents_end = 8 + 4 * rank
    if len(payload) < extents_end:
        raise FormatError(f"truncated extents for rank {rank}", len(payload))
    shape = struct.unpack_from(f"<{rank}I", payload, 8)
    expected = extents_end + 8 * int(np.prod(shape, dtype=np.int64))
    if len(payload) != expected:
        raise FormatError(f"payload holds {len(payload) - extents_end} bytes, shape {shape} needs "
                          f"{expected - extents_end}", min(len(payload), expected))
    data = np.frombuffer(payload, dtype="<f8", offset=extents_end)
    return data.astype(np.float64).reshape(shape)
