"""LSB-first bit packing of codebook indices."""

from __future__ import annotations

import math

import numba
import numpy as np

__all__ = ["packed_size", "pack_indices", "unpack_indices"]


def packed_size(count: int, bits: int) -> int:
    return math.ceil(count * bits / 8)


@numba.njit(cache=True)
def _pack(values, bits, out):
    acc = np.uint64(0)
    filled = 0
    pos = 0
    mask = np.uint64((1 << bits) - 1)
    for v in values:
        acc |= (np.uint64(v) & mask) << np.uint64(filled)
        filled += bits
        while filled >= 8:
            out[pos] = np.uint8(acc & np.uint64(0xFF))
            acc >>= np.uint64(8)
            filled -= 8
            pos += 1
    if filled > 0:
        out[pos] = np.uint8(acc & np.uint64(0xFF))


@numba.njit(cache=True)
def _unpack(packed, bits, out):
    acc = np.uint64(0)
    filled = 0
    pos = 0
    mask = np.uint64((1 << bits) - 1)
    for i in range(out.shape[0]):
        while filled < bits:
            acc |= np.uint64(packed[pos]) << np.uint64(filled)
            filled += 8
            pos += 1
        out[i] = acc & mask
        acc >>= np.uint64(bits)
        filled -= bits


def pack_indices(values, bits: int) -> np.ndarray:
    """Pack non-negative integers below ``2**bits`` into a byte array."""
    if not 0 <= bits <= 32:
        raise ValueError("bits must lie in [0, 32]")
    v = np.ascontiguousarray(values, dtype=np.uint64)
    out = np.zeros(packed_size(v.size, bits), dtype=np.uint8)
    if bits and v.size:
        if int(v.max()) >> bits:
            raise ValueError(f"value does not fit in {bits} bits")
        _pack(v, bits, out)
    return out


def unpack_indices(packed, count: int, bits: int, out=None) -> np.ndarray:
    """Inverse of :func:`pack_indices`, optionally writing into ``out``."""
    if not 0 <= bits <= 32:
        raise ValueError("bits must lie in [0, 32]")
    if out is None:
        out = np.empty(count, dtype=np.uint32 if bits > 16 else np.uint16)
    if bits == 0:
        out[:count] = 0
        return out
    p = np.frombuffer(packed, dtype=np.uint8) if not isinstance(packed, np.ndarray) else packed
    if p.size < packed_size(count, bits):
        raise ValueError("packed buffer too short")
    _unpack(p, bits, out)
    return out
