"""The ``SKAN`` v1 model container.

Layout (all integers little-endian)::

    offset 0   4s  magic "SKAN"
           4   u16 format version (1)
           6   u8  endianness tag (1 = little-endian)
           7   u8  reserved (0)
           8   u32 layer count
          12   u32 reserved (0)
          16   layer headers, 132 bytes each
               payload sections, each starting on a 64-byte boundary

Layer header::

    u32 in_dim, u32 out_dim, u32 G, u32 K (0 = uncompressed), u8 kind,
    u8 index_bits, u16 reserved,
    f64 domain_lo, f64 domain_hi, f64 codebook_scale, f64 bias_scale,
    f64 gain_log_min, f64 gain_log_step,
    4 x (u64 offset, u64 length) for the sections
    [coefficients|codebook, packed indices, gains, biases]

Dense layers (kind 0) store float32 coefficients in the first section and
leave the others empty.  Float VQ layers (kind 1) store float32 codebook,
gains and biases; int8 layers (kind 2) store int8 codes.  Indices are packed
LSB-first with ``ceil(log2 K)`` bits each.
"""

from __future__ import annotations

import math
import mmap
import struct
from pathlib import Path

import numpy as np

from ..gsb import Codebook, CodebookMeta, CompressedLayer, CompressedNetwork
from ..kan import KanLayer, KanNetwork
from ..quant import LinearQuantParams, LogQuantParams
from .bitpack import pack_indices, packed_size, unpack_indices
from .plan import (
    KIND_DENSE,
    KIND_FLOAT,
    KIND_INT8,
    LayerHeader,
    ModelHeader,
    MemoryPlan,
    PlanningError,
    header_of,
    index_bits,
    plan_memory,
)

__all__ = [
    "MAGIC",
    "VERSION",
    "ALIGNMENT",
    "ModelFormatError",
    "MagicError",
    "VersionError",
    "EndiannessError",
    "HeaderError",
    "QuantParamError",
    "TruncatedError",
    "IndexRangeError",
    "PayloadError",
    "Allocator",
    "serialize",
    "deserialize",
    "read_header",
    "save_model",
    "load_model",
    "section_table",
]

MAGIC = b"SKAN"
VERSION = 1
LITTLE_ENDIAN_TAG = 1
ALIGNMENT = 64

_FILE_HEADER = struct.Struct("<4sHBBII")
_LAYER_HEADER = struct.Struct("<IIIIBBH6d8Q")
SECTION_NAMES = ("codebook", "indices", "gains", "biases")
DENSE_SECTION_NAMES = ("coefficients", "unused1", "unused2", "unused3")
_FIELD_OFFSETS = {
    "domain_lo": 20, "domain_hi": 28, "codebook_scale": 36,
    "bias_scale": 44, "gain_log_min": 52, "gain_log_step": 60, "sections": 68,
}


class ModelFormatError(ValueError):
    """Malformed model file; ``offset`` is the byte position of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class MagicError(ModelFormatError):
    pass


class VersionError(ModelFormatError):
    pass


class EndiannessError(ModelFormatError):
    pass


class HeaderError(ModelFormatError):
    pass


class QuantParamError(ModelFormatError):
    pass


class TruncatedError(ModelFormatError):
    def __init__(self, section: str, offset: int, needed: int, available: int):
        super().__init__(
            f"truncated file: {section} needs bytes up to {needed}, only {available} present", offset
        )
        self.section = section


class IndexRangeError(ModelFormatError):
    def __init__(self, layer: int, i: int, j: int, value: int, K: int, offset: int):
        super().__init__(f"layer {layer} edge ({i}, {j}): index {value} >= K={K}", offset)
        self.edge = (layer, i, j)


class PayloadError(ModelFormatError):
    pass


def _align(n: int) -> int:
    return -(-n // ALIGNMENT) * ALIGNMENT


class Allocator:
    """Hands out 64-byte aligned byte buffers and logs every request."""

    def __init__(self):
        self.log: list[tuple[str, int]] = []

    def __call__(self, name: str, nbytes: int) -> np.ndarray:
        self.log.append((name, nbytes))
        raw = np.empty(nbytes + ALIGNMENT, dtype=np.uint8)
        start = (-raw.ctypes.data) % ALIGNMENT
        return raw[start : start + nbytes]


def _section_lengths(h: LayerHeader) -> list[int]:
    e, g = h.num_edges, h.grid_size
    if h.kind == KIND_DENSE:
        return [e * g * 4, 0, 0, 0]
    width = 1 if h.kind == KIND_INT8 else 4
    return [h.K * g * width, packed_size(e, h.index_bits), e * width, e * width]


def section_table(header: ModelHeader) -> list[list[tuple[int, int]]]:
    """Deterministic ``(offset, length)`` of every payload section."""
    pos = _align(_FILE_HEADER.size + _LAYER_HEADER.size * len(header.layers))
    table = []
    for h in header.layers:
        row = []
        for length in _section_lengths(h):
            row.append((pos, length))
            pos = _align(pos + length)
        table.append(row)
    return table


def _layer_payload(layer) -> list[bytes]:
    if isinstance(layer, KanLayer):
        return [np.ascontiguousarray(layer.coefficients, dtype="<f4").tobytes(), b"", b"", b""]
    bits = index_bits(layer.K)
    packed = pack_indices(layer.indices, bits).tobytes()
    if layer.is_int8:
        return [
            np.ascontiguousarray(layer.codebook.entries, dtype=np.int8).tobytes(),
            packed,
            np.ascontiguousarray(layer.gains, dtype=np.int8).tobytes(),
            np.ascontiguousarray(layer.biases, dtype=np.int8).tobytes(),
        ]
    return [
        np.ascontiguousarray(layer.codebook.entries, dtype="<f4").tobytes(),
        packed,
        np.ascontiguousarray(layer.gains, dtype="<f4").tobytes(),
        np.ascontiguousarray(layer.biases, dtype="<f4").tobytes(),
    ]


def serialize(model) -> bytes:
    """Encode a :class:`KanNetwork` or :class:`CompressedNetwork` as SKAN v1."""
    header = header_of(model)
    plan_memory(header)
    table = section_table(header)
    chunks = [_FILE_HEADER.pack(MAGIC, VERSION, LITTLE_ENDIAN_TAG, 0, len(header.layers), 0)]
    for h, row in zip(header.layers, table):
        flat = [v for pair in row for v in pair]
        chunks.append(
            _LAYER_HEADER.pack(
                h.in_dim, h.out_dim, h.grid_size, h.K, h.kind, h.index_bits, 0,
                h.domain_lo, h.domain_hi, h.codebook_scale, h.bias_scale,
                h.gain_log_min, h.gain_log_step, *flat,
            )
        )
    out = bytearray(b"".join(chunks))
    for layer, row in zip(model.layers, table):
        for data, (offset, length) in zip(_layer_payload(layer), row):
            assert len(data) == length
            out.extend(b"\0" * (offset - len(out)))
            out.extend(data)
    return bytes(out)


def read_header(data) -> tuple[ModelHeader, list[list[tuple[int, int]]]]:
    """Parse and validate the file and layer headers without touching payloads."""
    buf = memoryview(data).cast("B")
    size = len(buf)
    if size < _FILE_HEADER.size:
        raise TruncatedError("file header", 0, _FILE_HEADER.size, size)
    magic, version, endian, _, n_layers, _ = _FILE_HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise MagicError(f"bad magic {bytes(magic)!r}, expected {MAGIC!r}", 0)
    if version != VERSION:
        raise VersionError(f"unsupported format version {version}", 4)
    if endian != LITTLE_ENDIAN_TAG:
        raise EndiannessError(f"unsupported endianness tag {endian}", 6)
    layers, table = [], []
    for li in range(n_layers):
        base = _FILE_HEADER.size + li * _LAYER_HEADER.size
        if base + _LAYER_HEADER.size > size:
            raise TruncatedError(f"layer {li} header", base, base + _LAYER_HEADER.size, size)
        vals = _LAYER_HEADER.unpack_from(buf, base)
        in_dim, out_dim, g, K, kind, bits, _ = vals[:7]
        floats = vals[7:13]
        sections = vals[13:]
        h = LayerHeader(in_dim, out_dim, g, K, kind, *floats)
        _validate_layer_header(li, base, h, bits, layers)
        layers.append(h)
        table.append([(sections[2 * s], sections[2 * s + 1]) for s in range(4)])
    header = ModelHeader(tuple(layers))
    expected = section_table(header)
    for li, (row, want) in enumerate(zip(table, expected)):
        base = _FILE_HEADER.size + li * _LAYER_HEADER.size + _FIELD_OFFSETS["sections"]
        for s, ((off, length), (woff, wlen)) in enumerate(zip(row, want)):
            where = base + 16 * s
            if off % ALIGNMENT:
                raise HeaderError(f"layer {li} {SECTION_NAMES[s]} section misaligned at {off}", where)
            if (off, length) != (woff, wlen):
                raise HeaderError(
                    f"layer {li} {SECTION_NAMES[s]} section is ({off}, {length}), "
                    f"header implies ({woff}, {wlen})",
                    where,
                )
    return header, table


def _validate_layer_header(li, base, h: LayerHeader, bits, previous):
    if h.kind not in (KIND_DENSE, KIND_FLOAT, KIND_INT8):
        raise HeaderError(f"layer {li}: unknown layer kind {h.kind}", base + 16)
    if h.in_dim < 1 or h.out_dim < 1:
        raise HeaderError(f"layer {li}: empty layer {h.in_dim}x{h.out_dim}", base)
    if h.grid_size < 2:
        raise HeaderError(f"layer {li}: grid size {h.grid_size} < 2", base + 8)
    if previous and previous[-1].out_dim != h.in_dim:
        raise HeaderError(
            f"layer {li}: input width {h.in_dim} does not match previous output {previous[-1].out_dim}",
            base,
        )
    if h.kind == KIND_DENSE:
        if h.K != 0:
            raise HeaderError(f"layer {li}: uncompressed layer must declare K=0", base + 12)
    elif h.K < 1:
        raise HeaderError(f"layer {li}: codebook size K={h.K}", base + 12)
    if bits != h.index_bits:
        raise HeaderError(f"layer {li}: index_bits {bits} != ceil(log2 K)={h.index_bits}", base + 17)
    if not (math.isfinite(h.domain_lo) and math.isfinite(h.domain_hi)) or not h.domain_lo < h.domain_hi:
        raise HeaderError(f"layer {li}: invalid domain [{h.domain_lo}, {h.domain_hi}]", base + 20)
    for name in ("codebook_scale", "bias_scale", "gain_log_min", "gain_log_step"):
        v = getattr(h, name)
        if not math.isfinite(v):
            raise QuantParamError(f"layer {li}: non-finite {name}", base + _FIELD_OFFSETS[name])
    if h.kind == KIND_INT8:
        for name in ("codebook_scale", "bias_scale", "gain_log_step"):
            if not getattr(h, name) > 0:
                raise QuantParamError(f"layer {li}: {name} must be > 0", base + _FIELD_OFFSETS[name])


def deserialize(data, *, copy: bool = True, allocator: Allocator | None = None):
    """Decode SKAN bytes into a :class:`KanNetwork` or :class:`CompressedNetwork`.

    With ``copy=True`` each planned buffer is allocated exactly once and
    filled from the stream.  With ``copy=False`` coefficient, codebook, gain
    and bias arrays are zero-copy views of ``data`` and only the unpacked
    index tables are allocated.
    """
    header, table = read_header(data)
    try:
        plan = plan_memory(header)
    except PlanningError as exc:
        raise HeaderError(str(exc), 0) from exc
    raw = np.frombuffer(data, dtype=np.uint8)
    size = raw.size
    for li, (h, row) in enumerate(zip(header.layers, table)):
        names = DENSE_SECTION_NAMES if h.kind == KIND_DENSE else SECTION_NAMES
        for s, (off, length) in enumerate(row):
            if length and off + length > size:
                raise TruncatedError(f"layer {li} {names[s]}", off, off + length, size)
    if table:
        end = table[-1][-1][0] + table[-1][-1][1]
        if size < end:
            raise TruncatedError("end-of-file padding", size, end, size)

    alloc = allocator or Allocator()
    planned = dict(plan.buffers)

    def take(name, section, dtype):
        off, length = section
        src = raw[off : off + length]
        if not copy:
            return src.view(dtype)
        buf = alloc(name, planned[name])
        buf[:] = src
        return buf.view(dtype)

    layers = []
    for li, (h, row) in enumerate(zip(header.layers, table)):
        shape = (h.in_dim, h.out_dim, h.grid_size)
        if h.kind == KIND_DENSE:
            coeffs = take(f"layer{li}.coefficients", row[0], "<f4").reshape(shape)
            if not np.all(np.isfinite(coeffs)):
                raise PayloadError(f"layer {li}: non-finite coefficient", row[0][0])
            layers.append(KanLayer(coeffs, (h.domain_lo, h.domain_hi)))
            continue
        dtype = np.int8 if h.kind == KIND_INT8 else np.dtype("<f4")
        entries = take(f"layer{li}.codebook", row[0], dtype).reshape(h.K, h.grid_size)
        gains = take(f"layer{li}.gains", row[2], dtype)
        biases = take(f"layer{li}.biases", row[3], dtype)
        name = f"layer{li}.indices"
        table_buf = alloc(name, planned[name]).view(np.uint16 if h.index_width == 2 else np.uint32)
        off, length = row[1]
        indices = unpack_indices(raw[off : off + length], h.num_edges, h.index_bits, out=table_buf)
        _validate_payload(li, h, row, entries, indices, gains)
        if h.kind == KIND_INT8:
            layers.append(
                CompressedLayer(
                    codebook=Codebook(entries, CodebookMeta(), h.codebook_scale),
                    indices=indices, gains=gains, biases=biases,
                    in_dim=h.in_dim, out_dim=h.out_dim, domain=(h.domain_lo, h.domain_hi),
                    gain_params=LogQuantParams(h.gain_log_min, h.gain_log_step),
                    bias_params=LinearQuantParams(h.bias_scale),
                )
            )
        else:
            layers.append(
                CompressedLayer(
                    codebook=Codebook(entries), indices=indices, gains=gains, biases=biases,
                    in_dim=h.in_dim, out_dim=h.out_dim, domain=(h.domain_lo, h.domain_hi),
                )
            )
    if not layers:
        raise HeaderError("model has no layers", 8)
    if all(isinstance(l, KanLayer) for l in layers):
        return KanNetwork(layers)
    if all(isinstance(l, CompressedLayer) for l in layers):
        return CompressedNetwork(layers)
    raise HeaderError("mixing uncompressed and compressed layers is not supported", 16)


def _validate_payload(li, h, row, entries, indices, gains):
    bad = np.flatnonzero(indices >= h.K)
    if bad.size:
        e = int(bad[0])
        off = row[1][0] + (e * h.index_bits) // 8
        raise IndexRangeError(li, e // h.out_dim, e % h.out_dim, int(indices[e]), h.K, off)
    if h.kind == KIND_FLOAT:
        if not np.all(np.isfinite(entries)):
            raise PayloadError(f"layer {li}: non-finite codebook entry", row[0][0])
        bad = np.flatnonzero(~np.isfinite(gains) | (gains < 0))
        if bad.size:
            raise PayloadError(f"layer {li}: invalid gain at edge {int(bad[0])}", row[2][0] + 4 * int(bad[0]))
    else:
        bad = np.flatnonzero(gains < 0)
        if bad.size:
            raise PayloadError(f"layer {li}: gain sign bit set at edge {int(bad[0])}", row[2][0] + int(bad[0]))


def save_model(model, path) -> MemoryPlan:
    data = serialize(model)
    Path(path).write_bytes(data)
    return plan_memory(header_of(model))


def load_model(path, *, use_mmap: bool = False):
    """Read a model file; ``use_mmap`` maps it read-only and loads zero-copy."""
    with open(path, "rb") as fh:
        if not use_mmap:
            return deserialize(fh.read())
        if Path(path).stat().st_size == 0:
            return deserialize(b"")
        mm = mmap.mmap(fh.fileno(), 0, access=mmap.ACCESS_READ)
    return deserialize(mm, copy=False)
