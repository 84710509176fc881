"""Storage accounting: dense vs compressed bytes and the ratios between them."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

from ..kan import KanNetwork
from .fileformat import section_table
from .plan import KIND_DENSE, KIND_INT8, LayerHeader, ModelHeader, header_of, plan_memory

__all__ = [
    "StorageRow",
    "CompressionReport",
    "per_edge_bits",
    "file_bytes",
    "compression_report",
    "header_report",
    "reference_scale_header",
    "reference_scale_report",
    "QUOTED_TOTAL_BYTES",
    "QUOTED_DENSE_RUNTIME_BYTES",
    "COMPRESSION_FIELDS",
]

COMPRESSION_FIELDS = ("component", "bytes", "ratio")

# figures quoted for the 3.2M-edge detection head (decimal megabytes)
QUOTED_TOTAL_BYTES = 12.91e6
QUOTED_DENSE_RUNTIME_BYTES = 1.13e9
REFERENCE_EDGES = 3_200_000


@dataclass(frozen=True)
class StorageRow:
    component: str
    bytes: int
    ratio: float


@dataclass
class CompressionReport:
    """Rows carry ``dense_runtime_bytes / bytes`` as their ratio."""

    rows: list[StorageRow]
    per_edge_bits: list[int]
    notes: list[str] = field(default_factory=list)

    def __getitem__(self, component: str) -> StorageRow:
        for r in self.rows:
            if r.component == component:
                return r
        raise KeyError(component)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(COMPRESSION_FIELDS)
            for r in self.rows:
                w.writerow([r.component, r.bytes, repr(r.ratio)])

    def lines(self) -> list[str]:
        out = [f"{r.component:>20}: {r.bytes:,} B  ({r.ratio:.3g}x)" for r in self.rows]
        return out + [f"note: {n}" for n in self.notes]


def per_edge_bits(h: LayerHeader) -> int:
    """Stored bits per edge: index plus gain and bias (grid bits for dense layers)."""
    if h.kind == KIND_DENSE:
        return 32 * h.grid_size
    scalar = 8 if h.kind == KIND_INT8 else 32
    return h.index_bits + 2 * scalar


def file_bytes(header: ModelHeader) -> int:
    table = section_table(header)
    if not table:
        return 16
    off, length = table[-1][-1]
    return off + length


def _dense_bytes(header: ModelHeader) -> int:
    return sum(h.num_edges * h.grid_size * 4 for h in header.layers)


def header_report(dense: ModelHeader, compressed: ModelHeader, batch: int = 1) -> CompressionReport:
    shape = lambda hdr: [(h.in_dim, h.out_dim, h.grid_size) for h in hdr.layers]
    if shape(dense) != shape(compressed):
        raise ValueError(f"topology mismatch: {shape(dense)} vs {shape(compressed)}")
    base = _dense_bytes(dense)
    plan = plan_memory(compressed, batch)
    rows = []

    def add(name, nbytes):
        rows.append(StorageRow(name, int(nbytes), base / nbytes if nbytes else float("inf")))

    add("dense_runtime", base)
    add("dense_checkpoint", file_bytes(dense))
    if all(h.kind == KIND_DENSE for h in compressed.layers):
        return CompressionReport(rows, [per_edge_bits(h) for h in compressed.layers], ["uncompressed"])
    add("codebook", plan.total("codebook_bytes"))
    add("indices_packed", plan.total("index_bytes"))
    add("indices_unpacked", plan.total("unpacked_index_bytes"))
    add("gains", plan.total("gain_bytes"))
    add("biases", plan.total("bias_bytes"))
    add("scratch", plan.scratch_bytes)
    add("compressed_storage", plan.payload_bytes)
    add("compressed_resident", plan.working_set_bytes)
    add("compressed_file", file_bytes(compressed))
    return CompressionReport(rows, [per_edge_bits(h) for h in compressed.layers])


def compression_report(dense: KanNetwork, compressed, batch: int = 1) -> CompressionReport:
    return header_report(header_of(dense), header_of(compressed), batch)


def reference_scale_header(
    edges: int = REFERENCE_EDGES, K: int = 65_536, grid_size: int = 10, codebooks: int = 1, int8: bool = True
) -> tuple[ModelHeader, ModelHeader]:
    """Dense and compressed headers for a detection-head-sized model.

    ``codebooks`` layers split the edges evenly (3200 inputs into
    ``edges / 3200 / codebooks`` outputs each, chained back to 3200).
    """
    kind = KIND_INT8 if int8 else 1
    fan = 3200
    per = edges // codebooks
    widths = [fan]
    for i in range(codebooks):
        widths.append(per // widths[-1])
    dense, comp = [], []
    for a, b in zip(widths, widths[1:]):
        dense.append(LayerHeader(a, b, grid_size, 0, KIND_DENSE))
        comp.append(
            LayerHeader(a, b, grid_size, K, kind, codebook_scale=1.0, bias_scale=1.0, gain_log_step=1.0)
        )
    return ModelHeader(tuple(dense)), ModelHeader(tuple(comp))


def reference_scale_report(codebooks: int = 1, **kwargs) -> CompressionReport:
    dense, comp = reference_scale_header(codebooks=codebooks, **kwargs)
    rep = header_report(dense, comp)
    total = rep["compressed_storage"].bytes
    rep.notes.append(
        f"compressed storage {total / 1e6:.3f} MB vs quoted 12.91 MB "
        f"({100 * (total / QUOTED_TOTAL_BYTES - 1):+.1f}%)"
    )
    base = rep["dense_runtime"].bytes
    rep.notes.append(
        f"dense runtime E*G*4 = {base / 1e6:.1f} MB vs quoted 1,130 MB; "
        f"ratio {base / total:.1f}x vs quoted 88x"
    )
    return rep
