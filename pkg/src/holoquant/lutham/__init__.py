"""Compressed inference runtime: memory planning, model files, kernel, benchmarks."""

from .bench import LatencyStats, bench_iso_latency, make_iso_family, max_min_ratio, write_bench_csv
from .bitpack import pack_indices, unpack_indices
from .fileformat import (
    Allocator,
    HeaderError,
    IndexRangeError,
    MagicError,
    ModelFormatError,
    PayloadError,
    QuantParamError,
    TruncatedError,
    VersionError,
    deserialize,
    load_model,
    read_header,
    save_model,
    serialize,
)
from .plan import LayerHeader, LayerPlan, MemoryPlan, ModelHeader, PlanningError, header_of, plan_memory
from .report import CompressionReport, compression_report, reference_scale_report, per_edge_bits
from .runtime import AllocationCounter, Workspace, WorkspaceError, compressed_forward, pli_lookup
