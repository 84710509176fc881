"""Ahead-of-time memory planning from model headers alone."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from ..gsb import CompressedLayer, CompressedNetwork
from ..kan import KanLayer, KanNetwork

__all__ = [
    "KIND_DENSE",
    "KIND_FLOAT",
    "KIND_INT8",
    "PlanningError",
    "LayerHeader",
    "ModelHeader",
    "LayerPlan",
    "MemoryPlan",
    "index_bits",
    "header_of",
    "plan_memory",
]

KIND_DENSE = 0
KIND_FLOAT = 1
KIND_INT8 = 2
KIND_NAMES = {KIND_DENSE: "dense-f32", KIND_FLOAT: "vq-f32", KIND_INT8: "vq-int8"}

ACTIVATION_BYTES = 8
MAX_DIM = 2**32 - 1
MAX_BUFFER_BYTES = 2**47


class PlanningError(ValueError):
    pass


def index_bits(K: int) -> int:
    """``ceil(log2 K)``; a one-entry codebook needs no index bits."""
    if K < 1:
        raise PlanningError(f"codebook size must be >= 1, got {K}")
    return (K - 1).bit_length()


@dataclass(frozen=True)
class LayerHeader:
    in_dim: int
    out_dim: int
    grid_size: int
    K: int
    kind: int
    domain_lo: float = -1.0
    domain_hi: float = 1.0
    codebook_scale: float = 0.0
    bias_scale: float = 0.0
    gain_log_min: float = 0.0
    gain_log_step: float = 0.0

    @property
    def num_edges(self) -> int:
        return self.in_dim * self.out_dim

    @property
    def index_bits(self) -> int:
        return 0 if self.kind == KIND_DENSE else index_bits(self.K)

    @property
    def index_width(self) -> int:
        """Bytes per entry of the unpacked runtime index table."""
        return 2 if self.index_bits <= 16 else 4


@dataclass(frozen=True)
class ModelHeader:
    layers: tuple[LayerHeader, ...] = ()


def header_of(model) -> ModelHeader:
    if isinstance(model, KanNetwork):
        return ModelHeader(tuple(_dense_header(l) for l in model.layers))
    if isinstance(model, CompressedNetwork):
        return ModelHeader(tuple(_vq_header(l) for l in model.layers))
    raise TypeError(f"cannot plan a {type(model).__name__}")


def _dense_header(layer: KanLayer) -> LayerHeader:
    return LayerHeader(layer.in_dim, layer.out_dim, layer.grid_size, 0, KIND_DENSE, *layer.domain)


def _vq_header(cl: CompressedLayer) -> LayerHeader:
    if cl.is_int8:
        return LayerHeader(
            cl.in_dim, cl.out_dim, cl.grid_size, cl.K, KIND_INT8, *cl.domain,
            codebook_scale=cl.codebook.scale,
            bias_scale=cl.bias_params.scale,
            gain_log_min=cl.gain_params.log_min,
            gain_log_step=cl.gain_params.log_step,
        )
    return LayerHeader(cl.in_dim, cl.out_dim, cl.grid_size, cl.K, KIND_FLOAT, *cl.domain)


@dataclass(frozen=True)
class LayerPlan:
    codebook_bytes: int = 0
    index_bytes: int = 0
    unpacked_index_bytes: int = 0
    gain_bytes: int = 0
    bias_bytes: int = 0
    dense_bytes: int = 0
    scratch_bytes: int = 0

    @property
    def payload_bytes(self) -> int:
        """Bytes stored in the model file (bit-packed indices)."""
        return self.dense_bytes + self.codebook_bytes + self.index_bytes + self.gain_bytes + self.bias_bytes

    @property
    def resident_bytes(self) -> int:
        """Bytes held by the loaded model (unpacked indices)."""
        return (
            self.dense_bytes + self.codebook_bytes + self.unpacked_index_bytes
            + self.gain_bytes + self.bias_bytes
        )


@dataclass(frozen=True)
class MemoryPlan:
    layers: tuple[LayerPlan, ...] = ()
    batch: int = 1
    scratch_bytes: int = 0
    buffers: tuple[tuple[str, int], ...] = field(default=())

    def total(self, name: str) -> int:
        return sum(getattr(l, name) for l in self.layers)

    @property
    def payload_bytes(self) -> int:
        return sum(l.payload_bytes for l in self.layers)

    @property
    def resident_bytes(self) -> int:
        return sum(l.resident_bytes for l in self.layers)

    @property
    def working_set_bytes(self) -> int:
        """Model tables plus the activation double buffer."""
        return self.resident_bytes + self.scratch_bytes


def _check(value: int, what: str) -> int:
    if value > MAX_BUFFER_BYTES:
        raise PlanningError(f"{what} needs {value} bytes, above the {MAX_BUFFER_BYTES} byte limit")
    return value


def plan_memory(header: ModelHeader, batch: int = 1) -> MemoryPlan:
    """Byte-exact buffer sizes for every layer, derived from the header only."""
    if batch < 0:
        raise PlanningError("batch must be >= 0")
    plans, buffers = [], []
    for li, h in enumerate(header.layers):
        for name in ("in_dim", "out_dim", "grid_size"):
            v = getattr(h, name)
            if not 1 <= v <= MAX_DIM:
                raise PlanningError(f"layer {li}: {name}={v} out of range")
        if h.grid_size < 2:
            raise PlanningError(f"layer {li}: grid_size must be >= 2")
        e, g = h.num_edges, h.grid_size
        scratch = _check(2 * batch * max(h.in_dim, h.out_dim) * ACTIVATION_BYTES, f"layer {li} scratch")
        if h.kind == KIND_DENSE:
            p = LayerPlan(dense_bytes=_check(e * g * 4, f"layer {li} coefficients"), scratch_bytes=scratch)
            buffers.append((f"layer{li}.coefficients", p.dense_bytes))
        elif h.kind in (KIND_FLOAT, KIND_INT8):
            if not 1 <= h.K <= MAX_DIM:
                raise PlanningError(f"layer {li}: K={h.K} out of range")
            width = 1 if h.kind == KIND_INT8 else 4
            p = LayerPlan(
                codebook_bytes=_check(h.K * g * width, f"layer {li} codebook"),
                index_bytes=_check(math.ceil(e * h.index_bits / 8), f"layer {li} indices"),
                unpacked_index_bytes=_check(e * h.index_width, f"layer {li} index table"),
                gain_bytes=e * width,
                bias_bytes=e * width,
                scratch_bytes=scratch,
            )
            buffers += [
                (f"layer{li}.codebook", p.codebook_bytes),
                (f"layer{li}.indices", p.unpacked_index_bytes),
                (f"layer{li}.gains", p.gain_bytes),
                (f"layer{li}.biases", p.bias_bytes),
            ]
        else:
            raise PlanningError(f"layer {li}: unknown layer kind {h.kind}")
        plans.append(p)
    scratch_total = max((p.scratch_bytes for p in plans), default=0)
    return MemoryPlan(tuple(plans), batch, scratch_total, tuple(buffers))
