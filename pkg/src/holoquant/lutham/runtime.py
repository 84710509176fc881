"""Allocation-free batched evaluation of dense and compressed models.

A :class:`Workspace` binds one model: it resolves the address of every table
once, owns the activation double buffer and the output buffer, and sizes
them from the memory plan.  :func:`compressed_forward` then makes a single
call into a compiled kernel that takes only integer arguments, so the
steady-state loop never allocates (checked with :class:`AllocationCounter`).
"""

from __future__ import annotations

import tracemalloc

import numba
import numpy as np
from numba import types
from numba.core import cgutils
from numba.core.runtime import _nrt_python, rtsys
from numba.extending import intrinsic

from ..gsb import Codebook, CompressedNetwork
from ..kan import KanLayer, KanNetwork, ShapeError, locate
from .plan import MemoryPlan, header_of, plan_memory

__all__ = [
    "WorkspaceError",
    "NonFiniteInputError",
    "Workspace",
    "compressed_forward",
    "pli_lookup",
    "AllocationCounter",
]

_META = 10  # int64 slots per layer
_FPAR = 6  # float64 slots per layer
_NODE_SNAP = 1e-9
_LOG_ZERO_CODE = 127

_nrt_python.memsys_enable_stats()


class WorkspaceError(ValueError):
    pass


class NonFiniteInputError(ValueError):
    pass


@intrinsic
def _as_pointer(typingctx, addr):
    if not isinstance(addr, types.Integer):
        return None

    def codegen(context, builder, signature, args):
        return builder.inttoptr(args[0], cgutils.voidptr_t)

    return types.voidptr(addr), codegen


@numba.njit(cache=True)
def _locate(xv, lo, hi, g):
    if xv < lo:
        xv = lo
    elif xv > hi:
        xv = hi
    t = (xv - lo) * ((g - 1) / (hi - lo))
    r = np.rint(t)
    if abs(t - r) <= _NODE_SNAP:
        t = r
    k = int(np.floor(t))
    if k > g - 2:
        k = g - 2
    return k, t - k


@numba.njit(cache=True)
def _run_layer(meta, fp, l, src, dst, batch):
    kind = meta[l * _META]
    n_in = meta[l * _META + 1]
    n_out = meta[l * _META + 2]
    g = meta[l * _META + 3]
    k_size = meta[l * _META + 4]
    width = meta[l * _META + 5]
    a_tab = meta[l * _META + 6]
    a_idx = meta[l * _META + 7]
    a_gain = meta[l * _META + 8]
    a_bias = meta[l * _META + 9]
    lo = fp[l * _FPAR]
    hi = fp[l * _FPAR + 1]
    cscale = fp[l * _FPAR + 2]
    bscale = fp[l * _FPAR + 3]
    lmin = fp[l * _FPAR + 4]
    lstep = fp[l * _FPAR + 5]
    n_edges = n_in * n_out

    for p in range(batch * n_out):
        dst[p] = 0.0

    if kind == 0:
        coef = numba.carray(_as_pointer(a_tab), (n_edges * g,), np.float32)
        for b in range(batch):
            for i in range(n_in):
                k, f = _locate(src[b * n_in + i], lo, hi, g)
                for j in range(n_out):
                    base = (i * n_out + j) * g + k
                    dst[b * n_out + j] += (1.0 - f) * coef[base] + f * coef[base + 1]
        return

    idx16 = numba.carray(_as_pointer(a_idx), (n_edges,), np.uint16)
    idx32 = numba.carray(_as_pointer(a_idx), (n_edges if width == 4 else 0,), np.uint32)
    if kind == 1:
        cb = numba.carray(_as_pointer(a_tab), (k_size * g,), np.float32)
        gains = numba.carray(_as_pointer(a_gain), (n_edges,), np.float32)
        biases = numba.carray(_as_pointer(a_bias), (n_edges,), np.float32)
        for b in range(batch):
            for i in range(n_in):
                k, f = _locate(src[b * n_in + i], lo, hi, g)
                for j in range(n_out):
                    e = i * n_out + j
                    code = np.int64(idx16[e]) if width == 2 else np.int64(idx32[e])
                    row = code * g + k
                    v = (1.0 - f) * cb[row] + f * cb[row + 1]
                    dst[b * n_out + j] += gains[e] * v + biases[e]
        return

    cb8 = numba.carray(_as_pointer(a_tab), (k_size * g,), np.int8)
    gcodes = numba.carray(_as_pointer(a_gain), (n_edges,), np.int8)
    bcodes = numba.carray(_as_pointer(a_bias), (n_edges,), np.int8)
    for b in range(batch):
        for i in range(n_in):
            k, f = _locate(src[b * n_in + i], lo, hi, g)
            for j in range(n_out):
                e = i * n_out + j
                code = np.int64(idx16[e]) if width == 2 else np.int64(idx32[e])
                row = code * g + k
                v = (1.0 - f) * (cb8[row] * cscale) + f * (cb8[row + 1] * cscale)
                gc = gcodes[e]
                gain = 0.0 if gc == _LOG_ZERO_CODE else np.exp2(lmin + gc * lstep)
                dst[b * n_out + j] += gain * v + bcodes[e] * bscale


@numba.njit(cache=True)
def _forward(meta_addr, fp_addr, n_layers, x_addr, batch, scratch_addr, stride, out_addr, counter_addr):
    meta = numba.carray(_as_pointer(meta_addr), (n_layers * _META,), np.int64)
    fp = numba.carray(_as_pointer(fp_addr), (n_layers * _FPAR,), np.float64)
    counters = numba.carray(_as_pointer(counter_addr), (3,), np.int64)
    n_in0 = meta[1]
    x = numba.carray(_as_pointer(x_addr), (batch * n_in0,), np.float64)
    for p in range(batch * n_in0):
        if not np.isfinite(x[p]):
            counters[2] = p + 1
            return
    ping = numba.carray(_as_pointer(scratch_addr), (stride,), np.float64)
    pong = numba.carray(_as_pointer(scratch_addr + 8 * stride), (stride,), np.float64)
    n_out_last = meta[(n_layers - 1) * _META + 2]
    out = numba.carray(_as_pointer(out_addr), (batch * n_out_last,), np.float64)
    ops = 0
    for l in range(n_layers):
        if l == 0:
            src = x
        elif l % 2 == 1:
            src = ping
        else:
            src = pong
        if l == n_layers - 1:
            dst = out
        elif l % 2 == 0:
            dst = ping
        else:
            dst = pong
        _run_layer(meta, fp, l, src, dst, batch)
        ops += batch * meta[l * _META + 1] * meta[l * _META + 2]
    counters[0] += ops
    counters[1] += 1


def _runtime_tables(layer):
    """Contiguous arrays in the dtypes the kernel reads; no copy when already compatible."""
    if isinstance(layer, KanLayer):
        return [np.ascontiguousarray(layer.coefficients, dtype=np.float32)]
    width = np.uint16 if layer.K <= 1 << 16 else np.uint32
    idx = np.ascontiguousarray(layer.indices, dtype=width)
    if layer.is_int8:
        return [
            np.ascontiguousarray(layer.codebook.entries, dtype=np.int8),
            idx,
            np.ascontiguousarray(layer.gains, dtype=np.int8),
            np.ascontiguousarray(layer.biases, dtype=np.int8),
        ]
    return [
        np.ascontiguousarray(layer.codebook.entries, dtype=np.float32),
        idx,
        np.ascontiguousarray(layer.gains, dtype=np.float32),
        np.ascontiguousarray(layer.biases, dtype=np.float32),
    ]


class Workspace:
    """Private per-stream buffers for running one model on batches up to ``max_batch``."""

    def __init__(self, model, max_batch: int = 1):
        if not isinstance(model, (KanNetwork, CompressedNetwork)):
            raise TypeError(f"cannot run a {type(model).__name__}")
        if max_batch < 1:
            raise WorkspaceError("max_batch must be >= 1")
        self.model = model
        self.max_batch = int(max_batch)
        self.header = header_of(model)
        self.plan: MemoryPlan = plan_memory(self.header, self.max_batch)
        n = len(model.layers)
        self.meta = np.zeros(n * _META, dtype=np.int64)
        self.fparams = np.zeros(n * _FPAR, dtype=np.float64)
        self._tables = []
        for l, (layer, h) in enumerate(zip(model.layers, self.header.layers)):
            tabs = _runtime_tables(layer)
            self._tables.append(tabs)
            addrs = [t.ctypes.data for t in tabs] + [0] * (4 - len(tabs))
            self.meta[l * _META : (l + 1) * _META] = [
                h.kind, h.in_dim, h.out_dim, h.grid_size, h.K, h.index_width, *addrs,
            ]
            self.fparams[l * _FPAR : (l + 1) * _FPAR] = [
                h.domain_lo, h.domain_hi, h.codebook_scale, h.bias_scale,
                h.gain_log_min, h.gain_log_step,
            ]
        self.stride = self.plan.scratch_bytes // 16
        self.scratch = np.zeros(max(2 * self.stride, 1), dtype=np.float64)
        self.output = np.zeros((self.max_batch, model.out_dim), dtype=np.float64)
        self.counters = np.zeros(3, dtype=np.int64)
        self._args = (
            self.meta.ctypes.data, self.fparams.ctypes.data, n,
            self.scratch.ctypes.data, self.stride, self.output.ctypes.data,
            self.counters.ctypes.data,
        )

    @property
    def interpolations(self) -> int:
        """Edge interpolations performed since creation (or the last reset)."""
        return int(self.counters[0])

    @property
    def calls(self) -> int:
        return int(self.counters[1])

    def reset_counters(self):
        self.counters[:2] = 0


def compressed_forward(model, inputs, workspace: Workspace) -> np.ndarray:
    """Run ``inputs`` (batch x N_in) through ``model`` using ``workspace``.

    Returns a view of the workspace output buffer; it is overwritten by the
    next call on the same workspace.  float64 C-contiguous inputs are read in
    place; anything else is converted first, which allocates.
    """
    if workspace.model is not model:
        raise WorkspaceError("workspace was created for a different model")
    if inputs.ndim != 2 or inputs.shape[1] != model.in_dim:
        raise ShapeError(f"expected inputs of shape (batch, {model.in_dim}), got {inputs.shape}")
    batch = inputs.shape[0]
    if batch > workspace.max_batch:
        raise WorkspaceError(f"batch {batch} exceeds workspace capacity {workspace.max_batch}")
    if batch == 0:
        return workspace.output[:0]
    if inputs.dtype != np.float64 or not inputs.flags.c_contiguous:
        inputs = np.ascontiguousarray(inputs, dtype=np.float64)
    meta, fp, n, scratch, stride, out, counters = workspace._args
    _forward(meta, fp, n, inputs.ctypes.data, batch, scratch, stride, out, counters)
    if workspace.counters[2]:
        p = int(workspace.counters[2]) - 1
        workspace.counters[2] = 0
        raise NonFiniteInputError(f"non-finite input at row {p // model.in_dim}, column {p % model.in_dim}")
    return workspace.output[:batch]


def pli_lookup(codebook: Codebook, k: int, g: float, b: float, x: float, domain=(-1.0, 1.0)) -> float:
    """``g * LinearInterp(C[k], x) + b`` for one edge; int8 rows are scaled inline."""
    if not 0 <= k < codebook.K:
        raise IndexError(f"codebook index {k} outside [0, {codebook.K})")
    if not np.isfinite(x):
        raise ValueError("x must be finite")
    idx, f = locate(x, domain[0], domain[1], codebook.grid_size)
    i, f = int(idx), float(f)
    c0 = float(codebook.entries[k, i])
    c1 = float(codebook.entries[k, i + 1])
    if codebook.scale is not None:
        c0 *= codebook.scale
        c1 *= codebook.scale
    return g * ((1.0 - f) * c0 + f * c1) + b


class AllocationCounter:
    """Counts allocations made while the ``with`` block runs.

    ``kernel_allocations`` is the exact number of allocations made by
    compiled code.  ``peak_bytes`` is the growth of the traced heap peak,
    which catches any transient Python-side buffer (e.g. a stray temporary
    array) even when it is freed before the block exits.
    """

    def __init__(self):
        self.kernel_allocations = 0
        self.peak_bytes = 0

    def __enter__(self):
        self._started = not tracemalloc.is_tracing()
        if self._started:
            tracemalloc.start()
        self._base, _ = tracemalloc.get_traced_memory()
        tracemalloc.reset_peak()
        self._stats = rtsys.get_allocation_stats()
        return self

    def __exit__(self, *exc):
        stats = rtsys.get_allocation_stats()
        _, peak = tracemalloc.get_traced_memory()
        self.kernel_allocations = (stats.alloc - self._stats.alloc) + (stats.mi_alloc - self._stats.mi_alloc)
        self.peak_bytes = peak - self._base
        if self._started:
            tracemalloc.stop()
        return False
