"""Spline grids, dense KAN layers and exact piecewise-linear evaluation.

Every edge of a layer carries ``G`` coefficient values on a uniform grid over
a shared input domain.  Evaluation clamps the input to the domain, finds the
bracketing nodes with one index computation and interpolates linearly.  All
layer coefficients live in a single ``(N_in, N_out, G)`` array (row-major per
edge), which is the layout the compressor and the runtime consume.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "SplineGrid",
    "KanLayer",
    "KanNetwork",
    "ShapeError",
    "locate",
    "eval_spline",
    "layer_forward",
    "network_forward",
    "dense_runtime_bytes",
]

DEFAULT_DOMAIN = (-1.0, 1.0)

# positions this close to an integer snap onto the node, so that evaluating
# at a node reproduces its coefficient exactly
NODE_SNAP = 1e-9


class ShapeError(ValueError):
    """Input or parameter arrays have incompatible dimensions."""


def _check_domain(lo: float, hi: float) -> tuple[float, float]:
    lo, hi = float(lo), float(hi)
    if not (math.isfinite(lo) and math.isfinite(hi)) or not lo < hi:
        raise ValueError(f"invalid domain [{lo}, {hi}]")
    return lo, hi


@dataclass(frozen=True, eq=False)
class SplineGrid:
    """Coefficients of one edge function on a uniform grid."""

    coefficients: np.ndarray
    domain_lo: float = -1.0
    domain_hi: float = 1.0

    def __post_init__(self):
        c = np.asarray(self.coefficients, dtype=np.float64)
        if c.ndim != 1 or c.size < 2:
            raise ValueError("a spline grid needs at least 2 coefficients")
        if not np.all(np.isfinite(c)):
            raise ValueError("spline coefficients must be finite")
        _check_domain(self.domain_lo, self.domain_hi)
        object.__setattr__(self, "coefficients", c)

    @property
    def size(self) -> int:
        return self.coefficients.size

    @property
    def spacing(self) -> float:
        return (self.domain_hi - self.domain_lo) / (self.size - 1)

    def nodes(self) -> np.ndarray:
        i = np.arange(self.size)
        return self.domain_lo + i * self.spacing

    def __call__(self, x: float) -> float:
        return eval_spline(self, x)


def locate(x, lo: float, hi: float, grid_size: int):
    """Return ``(index, frac)`` for interpolating at ``x`` (array-valued).

    ``x`` is clamped to ``[lo, hi]``; ``index`` lies in ``[0, G-2]`` and the
    value is ``(1-frac)*c[index] + frac*c[index+1]``.
    """
    x = np.clip(np.asarray(x, dtype=np.float64), lo, hi)
    t = (x - lo) * ((grid_size - 1) / (hi - lo))
    r = np.rint(t)
    t = np.where(np.abs(t - r) <= NODE_SNAP, r, t)
    idx = np.minimum(np.floor(t).astype(np.int64), grid_size - 2)
    return idx, t - idx


def eval_spline(grid: SplineGrid, x: float) -> float:
    if not math.isfinite(x):
        raise ValueError(f"cannot evaluate a spline at non-finite x={x!r}")
    idx, f = locate(x, grid.domain_lo, grid.domain_hi, grid.size)
    c = grid.coefficients
    i = int(idx)
    f = float(f)
    return (1.0 - f) * c[i] + f * c[i + 1]


class KanLayer:
    """Dense layer of ``N_in * N_out`` spline edges sharing grid size and domain.

    ``coefficients[i, j]`` is the grid of the edge from input ``i`` to output
    ``j``.  Layers are treated as immutable; operations return new layers.
    """

    def __init__(self, coefficients, domain: Sequence[float] = DEFAULT_DOMAIN):
        c = np.asarray(coefficients)
        if c.dtype not in (np.float32, np.float64):
            c = c.astype(np.float64)
        if c.ndim != 3 or c.shape[0] < 1 or c.shape[1] < 1 or c.shape[2] < 2:
            raise ShapeError(
                f"layer coefficients must have shape (N_in, N_out, G>=2), got {c.shape}"
            )
        if not np.all(np.isfinite(c)):
            raise ValueError("layer coefficients must be finite")
        self.coefficients = c
        self.domain = _check_domain(*domain)

    @property
    def in_dim(self) -> int:
        return self.coefficients.shape[0]

    @property
    def out_dim(self) -> int:
        return self.coefficients.shape[1]

    @property
    def grid_size(self) -> int:
        return self.coefficients.shape[2]

    @property
    def num_edges(self) -> int:
        return self.in_dim * self.out_dim

    def grid(self, i: int, j: int) -> SplineGrid:
        return SplineGrid(self.coefficients[i, j], *self.domain)

    def edge_matrix(self) -> np.ndarray:
        """Coefficients as an ``(E, G)`` matrix, rows ordered by ``(i, j)``."""
        return self.coefficients.reshape(self.num_edges, self.grid_size)

    def with_coefficients(self, coefficients) -> "KanLayer":
        c = np.asarray(coefficients).reshape(self.coefficients.shape)
        return KanLayer(c, self.domain)

    def astype(self, dtype) -> "KanLayer":
        return KanLayer(self.coefficients.astype(dtype), self.domain)

    def __repr__(self):
        return f"KanLayer({self.in_dim}->{self.out_dim}, G={self.grid_size}, domain={self.domain})"


class KanNetwork:
    """Ordered stack of KAN layers with matching adjacent widths."""

    def __init__(self, layers: Sequence[KanLayer]):
        layers = list(layers)
        if not layers:
            raise ValueError("a network needs at least one layer")
        for a, b in zip(layers, layers[1:]):
            if a.out_dim != b.in_dim:
                raise ShapeError(
                    f"layer widths do not chain: {a.out_dim} outputs feed {b.in_dim} inputs"
                )
        self.layers = layers

    @property
    def dims(self) -> list[int]:
        return [self.layers[0].in_dim] + [layer.out_dim for layer in self.layers]

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def num_edges(self) -> int:
        return sum(layer.num_edges for layer in self.layers)

    def astype(self, dtype) -> "KanNetwork":
        return KanNetwork([layer.astype(dtype) for layer in self.layers])

    def copy(self) -> "KanNetwork":
        return KanNetwork([KanLayer(l.coefficients.copy(), l.domain) for l in self.layers])

    def __len__(self):
        return len(self.layers)

    def __repr__(self):
        g = sorted({layer.grid_size for layer in self.layers})
        return f"KanNetwork(dims={self.dims}, G={g})"


def _as_batch(x, width: int) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != width:
        raise ShapeError(f"expected input width {width}, got shape {np.shape(x)}")
    if not np.all(np.isfinite(x)):
        raise ValueError("inputs must be finite")
    return x, single


def _layer_batch(layer: KanLayer, x: np.ndarray) -> np.ndarray:
    lo, hi = layer.domain
    idx, f = locate(x, lo, hi, layer.grid_size)
    c = layer.coefficients
    rows = np.arange(layer.in_dim)[None, :, None]
    cols = np.arange(layer.out_dim)[None, None, :]
    c0 = c[rows, cols, idx[:, :, None]]
    c1 = c[rows, cols, idx[:, :, None] + 1]
    f = f[:, :, None]
    return ((1.0 - f) * c0 + f * c1).sum(axis=1)


def layer_forward(layer: KanLayer, x) -> np.ndarray:
    """``y_j = sum_i phi_ij(x_i)`` over every edge; accepts a vector or a batch."""
    xb, single = _as_batch(x, layer.in_dim)
    y = _layer_batch(layer, xb)
    return y[0] if single else y


def network_forward(net: KanNetwork, x) -> np.ndarray:
    xb, single = _as_batch(x, net.in_dim)
    for layer in net.layers:
        xb = _layer_batch(layer, xb)
    return xb[0] if single else xb


def dense_runtime_bytes(net: KanNetwork) -> int:
    """Bytes fetched per forward pass by an uncompressed float32 runtime."""
    return sum(layer.num_edges * layer.grid_size * 4 for layer in net.layers)
