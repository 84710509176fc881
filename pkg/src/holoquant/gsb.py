"""Gain-shape-bias vector quantization of spline grids.

Each edge grid ``c`` is split into a bias (its mean), a gain (its population
standard deviation) and a unit shape.  Shapes of one layer are clustered
with k-means into a shared codebook; an edge then stores only a codebook
index plus its gain and bias, and is rebuilt as ``gain * C[index] + bias``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .kan import KanLayer, KanNetwork, ShapeError, SplineGrid

__all__ = [
    "ShapeRecord",
    "CodebookMeta",
    "Codebook",
    "CompressedLayer",
    "CompressedNetwork",
    "VQConfig",
    "normalize_grid",
    "normalize_grids",
    "kmeans_codebook",
    "assign_indices",
    "compress_layer",
    "compress_network",
    "reconstruct_grid",
    "reconstruct_layer",
    "reconstruct_network",
    "r_squared",
    "network_r_squared",
]

# gains below this are treated as constant grids
DEGENERATE_GAIN = 1e-8

# bounds the (rows, K, G) difference tensor built per assignment chunk
_ASSIGN_CHUNK_ELEMENTS = 1 << 22


@dataclass(frozen=True, eq=False)
class ShapeRecord:
    shape: np.ndarray
    gain: float
    bias: float
    edge_id: tuple[int, int, int] = (0, 0, 0)


def normalize_grids(coefficients) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized normalization of an ``(E, G)`` matrix -> (shapes, gains, biases)."""
    c = np.asarray(coefficients, dtype=np.float64)
    biases = c.mean(axis=1)
    centered = c - biases[:, None]
    gains = np.sqrt((centered * centered).mean(axis=1))
    degenerate = gains < DEGENERATE_GAIN
    gains = np.where(degenerate, 0.0, gains)
    safe = np.where(degenerate, 1.0, gains)
    shapes = np.where(degenerate[:, None], 0.0, centered / safe[:, None])
    return shapes, gains, biases


def normalize_grid(grid: SplineGrid, edge_id=(0, 0, 0)) -> ShapeRecord:
    s, g, b = normalize_grids(grid.coefficients[None, :])
    return ShapeRecord(s[0], float(g[0]), float(b[0]), tuple(edge_id))


@dataclass(frozen=True)
class CodebookMeta:
    iterations: int = 0
    inertia: float = 0.0
    seed: int = 0
    padded: bool = False
    inertia_history: tuple[float, ...] = ()


@dataclass(frozen=True, eq=False)
class Codebook:
    """``K x G`` shape matrix; int8 codebooks keep codes plus a linear scale."""

    entries: np.ndarray
    meta: CodebookMeta = field(default_factory=CodebookMeta)
    scale: float | None = None

    def __post_init__(self):
        e = np.asarray(self.entries)
        if e.ndim != 2 or e.shape[0] < 1:
            raise ShapeError(f"codebook must be a non-empty K x G matrix, got {e.shape}")
        if self.scale is None and not np.all(np.isfinite(e)):
            raise ValueError("codebook rows must be finite")
        object.__setattr__(self, "entries", e)

    @property
    def K(self) -> int:
        return self.entries.shape[0]

    @property
    def grid_size(self) -> int:
        return self.entries.shape[1]

    @property
    def is_int8(self) -> bool:
        return self.scale is not None

    def values(self) -> np.ndarray:
        """Float64 view of the entries (dequantized for int8 codebooks)."""
        if self.scale is None:
            return self.entries.astype(np.float64)
        return self.entries.astype(np.float64) * self.scale


@dataclass(frozen=True, eq=False)
class CompressedLayer:
    """Per-edge ``(index, gain, bias)`` tables referencing a layer codebook.

    Float layers store float32 codebook, gains and biases.  Int8 layers store
    codes; ``gain_params`` and ``bias_params`` carry the decoding parameters
    (see :mod:`holoquant.quant`).
    """

    codebook: Codebook
    indices: np.ndarray
    gains: np.ndarray
    biases: np.ndarray
    in_dim: int
    out_dim: int
    domain: tuple[float, float] = (-1.0, 1.0)
    gain_params: object = None
    bias_params: object = None

    def __post_init__(self):
        e = self.in_dim * self.out_dim
        for name in ("indices", "gains", "biases"):
            arr = getattr(self, name)
            if np.ndim(arr) != 1 or len(arr) != e:
                raise ShapeError(f"{name} must have length E={e}, got shape {np.shape(arr)}")
        if e and int(np.max(self.indices)) >= self.codebook.K:
            raise IndexError("codebook index out of range")
        object.__setattr__(self, "domain", (float(self.domain[0]), float(self.domain[1])))

    @property
    def num_edges(self) -> int:
        return self.in_dim * self.out_dim

    @property
    def grid_size(self) -> int:
        return self.codebook.grid_size

    @property
    def K(self) -> int:
        return self.codebook.K

    @property
    def is_int8(self) -> bool:
        return self.codebook.is_int8

    def gain_values(self) -> np.ndarray:
        if self.gain_params is None:
            return self.gains.astype(np.float64)
        from .quant import dequantize_gains_log_i8

        return dequantize_gains_log_i8(self.gains, self.gain_params)

    def bias_values(self) -> np.ndarray:
        if self.bias_params is None:
            return self.biases.astype(np.float64)
        return self.biases.astype(np.float64) * self.bias_params.scale

    def __repr__(self):
        prec = "int8" if self.is_int8 else "float32"
        return (
            f"CompressedLayer({self.in_dim}->{self.out_dim}, G={self.grid_size}, "
            f"K={self.K}, {prec})"
        )


class CompressedNetwork:
    def __init__(self, layers: Sequence[CompressedLayer]):
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
        return [self.layers[0].in_dim] + [l.out_dim for l in self.layers]

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def num_edges(self) -> int:
        return sum(l.num_edges for l in self.layers)

    def __len__(self):
        return len(self.layers)

    def __repr__(self):
        return f"CompressedNetwork({self.layers!r})"


@dataclass(frozen=True)
class VQConfig:
    iters: int = 100
    batch: int = 4096
    restarts: int = 1
    seed: int = 0


def _as_shape_matrix(shapes) -> np.ndarray:
    if isinstance(shapes, np.ndarray):
        x = shapes
    else:
        shapes = list(shapes)
        if shapes and isinstance(shapes[0], ShapeRecord):
            x = np.stack([s.shape for s in shapes])
        else:
            x = np.asarray(shapes)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ShapeError("need a non-empty (n, G) collection of shapes")
    return x


def _sq_distances(x: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    diff = x[:, None, :] - centroids[None, :, :]
    return (diff * diff).sum(axis=2)


def _nearest(x: np.ndarray, centroids: np.ndarray):
    """Index of the nearest centroid (lowest index on ties) and its squared distance."""
    n = x.shape[0]
    per_row = max(1, centroids.shape[0] * centroids.shape[1])
    chunk = max(1, _ASSIGN_CHUNK_ELEMENTS // per_row)
    labels = np.empty(n, dtype=np.int64)
    dist = np.empty(n)
    for s in range(0, n, chunk):
        d = _sq_distances(x[s : s + chunk], centroids)
        lab = np.argmin(d, axis=1)
        labels[s : s + chunk] = lab
        dist[s : s + chunk] = d[np.arange(lab.size), lab]
    return labels, dist


def _seed_centroids(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Distance-weighted (k-means++) seeding."""
    n = x.shape[0]
    chosen = [int(rng.integers(n))]
    closest = _sq_distances(x, x[chosen[0]][None, :])[:, 0]
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0:
            break
        cdf = np.cumsum(closest)
        pick = int(np.searchsorted(cdf, rng.uniform(0.0, total), side="right"))
        pick = min(pick, n - 1)
        while closest[pick] <= 0:
            # a zero-weight point can only be hit through rounding at the cdf edge
            pick = int(np.flatnonzero(closest > 0)[0])
        chosen.append(pick)
        closest = np.minimum(closest, _sq_distances(x, x[pick][None, :])[:, 0])
    return x[chosen].copy()


def _lloyd(x, centroids, iters):
    history = []
    labels, dist = _nearest(x, centroids)
    it = 0
    for it in range(1, iters + 1):
        history.append(float(dist.sum()))
        k = centroids.shape[0]
        counts = np.bincount(labels, minlength=k)
        sums = np.zeros_like(centroids)
        np.add.at(sums, labels, x)
        nonempty = counts > 0
        centroids = centroids.copy()
        centroids[nonempty] = sums[nonempty] / counts[nonempty, None]
        if not np.all(nonempty):
            # re-seed each empty cluster with the point currently farthest from its centroid
            d = dist.copy()
            for c in np.flatnonzero(~nonempty):
                far = int(np.argmax(d))
                centroids[c] = x[far]
                d[far] = -1.0
        new_labels, dist = _nearest(x, centroids)
        if np.array_equal(new_labels, labels) and np.all(nonempty):
            labels = new_labels
            break
        labels = new_labels
    history.append(float(dist.sum()))
    return centroids, it, history


def _minibatch(x, centroids, iters, batch, rng):
    counts = np.zeros(centroids.shape[0])
    centroids = centroids.copy()
    history = []
    for _ in range(iters):
        sample = x[rng.integers(0, x.shape[0], size=batch)]
        labels, dist = _nearest(sample, centroids)
        history.append(float(dist.sum()) * x.shape[0] / batch)
        # per-point running-mean updates collapse to one weighted mean per centroid
        m = np.bincount(labels, minlength=centroids.shape[0]).astype(np.float64)
        sums = np.zeros_like(centroids)
        np.add.at(sums, labels, sample)
        hit = m > 0
        total = counts + m
        centroids[hit] = (counts[hit, None] * centroids[hit] + sums[hit]) / total[hit, None]
        counts = total
    _, dist = _nearest(x, centroids)
    history.append(float(dist.sum()))
    return centroids, iters, history


def kmeans_codebook(shapes, K: int, iters: int = 100, batch: int = 4096, seed: int = 0) -> Codebook:
    """Learn a ``K``-entry shape codebook.

    Full-batch Lloyd iterations run when all shapes fit in ``batch``;
    otherwise mini-batch updates with per-centroid learning rates.  If fewer
    than ``K`` distinct shapes exist, the learned centroids are padded by
    repeating the last one and ``meta.padded`` is set.
    """
    x = _as_shape_matrix(shapes)
    if K < 1:
        raise ValueError("K must be >= 1")
    rng = np.random.default_rng(seed)
    n_distinct = np.unique(x, axis=0).shape[0]
    k_eff = min(K, n_distinct)
    centroids = _seed_centroids(x, k_eff, rng)
    if x.shape[0] <= batch:
        centroids, iterations, history = _lloyd(x, centroids, max(iters, 1))
    else:
        centroids, iterations, history = _minibatch(x, centroids, max(iters, 1), batch, rng)
    padded = centroids.shape[0] < K
    if padded:
        pad = np.repeat(centroids[-1:], K - centroids.shape[0], axis=0)
        centroids = np.concatenate([centroids, pad])
    meta = CodebookMeta(iterations, history[-1], seed, padded, tuple(history))
    return Codebook(centroids, meta)


def assign_indices(shapes, codebook: Codebook) -> np.ndarray:
    x = _as_shape_matrix(shapes)
    if x.shape[1] != codebook.grid_size:
        raise ShapeError(f"shape length {x.shape[1]} != codebook G {codebook.grid_size}")
    labels, _ = _nearest(x, codebook.values())
    return labels


def _index_dtype(K: int):
    return np.uint16 if K <= 1 << 16 else np.uint32


def compress_layer(layer: KanLayer, K: int, vq_config: VQConfig | None = None) -> CompressedLayer:
    """Normalize, cluster, assign.  Keeps the best of ``vq_config.restarts`` runs."""
    cfg = vq_config or VQConfig()
    shapes, gains, biases = normalize_grids(layer.edge_matrix())
    seeds = np.random.SeedSequence(cfg.seed).generate_state(max(cfg.restarts, 1))
    best = None
    for r in range(max(cfg.restarts, 1)):
        run_seed = cfg.seed if r == 0 else int(seeds[r])
        cb = kmeans_codebook(shapes, K, cfg.iters, cfg.batch, run_seed)
        stored = Codebook(cb.entries.astype(np.float32), cb.meta)
        idx = assign_indices(shapes, stored)
        err = float(((shapes - stored.values()[idx]) ** 2).sum())
        if best is None or err < best[0]:
            best = (err, stored, idx)
    _, codebook, idx = best
    return CompressedLayer(
        codebook=codebook,
        indices=idx.astype(_index_dtype(K)),
        gains=gains.astype(np.float32),
        biases=biases.astype(np.float32),
        in_dim=layer.in_dim,
        out_dim=layer.out_dim,
        domain=layer.domain,
    )


def compress_network(net: KanNetwork, K: int, vq_config: VQConfig | None = None) -> CompressedNetwork:
    cfg = vq_config or VQConfig()
    layers = []
    for li, layer in enumerate(net.layers):
        layer_cfg = replace(cfg, seed=int(np.random.SeedSequence([cfg.seed, li]).generate_state(1)[0]))
        layers.append(compress_layer(layer, K, layer_cfg))
    return CompressedNetwork(layers)


def reconstruct_layer(cl: CompressedLayer) -> KanLayer:
    rows = cl.codebook.values()[cl.indices.astype(np.int64)]
    c = cl.gain_values()[:, None] * rows + cl.bias_values()[:, None]
    return KanLayer(c.reshape(cl.in_dim, cl.out_dim, cl.grid_size), cl.domain)


def reconstruct_grid(cl: CompressedLayer, i: int, j: int) -> SplineGrid:
    if not (0 <= i < cl.in_dim and 0 <= j < cl.out_dim):
        raise IndexError(f"edge ({i}, {j}) outside a {cl.in_dim}x{cl.out_dim} layer")
    e = i * cl.out_dim + j
    k = int(cl.indices[e])
    g = float(cl.gain_values()[e])
    b = float(cl.bias_values()[e])
    return SplineGrid(g * cl.codebook.values()[k] + b, *cl.domain)


def reconstruct_network(cn: CompressedNetwork) -> KanNetwork:
    return KanNetwork([reconstruct_layer(l) for l in cn.layers])


def _grid_matrix(grids) -> np.ndarray:
    if isinstance(grids, np.ndarray):
        return np.asarray(grids, dtype=np.float64)
    if isinstance(grids, KanLayer):
        return grids.edge_matrix().astype(np.float64)
    return np.stack([np.asarray(g.coefficients, dtype=np.float64) for g in grids])


def r_squared(originals, reconstructions) -> float:
    """``1 - sum ||c - c_hat||^2 / sum ||c - c_bar||^2`` with ``c_bar`` the mean grid.

    Accepts lists of :class:`SplineGrid`, ``(E, G)`` matrices or layers.  A
    zero denominator yields 1.0 for a perfect reconstruction and ``-inf``
    otherwise.
    """
    a = _grid_matrix(originals)
    b = _grid_matrix(reconstructions)
    if a.shape != b.shape:
        raise ShapeError(f"scope mismatch: {a.shape} vs {b.shape}")
    num = float(((a - b) ** 2).sum())
    den = float(((a - a.mean(axis=0)) ** 2).sum())
    if den == 0.0:
        return 1.0 if num == 0.0 else -math.inf
    return 1.0 - num / den


def network_r_squared(net: KanNetwork, cn: CompressedNetwork) -> tuple[list[float], float]:
    """Per-layer R^2 and the aggregate over every edge of the network."""
    if net.dims != cn.dims:
        raise ShapeError(f"topology mismatch: {net.dims} vs {cn.dims}")
    per_layer, orig, rec = [], [], []
    for layer, cl in zip(net.layers, cn.layers):
        a = layer.edge_matrix().astype(np.float64)
        b = reconstruct_layer(cl).edge_matrix()
        per_layer.append(r_squared(a, b))
        orig.append(a)
        rec.append(b)
    if len({m.shape[1] for m in orig}) > 1:
        return per_layer, math.nan
    return per_layer, r_squared(np.concatenate(orig), np.concatenate(rec))
