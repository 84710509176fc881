"""Latency of compressed_forward across models that differ only in grid size."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..gsb import Codebook, CompressedLayer, CompressedNetwork
from ..kan import KanNetwork
from ..quant import quantize_network
from .plan import header_of
from .runtime import Workspace, compressed_forward

__all__ = ["LatencyStats", "bench_iso_latency", "make_iso_family", "write_bench_csv", "BENCH_FIELDS"]

BENCH_FIELDS = ("G", "median_us", "p25_us", "p75_us")


@dataclass(frozen=True)
class LatencyStats:
    G: int
    median_us: float
    p25_us: float
    p75_us: float
    samples: int
    interpolations_per_edge: float


def _topology(model):
    return [
        (h.in_dim, h.out_dim, h.K, h.kind, h.domain_lo, h.domain_hi)
        for h in header_of(model).layers
    ]


def _grid_size(model) -> int:
    sizes = {h.grid_size for h in header_of(model).layers}
    if len(sizes) != 1:
        raise ValueError(f"model mixes grid sizes {sorted(sizes)}")
    return sizes.pop()


def bench_iso_latency(
    models: Sequence,
    batch: int = 32,
    repeats: int = 200,
    warmup: int = 20,
    inner: int = 1,
    seed: int = 0,
) -> list[LatencyStats]:
    """Median and interquartile latency per model (microseconds per call).

    Models must be identical except for G.  Samples are taken round-robin
    over the models so that machine noise hits every G alike; each sample
    times ``inner`` back-to-back calls.
    """
    models = list(models)
    if not models:
        return []
    topo = _topology(models[0])
    for m in models[1:]:
        if _topology(m) != topo:
            raise ValueError("models differ in more than grid size")
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1.0, 1.0, size=(batch, models[0].in_dim))
    spaces = [Workspace(m, max(batch, 1)) for m in models]
    for m, ws in zip(models, spaces):
        for _ in range(warmup):
            compressed_forward(m, x, ws)
        ws.reset_counters()
    timings = [[] for _ in models]
    for _ in range(max(repeats, 1)):
        for k, (m, ws) in enumerate(zip(models, spaces)):
            t0 = time.perf_counter_ns()
            for _ in range(inner):
                compressed_forward(m, x, ws)
            timings[k].append((time.perf_counter_ns() - t0) / inner / 1e3)
    out = []
    for m, ws, t in zip(models, spaces, timings):
        p25, med, p75 = np.percentile(t, [25, 50, 75])
        per_edge = ws.interpolations / max(ws.calls * batch * m.num_edges, 1)
        out.append(LatencyStats(_grid_size(m), float(med), float(p25), float(p75), len(t), per_edge))
    return out


def make_iso_family(
    dims: Sequence[int],
    grid_sizes: Sequence[int],
    K: int = 256,
    seed: int = 0,
    int8: bool = False,
) -> list[CompressedNetwork]:
    """Random compressed models sharing dims, K, indices, gains and biases."""
    rng = np.random.default_rng(seed)
    skeleton = []
    for n_in, n_out in zip(dims, dims[1:]):
        e = n_in * n_out
        skeleton.append(
            (
                n_in, n_out,
                rng.integers(0, K, size=e).astype(np.uint16 if K <= 1 << 16 else np.uint32),
                rng.uniform(0.05, 0.5, size=e).astype(np.float32),
                rng.normal(0.0, 0.05, size=e).astype(np.float32),
            )
        )
    family = []
    for g in grid_sizes:
        layers = []
        for n_in, n_out, idx, gains, biases in skeleton:
            shapes = np.random.default_rng([seed, g, n_in, n_out]).normal(size=(K, g))
            layers.append(
                CompressedLayer(Codebook(shapes.astype(np.float32)), idx, gains, biases, n_in, n_out)
            )
        net = CompressedNetwork(layers)
        family.append(quantize_network(net) if int8 else net)
    return family


def write_bench_csv(stats: Sequence[LatencyStats], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(BENCH_FIELDS)
        for s in stats:
            w.writerow([s.G, repr(s.median_us), repr(s.p25_us), repr(s.p75_us)])


def max_min_ratio(stats: Sequence[LatencyStats]) -> float:
    med = [s.median_us for s in stats]
    return max(med) / min(med)
