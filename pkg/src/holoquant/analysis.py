"""Diagnostic studies on trained toy networks.

Spectra of the stacked coefficient matrix, norm-pruning sweeps, codebook
size ablations and pruning-vs-VQ comparisons at matched bit budgets.
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .gsb import VQConfig, compress_network, network_r_squared, reconstruct_network
from .kan import KanLayer, KanNetwork, ShapeError, network_forward
from .lutham.plan import index_bits
from .quant import quantize_network
from .tasks import SyntheticTask
from .trainer import prune_by_norm

__all__ = [
    "SpectrumReport",
    "SweepCurve",
    "AblationResult",
    "ComparisonRow",
    "BudgetError",
    "stack_coefficients",
    "unstack_coefficients",
    "svd_spectrum",
    "holdout_mse",
    "pruning_sweep",
    "codebook_ablation",
    "prune_budget_bits",
    "vq_budget_bits",
    "sparsity_for_budget",
    "codebook_size_for_budget",
    "pruning_vs_vq",
    "write_spectrum_csv",
    "write_comparison_csv",
    "SPECTRUM_THRESHOLDS",
]

SPECTRUM_THRESHOLDS = (0.90, 0.94, 0.99)


class BudgetError(ValueError):
    pass


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("HOLOQUANT_THREADS", "1")))
    except ValueError:
        return 1


def stack_coefficients(net: KanNetwork) -> np.ndarray:
    """All edge grids as rows of one ``(E_total, G)`` matrix, ordered by (layer, i, j)."""
    sizes = {layer.grid_size for layer in net.layers}
    if len(sizes) != 1:
        raise ShapeError(f"layers use different grid sizes {sorted(sizes)}")
    return np.concatenate([np.array(l.edge_matrix(), dtype=np.float64) for l in net.layers])


def unstack_coefficients(matrix, like: KanNetwork) -> KanNetwork:
    m = np.asarray(matrix)
    if m.shape != (like.num_edges, like.layers[0].grid_size):
        raise ShapeError(f"matrix {m.shape} does not fit {like!r}")
    layers, pos = [], 0
    for l in like.layers:
        block = m[pos : pos + l.num_edges].reshape(l.coefficients.shape)
        layers.append(KanLayer(block.copy(), l.domain))
        pos += l.num_edges
    return KanNetwork(layers)


@dataclass(frozen=True, eq=False)
class SpectrumReport:
    singular_values: np.ndarray
    cumulative: np.ndarray
    thresholds: dict
    centered: bool = False

    def rank_for(self, fraction: float) -> int:
        if self.cumulative.size == 0 or self.cumulative[-1] == 0:
            return 0
        return int(np.searchsorted(self.cumulative, fraction - 1e-12) + 1)


def svd_spectrum(matrix, center: bool = False) -> SpectrumReport:
    """Singular values and cumulative variance fractions ``sum_{i<=r} s_i^2 / sum s_i^2``."""
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2 or m.size == 0:
        raise ShapeError("need a non-empty 2-D matrix")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix must be finite")
    if center:
        m = m - m.mean(axis=0)
    s = np.linalg.svd(m, compute_uv=False)
    energy = s**2
    total = energy.sum()
    cum = np.cumsum(energy) / total if total > 0 else np.ones_like(s)
    if total > 0:
        cum[-1] = 1.0
    rep = SpectrumReport(s, cum, {}, center)
    thresholds = {p: (rep.rank_for(p) if total > 0 else 0) for p in SPECTRUM_THRESHOLDS}
    return SpectrumReport(s, cum, thresholds, center)


@dataclass(frozen=True)
class SweepCurve:
    x: tuple
    y: tuple
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.x) != len(self.y):
            raise ValueError("x and y lengths differ")
        if any(b <= a for a, b in zip(self.x, self.x[1:])):
            raise ValueError("sweep x values must be strictly increasing")

    def to_csv(self, path, seed: int | None = None) -> None:
        s = self.meta.get("seed", "") if seed is None else seed
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("x", "y", "seed"))
            for x, y in zip(self.x, self.y):
                w.writerow([repr(x), repr(y), s])


def holdout_mse(net, task: SyntheticTask, count: int | None = None) -> float:
    x, y = task.test_set(count)
    return float(np.mean((network_forward(net, x) - y) ** 2))


def pruning_sweep(net: KanNetwork, task: SyntheticTask, sparsities: Sequence[float], count=None) -> SweepCurve:
    xs = tuple(float(s) for s in sparsities)
    ys = tuple(holdout_mse(prune_by_norm(net, s)[0], task, count) for s in xs)
    return SweepCurve(xs, ys, {"task": task.target_function, "seed": task.seed, "metric": "test_mse"})


@dataclass(frozen=True)
class AblationResult:
    r2: SweepCurve
    mse_delta: SweepCurve | None
    per_seed: dict


def _ablation_cell(net, K, seed, iters, task, count):
    cn = compress_network(net, K, VQConfig(iters=iters, seed=seed))
    _, agg = network_r_squared(net, cn)
    mse = holdout_mse(reconstruct_network(cn), task, count) if task is not None else math.nan
    return agg, mse


def codebook_ablation(
    net: KanNetwork,
    K_list: Sequence[int],
    seeds: Sequence[int] = (0, 1, 2),
    task: SyntheticTask | None = None,
    iters: int = 100,
    count: int | None = None,
) -> AblationResult:
    """Best-of-``len(seeds)`` aggregate R^2 for each K, plus test-MSE delta vs dense."""
    K_list = [int(k) for k in K_list]
    cells = [(k, s) for k in K_list for s in seeds]
    with ThreadPoolExecutor(max_workers=_workers()) as pool:
        results = list(pool.map(lambda c: _ablation_cell(net, c[0], c[1], iters, task, count), cells))
    by_cell = dict(zip(cells, results))
    best_r2, best_mse = [], []
    for k in K_list:
        runs = [by_cell[(k, s)] for s in seeds]
        r2, mse = max(runs, key=lambda r: r[0])
        best_r2.append(r2)
        best_mse.append(mse)
    meta = {"seeds": tuple(seeds), "metric": "r2"}
    r2_curve = SweepCurve(tuple(K_list), tuple(best_r2), meta)
    delta = None
    if task is not None:
        base = holdout_mse(net, task, count)
        delta = SweepCurve(
            tuple(K_list), tuple(m - base for m in best_mse), {**meta, "metric": "test_mse_delta"}
        )
    per_seed = {f"{k}:{s}": by_cell[(k, s)][0] for k, s in cells}
    return AblationResult(r2_curve, delta, per_seed)


def prune_budget_bits(kept_edges: int, grid_size: int) -> int:
    return kept_edges * grid_size * 32


def vq_budget_bits(net: KanNetwork, K: int) -> int:
    """Int8 VQ storage: per-edge index + 16 bits, plus an int8 codebook per layer."""
    total = 0
    for l in net.layers:
        k = min(K, l.num_edges)
        total += l.num_edges * (index_bits(k) + 16) + k * l.grid_size * 8
    return total


def sparsity_for_budget(net: KanNetwork, budget_bits: float) -> float:
    g = net.layers[0].grid_size
    kept = min(net.num_edges, int(budget_bits // (g * 32))) if math.isfinite(budget_bits) else net.num_edges
    return 1.0 - kept / net.num_edges


def codebook_size_for_budget(net: KanNetwork, budget_bits: float) -> int:
    """Largest K whose int8 VQ storage fits ``budget_bits``."""
    k_max = max(l.num_edges for l in net.layers)
    if vq_budget_bits(net, 1) > budget_bits:
        raise BudgetError(
            f"budget of {budget_bits} bits is below the smallest VQ model ({vq_budget_bits(net, 1)} bits)"
        )
    lo, hi = 1, k_max
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if vq_budget_bits(net, mid) <= budget_bits:
            lo = mid
        else:
            hi = mid - 1
    return lo


@dataclass(frozen=True)
class ComparisonRow:
    budget_bits: float
    sparsity: float
    prune_mse: float
    K: int
    vq_mse: float
    baseline_mse: float

    @property
    def prune_inflation(self) -> float:
        return self.prune_mse / self.baseline_mse - 1.0

    @property
    def vq_inflation(self) -> float:
        return self.vq_mse / self.baseline_mse - 1.0


def pruning_vs_vq(
    net: KanNetwork,
    task: SyntheticTask,
    budgets: Sequence[float],
    restarts: int = 3,
    iters: int = 100,
    seed: int = 0,
    int8: bool = True,
    count: int | None = None,
) -> list[ComparisonRow]:
    """Test MSE of norm pruning vs GSB-VQ, each at the largest size fitting each budget."""
    base = holdout_mse(net, task, count)
    rows = []
    for budget in budgets:
        k = codebook_size_for_budget(net, budget)
        s = sparsity_for_budget(net, budget)
        pruned, _ = prune_by_norm(net, s)
        cn = compress_network(net, k, VQConfig(iters=iters, restarts=restarts, seed=seed))
        if int8:
            cn = quantize_network(cn)
        rows.append(
            ComparisonRow(
                float(budget), s, holdout_mse(pruned, task, count), k,
                holdout_mse(reconstruct_network(cn), task, count), base,
            )
        )
    return rows


def write_spectrum_csv(rep: SpectrumReport, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("rank", "sigma", "cumfrac"))
        for r, (s, c) in enumerate(zip(rep.singular_values, rep.cumulative), start=1):
            w.writerow([r, repr(float(s)), repr(float(c))])


def write_comparison_csv(rows: Sequence[ComparisonRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("budget_bits", "prune_mse", "vq_mse"))
        for r in rows:
            w.writerow([repr(r.budget_bits), repr(r.prune_mse), repr(r.vq_mse)])
