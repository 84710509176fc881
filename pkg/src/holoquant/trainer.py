"""Gradient training of small KAN networks, group-l2,1 penalty and norm pruning."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .kan import KanLayer, KanNetwork, ShapeError, SplineGrid, locate
from .tasks import SyntheticTask

__all__ = [
    "TrainConfig",
    "TrainingError",
    "PruneMask",
    "init_network",
    "spline_gradient",
    "group_l21_penalty",
    "loss_and_grad",
    "mse",
    "train",
    "edge_norms",
    "prune_by_norm",
]

# norms below this get a zero l2,1 subgradient
NORM_FLOOR = 1e-12


class TrainingError(RuntimeError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"training diverged at epoch {epoch}: loss={loss}")
        self.epoch = epoch
        self.loss = loss


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-2
    epochs: int = 100
    batch_size: int = 32
    weight_decay: float = 1e-4
    l21_lambda: float = 0.0
    init_sigma: float = 0.1
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be >= 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.weight_decay < 0 or self.l21_lambda < 0:
            raise ValueError("weight_decay and l21_lambda must be >= 0")
        if not self.init_sigma >= 0:
            raise ValueError("init_sigma must be >= 0")


@dataclass(frozen=True, eq=False)
class PruneMask:
    """Per-edge keep flags for one layer, shape ``(N_in, N_out)``."""

    keep: np.ndarray
    threshold: float

    @property
    def num_pruned(self) -> int:
        return int(self.keep.size - np.count_nonzero(self.keep))


def init_network(
    dims: Sequence[int],
    grid_size: int,
    sigma: float = 0.1,
    seed: int = 0,
    domain=(-1.0, 1.0),
) -> KanNetwork:
    dims = [int(d) for d in dims]
    if len(dims) < 2 or min(dims) < 1:
        raise ValueError(f"invalid dims {dims}")
    if grid_size < 2:
        raise ValueError("grid_size must be >= 2")
    rng = np.random.default_rng(seed)
    layers = []
    for n_in, n_out in zip(dims, dims[1:]):
        c = rng.normal(0.0, 1.0, size=(n_in, n_out, grid_size)) * sigma
        layers.append(KanLayer(c, domain))
    return KanNetwork(layers)


def spline_gradient(grid: SplineGrid, x: float) -> np.ndarray:
    """Derivative of ``eval_spline(grid, x)`` with respect to the coefficients."""
    idx, f = locate(x, grid.domain_lo, grid.domain_hi, grid.size)
    w = np.zeros(grid.size)
    i, f = int(idx), float(f)
    w[i] += 1.0 - f
    w[i + 1] += f
    return w


def group_l21_penalty(layer: KanLayer, lam: float):
    """Return ``(lam * sum_ij ||c_ij||, gradient)`` for one layer."""
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    c = np.asarray(layer.coefficients, dtype=np.float64)
    norms = np.sqrt((c * c).sum(axis=2))
    value = lam * float(norms.sum())
    safe = np.where(norms < NORM_FLOOR, 1.0, norms)
    grad = np.where((norms < NORM_FLOOR)[..., None], 0.0, lam * c / safe[..., None])
    return value, grad


def _forward_cached(net: KanNetwork, x: np.ndarray):
    cache = []
    for layer in net.layers:
        lo, hi = layer.domain
        idx, f = locate(x, lo, hi, layer.grid_size)
        c = layer.coefficients
        rows = np.arange(layer.in_dim)[None, :, None]
        cols = np.arange(layer.out_dim)[None, None, :]
        c0 = c[rows, cols, idx[:, :, None]]
        c1 = c[rows, cols, idx[:, :, None] + 1]
        fe = f[:, :, None]
        y = ((1.0 - fe) * c0 + fe * c1).sum(axis=1)
        inside = (x >= lo) & (x <= hi)
        cache.append((x, idx, f, c1 - c0, inside))
        x = y
    return x, cache


def mse(net: KanNetwork, x, y) -> float:
    pred, _ = _forward_cached(net, np.asarray(x, dtype=np.float64))
    return float(np.mean((pred - y) ** 2))


def loss_and_grad(net: KanNetwork, x, y, l21_lambda: float = 0.0):
    """MSE plus group-l2,1 penalty, and its gradient per layer coefficient array."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.in_dim:
        raise ShapeError(f"expected inputs of width {net.in_dim}, got {x.shape}")
    pred, cache = _forward_cached(net, x)
    if y.shape != pred.shape:
        raise ShapeError(f"targets {y.shape} do not match outputs {pred.shape}")
    resid = pred - y
    loss = float(np.mean(resid**2))
    dy = 2.0 * resid / resid.size

    grads = [None] * len(net.layers)
    for li in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[li]
        xin, idx, f, delta, inside = cache[li]
        n_in, n_out, g = layer.coefficients.shape
        w1 = f[:, :, None] * dy[:, None, :]
        w0 = dy[:, None, :] - w1
        edge = (np.arange(n_in)[:, None] * n_out + np.arange(n_out)[None, :]) * g
        base = edge[None, :, :] + idx[:, :, None]
        flat = np.bincount(base.ravel(), weights=w0.ravel(), minlength=n_in * n_out * g)
        flat += np.bincount((base + 1).ravel(), weights=w1.ravel(), minlength=n_in * n_out * g)
        grads[li] = flat.reshape(n_in, n_out, g)
        if li > 0:
            lo, hi = layer.domain
            slope = delta * ((g - 1) / (hi - lo))
            dy = (slope * dy[:, None, :]).sum(axis=2) * inside

    if l21_lambda > 0:
        for li, layer in enumerate(net.layers):
            value, pg = group_l21_penalty(layer, l21_lambda)
            loss += value
            grads[li] = grads[li] + pg
    return loss, grads


def train(net: KanNetwork, task: SyntheticTask, config: TrainConfig):
    """Fit ``net`` to ``task`` with AdamW at a constant learning rate.

    Returns ``(trained, loss_history)`` where the history holds the full
    training-set MSE after each epoch.
    """
    if task.input_dim != net.in_dim:
        raise ShapeError(f"task input_dim {task.input_dim} != network input {net.in_dim}")
    if net.out_dim != 1:
        raise ShapeError("synthetic tasks have scalar targets; the last layer must have 1 output")
    x, y = task.train_set()
    params = [np.array(layer.coefficients, dtype=np.float64) for layer in net.layers]
    domains = [layer.domain for layer in net.layers]
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    rng = np.random.default_rng([config.seed, 0x7A11])
    lr, b1, b2 = config.learning_rate, config.beta1, config.beta2
    step = 0
    history = []
    n = x.shape[0]
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            batch = order[start : start + config.batch_size]
            cur = KanNetwork([KanLayer(p, d) for p, d in zip(params, domains)])
            # overflow shows up as non-finite parameters and is reported below
            with np.errstate(over="ignore", invalid="ignore"):
                _, grads = loss_and_grad(cur, x[batch], y[batch], config.l21_lambda)
                step += 1
                bc1 = 1.0 - b1**step
                bc2 = 1.0 - b2**step
                for p, gr, mi, vi in zip(params, grads, m, v):
                    mi *= b1
                    mi += (1.0 - b1) * gr
                    vi *= b2
                    vi += (1.0 - b2) * gr * gr
                    update = (mi / bc1) / (np.sqrt(vi / bc2) + config.eps)
                    p -= lr * (update + config.weight_decay * p)
            if not all(np.all(np.isfinite(p)) for p in params):
                raise TrainingError(epoch, math.nan)
        cur = KanNetwork([KanLayer(p, d) for p, d in zip(params, domains)])
        with np.errstate(over="ignore", invalid="ignore"):
            loss = mse(cur, x, y)
        if not math.isfinite(loss):
            raise TrainingError(epoch, loss)
        history.append(loss)
    trained = KanNetwork([KanLayer(p, d) for p, d in zip(params, domains)])
    return trained, history


def edge_norms(net: KanNetwork) -> np.ndarray:
    """L2 norm of every edge grid, concatenated in ``(layer, i, j)`` order."""
    return np.concatenate(
        [np.sqrt((np.asarray(l.coefficients, dtype=np.float64) ** 2).sum(axis=2)).ravel()
         for l in net.layers]
    )


def prune_by_norm(net: KanNetwork, sparsity: float):
    """Zero the globally lowest-norm ``floor(sparsity * E)`` edge grids.

    Ties break in ``(layer, i, j)`` order.  Every mask carries the realized
    threshold: the smallest kept norm (``inf`` when everything is pruned), so
    pruned edges satisfy ``norm <= threshold``.
    """
    if not 0.0 <= sparsity <= 1.0:
        raise ValueError("sparsity must lie in [0, 1]")
    norms = edge_norms(net)
    total = norms.size
    n_prune = int(math.floor(sparsity * total + 1e-9))
    order = np.argsort(norms, kind="stable")
    keep_flat = np.ones(total, dtype=bool)
    keep_flat[order[:n_prune]] = False
    threshold = float(norms[order[n_prune]]) if n_prune < total else math.inf

    layers, masks = [], []
    offset = 0
    for layer in net.layers:
        e = layer.num_edges
        keep = keep_flat[offset : offset + e].reshape(layer.in_dim, layer.out_dim)
        offset += e
        coeffs = np.where(keep[..., None], layer.coefficients, 0).astype(layer.coefficients.dtype)
        layers.append(KanLayer(coeffs, layer.domain))
        masks.append(PruneMask(keep, threshold))
    return KanNetwork(layers), masks
