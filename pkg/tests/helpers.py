"""Random model builders shared by the test modules."""

import numpy as np

from holoquant.gsb import Codebook, CompressedLayer, CompressedNetwork
from holoquant.kan import KanLayer, KanNetwork, layer_forward
from holoquant.trainer import loss_and_grad


def random_network(rng, dims, G, scale=1.0, dtype=np.float64):
    layers = [
        KanLayer(rng.normal(0.0, scale, size=(a, b, G)).astype(dtype))
        for a, b in zip(dims, dims[1:])
    ]
    return KanNetwork(layers)


def random_compressed(rng, dims, G, K, degenerate=0.0):
    layers = []
    for a, b in zip(dims, dims[1:]):
        e = a * b
        gains = rng.uniform(0.05, 1.0, size=e).astype(np.float32)
        gains[rng.random(e) < degenerate] = 0.0
        layers.append(
            CompressedLayer(
                Codebook(rng.normal(size=(K, G)).astype(np.float32)),
                rng.integers(0, K, size=e).astype(np.uint16 if K <= 1 << 16 else np.uint32),
                gains,
                rng.normal(0.0, 0.2, size=e).astype(np.float32),
                a,
                b,
            )
        )
    return CompressedNetwork(layers)


def _knot_distance(x, lo, hi, G):
    """Distance from every entry of ``x`` to the nearest knot or domain bound."""
    h = (hi - lo) / (G - 1)
    t = (x - lo) / h
    inside = np.abs(t - np.round(t)) * h
    outside = np.minimum(np.abs(x - lo), np.abs(x - hi))
    return np.where((x > lo) & (x < hi), inside, outside)


def gradient_check(seed, margin=1e-3, step=1e-5, l21_lambda=1e-2):
    """Relative error between analytic and central-difference gradients.

    Draws a random float64 network and batch whose layer inputs all stay at
    least ``margin`` away from knots and domain bounds, where the loss is
    not differentiable.  Returns ``(relative_error, n_params)``.
    """
    rng = np.random.default_rng(seed)
    for _ in range(1000):
        depth = rng.integers(1, 3)
        dims = list(rng.integers(1, 5, size=depth + 1))
        G = int(rng.integers(3, 9))
        net = random_network(rng, dims, G, scale=0.5)
        x = rng.uniform(-1.2, 1.2, size=(int(rng.integers(1, 6)), dims[0]))
        y = rng.normal(size=(x.shape[0], dims[-1]))
        h, ok = x, True
        for layer in net.layers:
            if np.any(_knot_distance(h, -1.0, 1.0, G) < margin):
                ok = False
                break
            h = layer_forward(layer, h)
        if ok:
            break
    else:
        raise RuntimeError("no admissible instance found")

    _, grads = loss_and_grad(net, x, y, l21_lambda)
    analytic = np.concatenate([g.ravel() for g in grads])
    numeric = []
    for li, layer in enumerate(net.layers):
        for pos in np.ndindex(layer.coefficients.shape):
            vals = []
            for sgn in (1.0, -1.0):
                c = [l.coefficients.copy() for l in net.layers]
                c[li][pos] += sgn * step
                probe = KanNetwork([KanLayer(ci) for ci in c])
                vals.append(loss_and_grad(probe, x, y, l21_lambda)[0])
            numeric.append((vals[0] - vals[1]) / (2 * step))
    numeric = np.array(numeric)
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
    return float(np.linalg.norm(analytic - numeric) / scale), analytic.size
