"""Versioned catalog of synthetic regression targets.

Changing a target function changes every frozen threshold downstream, so
edits must bump ``CATALOG_VERSION``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

CATALOG_VERSION = 1


def _sum_of_sinusoids(x):
    d = x.shape[1]
    freq = np.pi * np.arange(1, d + 1)
    return np.sin(x * freq).mean(axis=1)


def _polynomial_composition(x):
    u = (x**2).mean(axis=1)
    return (2.0 * u - 1.0) ** 3


def _radial_bump(x):
    return np.exp(-4.0 * (x**2).mean(axis=1))


TARGETS = {
    "sum-of-sinusoids": _sum_of_sinusoids,
    "polynomial-composition": _polynomial_composition,
    "radial-bump": _radial_bump,
}


@dataclass(frozen=True)
class SyntheticTask:
    input_dim: int
    target_function: str
    sample_count: int = 2000
    noise_sigma: float = 0.0
    seed: int = 0
    domain: tuple[float, float] = (-1.0, 1.0)

    def __post_init__(self):
        if self.target_function not in TARGETS:
            known = ", ".join(sorted(TARGETS))
            raise ValueError(f"unknown target {self.target_function!r}; known: {known}")
        if self.input_dim < 1 or self.sample_count < 1:
            raise ValueError("input_dim and sample_count must be positive")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")

    def target(self, x: np.ndarray) -> np.ndarray:
        return TARGETS[self.target_function](np.asarray(x, dtype=np.float64))

    def sample(self, count: int | None = None, stream: int = 0):
        """Draw ``(X, y)``; ``y`` has shape ``(n, 1)``.

        ``stream`` selects an independent draw for the same seed (0 is the
        training split, 1 the held-out split).
        """
        n = self.sample_count if count is None else count
        rng = np.random.default_rng([self.seed, stream, CATALOG_VERSION])
        lo, hi = self.domain
        x = rng.uniform(lo, hi, size=(n, self.input_dim))
        y = self.target(x)
        if self.noise_sigma > 0:
            y = y + rng.normal(0.0, self.noise_sigma, size=n)
        return x, y[:, None]

    def train_set(self):
        return self.sample(stream=0)

    def test_set(self, count: int | None = None):
        return self.sample(count, stream=1)
