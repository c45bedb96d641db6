"""Random convex combination of member features.

Two inputs use λ ~ U(0, 1): λ·x1 + (1 − λ)·x2. More inputs use flat
Dirichlet weights.
"""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np

from ..aggregation import WEIGHTED_RANDOM, manager


class WeightedRandomAggregator:
    max_inputs = None

    def __init__(self, lam: float | None = None):
        self.lam = lam

    def output_dim(self, D: int) -> int:
        return D

    def weights(
        self, k: int, batch_shape: tuple[int, ...], rng: np.random.Generator
    ) -> np.ndarray:
        """Weights of shape ``batch_shape + (k,)`` summing to one."""
        if self.lam is not None:
            rest = (1.0 - self.lam) / (k - 1)
            w = np.array([self.lam] + [rest] * (k - 1))
            return np.broadcast_to(w, (*batch_shape, k))
        size = batch_shape or None
        if k == 2:
            lam = np.asarray(rng.uniform(0.0, 1.0, size=size))
            return np.stack([lam, 1.0 - lam], axis=-1)
        return np.asarray(rng.dirichlet(np.ones(k), size=size))

    def __call__(
        self, xs: Sequence[np.ndarray], rng: np.random.Generator
    ) -> np.ndarray:
        k = len(xs)
        anchor = xs[-1]
        out = anchor.astype(np.float64, copy=True)
        if k == 1:
            return out
        w = self.weights(k, anchor.shape[:-2], rng)
        # x_k + Σ w_i (x_i − x_k): equal inputs give back x_k exactly.
        for i, x in enumerate(xs[:-1]):
            out += w[..., i][..., None, None] * (x - anchor)
        return out


def build_weighted(*, lam: float | None = None, **kwargs) -> WeightedRandomAggregator:
    return WeightedRandomAggregator(lam=lam)


manager.register(
    WEIGHTED_RANDOM,
    build_weighted,
    "weighted_random: lam=<0..1> forces the first weight; "
    "U(0,1) for two inputs, flat Dirichlet beyond",
)
