"""Compact bilinear pooling of two features through count sketches.

Each frame's outer product x1 ⊗ x2 is approximated by the circular
convolution of the two count sketches, computed in the Fourier domain.
"""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np

from ..aggregation import COUNT_SKETCH_CBP, manager
from ..errors import ValidationError


class CountSketchAggregator:
    max_inputs = 2

    def __init__(self, sketch_dim: int, seed: int = 0):
        if sketch_dim < 1:
            raise ValidationError(f"sketch_dim must be >= 1, got {sketch_dim}")
        self.sketch_dim = sketch_dim
        self.seed = seed
        self._hashes: dict[int, tuple[np.ndarray, ...]] = {}

    def output_dim(self, D: int) -> int:
        return self.sketch_dim

    def hashes(self, D: int) -> tuple[np.ndarray, ...]:
        """(h1, s1, h2, s2): bucket and sign per input dimension, fixed per seed."""
        if D not in self._hashes:
            rng = np.random.default_rng([self.seed, D])
            self._hashes[D] = (
                rng.integers(0, self.sketch_dim, size=D),
                rng.choice((-1.0, 1.0), size=D),
                rng.integers(0, self.sketch_dim, size=D),
                rng.choice((-1.0, 1.0), size=D),
            )
        return self._hashes[D]

    def sketch(self, x: np.ndarray, h: np.ndarray, s: np.ndarray) -> np.ndarray:
        D = x.shape[-1]
        rows = (x.reshape(-1, D) * s).T
        out = np.zeros((self.sketch_dim, rows.shape[1]))
        np.add.at(out, h, rows)
        return out.T.reshape(*x.shape[:-1], self.sketch_dim)

    def __call__(
        self, xs: Sequence[np.ndarray], rng: np.random.Generator
    ) -> np.ndarray:
        if len(xs) != 2:
            raise ValidationError(
                f"count_sketch_cbp takes exactly 2 inputs, got {len(xs)}"
            )
        D = xs[0].shape[-1]
        if self.sketch_dim * 4 < D:
            raise ValidationError(
                f"sketch_dim {self.sketch_dim} is below D/4 for D={D}"
            )
        h1, s1, h2, s2 = self.hashes(D)
        f1 = np.fft.rfft(self.sketch(xs[0], h1, s1), axis=-1)
        f2 = np.fft.rfft(self.sketch(xs[1], h2, s2), axis=-1)
        return np.fft.irfft(f1 * f2, n=self.sketch_dim, axis=-1)


def build_cbp(*, sketch_dim: int, seed: int = 0, **kwargs) -> CountSketchAggregator:
    return CountSketchAggregator(sketch_dim, seed)


manager.register(
    COUNT_SKETCH_CBP,
    build_cbp,
    "count_sketch_cbp: sketch_dim=<int>; compact bilinear pooling of two inputs",
)
