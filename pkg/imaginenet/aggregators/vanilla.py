from __future__ import annotations

from collections.abc import Sequence

import numpy as np

from ..aggregation import VANILLA_SUM, CallableAggregator, manager


def _mean(xs: Sequence[np.ndarray], rng: np.random.Generator) -> np.ndarray:
    # Anchored on xs[0] so identical inputs come back bit-exact.
    anchor = xs[0]
    out = anchor.astype(np.float64, copy=True)
    for x in xs[1:]:
        out += (x - anchor) / len(xs)
    return out


def build_vanilla(**kwargs) -> CallableAggregator:
    """Elementwise mean of the member features."""
    return CallableAggregator(_mean)


manager.register(
    VANILLA_SUM,
    build_vanilla,
    "vanilla_sum: elementwise mean of the inputs",
)
