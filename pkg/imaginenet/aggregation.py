from __future__ import annotations

from collections.abc import Sequence
from dataclasses import asdict, dataclass
from typing import Any, Callable, Protocol

import numpy as np

from .errors import ShapeMismatch, ValidationError

VANILLA_SUM = "vanilla_sum"
WEIGHTED_RANDOM = "weighted_random"
COUNT_SKETCH_CBP = "count_sketch_cbp"


@dataclass(frozen=True)
class AggregationStrategy:
    """How member features are combined into one imagined feature.

    ``lam`` forces the weight of the first input instead of sampling it.
    """

    kind: str = WEIGHTED_RANDOM
    sketch_dim: int | None = None
    seed: int = 0
    lam: float | None = None

    def __post_init__(self):
        if self.lam is not None and not 0.0 <= self.lam <= 1.0:
            raise ValidationError(f"lam must lie in [0, 1], got {self.lam}")
        if self.kind == COUNT_SKETCH_CBP and not self.sketch_dim:
            raise ValidationError("count_sketch_cbp needs sketch_dim")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


class Aggregator(Protocol):
    max_inputs: int | None

    def output_dim(self, D: int) -> int: ...

    def __call__(
        self, xs: Sequence[np.ndarray], rng: np.random.Generator
    ) -> np.ndarray: ...


class CallableAggregator:
    """Wraps a plain function ``fn(xs, rng) -> array`` that preserves the width."""

    max_inputs: int | None = None

    def __init__(
        self, fn: Callable[[Sequence[np.ndarray], np.random.Generator], np.ndarray]
    ):
        self._fn = fn

    def output_dim(self, D: int) -> int:
        return D

    def __call__(
        self, xs: Sequence[np.ndarray], rng: np.random.Generator
    ) -> np.ndarray:
        return self._fn(xs, rng)


@dataclass
class AggregatorFactory:
    build: Callable[..., Aggregator]
    doc: str


class AggregatorManager:
    def __init__(self):
        self._factories: dict[str, AggregatorFactory] = {}
        self._cache: dict[AggregationStrategy, Aggregator] = {}

    def register(
        self, name: str, build: Callable[..., Aggregator], doc: str = ""
    ) -> None:
        self._factories[name] = AggregatorFactory(build, doc)

    def get(self, name: str, **kwargs) -> Aggregator:
        if name not in self._factories:
            raise ValidationError(f"Unknown aggregation strategy: {name}")
        return self._factories[name].build(**kwargs)

    def for_strategy(self, strategy: AggregationStrategy) -> Aggregator:
        if strategy not in self._cache:
            self._cache[strategy] = self.get(
                strategy.kind,
                sketch_dim=strategy.sketch_dim,
                seed=strategy.seed,
                lam=strategy.lam,
            )
        return self._cache[strategy]

    def list_strategies(self) -> dict[str, str]:
        return {name: factory.doc for name, factory in self._factories.items()}


manager = AggregatorManager()


def output_dim(strategy: AggregationStrategy, D: int) -> int:
    return manager.for_strategy(strategy).output_dim(D)


def aggregate(
    xs: Sequence[np.ndarray],
    strategy: AggregationStrategy,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Combine ``xs`` (each ``(..., T, D)``) into one imagined feature.

    Leading axes are batch axes; random weights are drawn per batch element.
    """
    if len(xs) == 0:
        raise ValidationError("aggregate needs at least one input")
    shape = xs[0].shape
    for x in xs[1:]:
        if x.shape != shape:
            raise ShapeMismatch("aggregate", shape, x.shape)
    agg = manager.for_strategy(strategy)
    if agg.max_inputs is not None and len(xs) > agg.max_inputs:
        raise ValidationError(
            f"{strategy.kind} aggregates at most {agg.max_inputs} inputs, got {len(xs)}"
        )
    return agg(xs, rng if rng is not None else np.random.default_rng(strategy.seed))
