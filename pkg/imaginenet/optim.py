"""SGD with classical momentum and a step learning-rate schedule."""

from __future__ import annotations

from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .nn_core import ParamTensor


@dataclass
class SgdState:
    lr: float = 0.001
    momentum: float = 0.0
    schedule: Sequence[tuple[int, float]] = ((20, 0.1), (40, 0.1))
    velocity: dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.lr <= 0:
            raise ValidationError(f"lr must be > 0, got {self.lr}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValidationError(f"momentum must be in [0, 1), got {self.momentum}")
        self.schedule = tuple((int(e), float(m)) for e, m in self.schedule)
        epochs = [e for e, _ in self.schedule]
        if any(b <= a for a, b in zip(epochs, epochs[1:])):
            raise ValidationError(f"Schedule epochs must increase strictly: {epochs}")

    def lr_at(self, epoch: int) -> float:
        """Base lr times every multiplier whose milestone epoch has been reached."""
        lr = self.lr
        for milestone, multiplier in self.schedule:
            if epoch >= milestone:
                lr *= multiplier
        return lr


def sgd_step(params: Iterable[ParamTensor], state: SgdState, epoch: int) -> float:
    """v ← m·v + g; w ← w − lr·v, then zero the gradients.

    Returns the learning rate used for ``epoch``.
    """
    lr = state.lr_at(epoch)
    for p in params:
        if state.momentum:
            v = state.velocity.get(p.name)
            if v is None:
                v = state.velocity[p.name] = np.zeros_like(p.value)
            v *= state.momentum
            v += p.grad
            p.value -= lr * v
        else:
            p.value -= lr * p.grad
        p.zero_grad()
    return lr
