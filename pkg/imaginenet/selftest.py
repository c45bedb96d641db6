"""Property suite behind ``imaginenet selftest``.

Finite-difference gradient checks for every differentiable op and head, an
independent brute-force oracle for the ranking metrics, the default label-space
counts and the exact identities the heads rely on.
"""

from __future__ import annotations

from collections.abc import Callable, Iterator
from dataclasses import dataclass
import logging
import time

import numpy as np

from .aggregation import VANILLA_SUM, WEIGHTED_RANDOM, AggregationStrategy, aggregate
from .fusion import FusionHead, FusionHeadConfig, HeadKind
from .label_space import CompositeLabel, default_label_space, encode_multi_hot
from .metrics import ScoreTable, average_precision, macro_map, mmit_map
from .nn_core import (
    ParamTensor,
    attention_backward,
    bce_loss,
    ce_loss,
    feed_forward,
    feed_forward_backward,
    grad_check,
    init_linear,
    layer_norm,
    layer_norm_backward,
    linear,
    linear_backward,
    multi_margin_loss,
    scaled_dot_attention,
    softmax_backward,
    softmax_rows,
)

logger = logging.getLogger(__name__)

KERNEL_TOL = 1e-5
LOSS_TOL = 1e-6


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    value: float
    limit: float
    seconds: float


def _projection_check(
    rng: np.random.Generator,
    forward: Callable[[], np.ndarray],
    backward: Callable[[np.ndarray], list[np.ndarray]],
    arrays: list[np.ndarray],
) -> float:
    """grad_check of sum(forward() * R) for a random projection R."""
    R = rng.normal(size=forward().shape)
    grads = backward(R)
    return grad_check(lambda: float((forward() * R).sum()), arrays, grads)


def _zeroed(*params: ParamTensor) -> None:
    for p in params:
        p.zero_grad()


def check_linear(rng: np.random.Generator) -> float:
    x = rng.normal(size=(3, 4))
    W, b = init_linear(rng, "lin", 4, 5)

    def backward(R):
        _zeroed(W, b)
        _, cache = linear(x, W, b)
        dx = linear_backward(R, cache)
        return [dx, W.grad.copy(), b.grad.copy()]

    return _projection_check(
        rng, lambda: linear(x, W, b)[0], backward, [x, W.value, b.value]
    )


def check_softmax(rng: np.random.Generator) -> float:
    x = rng.normal(size=(3, 5))
    return _projection_check(
        rng,
        lambda: softmax_rows(x),
        lambda R: [softmax_backward(R, softmax_rows(x))],
        [x],
    )


def check_layer_norm(rng: np.random.Generator) -> float:
    x = rng.normal(scale=3.0, size=(3, 6))
    gain = ParamTensor("g", rng.normal(size=6))
    bias = ParamTensor("b", rng.normal(size=6))

    def backward(R):
        _zeroed(gain, bias)
        _, cache = layer_norm(x, gain, bias)
        dx = layer_norm_backward(R, cache)
        return [dx, gain.grad.copy(), bias.grad.copy()]

    return _projection_check(
        rng, lambda: layer_norm(x, gain, bias)[0], backward, [x, gain.value, bias.value]
    )


def check_attention(rng: np.random.Generator) -> float:
    Q, K, V = (rng.normal(size=(4, 3)) for _ in range(3))

    def backward(R):
        _, cache = scaled_dot_attention(Q, K, V)
        return list(attention_backward(R, cache))

    return _projection_check(
        rng, lambda: scaled_dot_attention(Q, K, V)[0], backward, [Q, K, V]
    )


def check_feed_forward(rng: np.random.Generator) -> float:
    x = rng.normal(size=(3, 4))
    W1, b1 = init_linear(rng, "ffn1", 4, 8)
    W2, b2 = init_linear(rng, "ffn2", 8, 4)
    params = (W1, b1, W2, b2)

    def backward(R):
        _zeroed(*params)
        _, cache = feed_forward(x, *params)
        dx = feed_forward_backward(R, cache)
        return [dx, *(p.grad.copy() for p in params)]

    return _projection_check(
        rng,
        lambda: feed_forward(x, *params)[0],
        backward,
        [x, *(p.value for p in params)],
    )


def check_bce(rng: np.random.Generator) -> float:
    z = rng.normal(scale=2.0, size=(4, 5))
    t = rng.integers(0, 2, size=(4, 5))
    return grad_check(lambda: bce_loss(z, t)[0], [z], [bce_loss(z, t)[1]])


def check_ce(rng: np.random.Generator) -> float:
    z = rng.normal(scale=2.0, size=(4, 5))
    y = rng.integers(0, 5, size=4)
    return grad_check(lambda: ce_loss(z, y)[0], [z], [ce_loss(z, y)[1]])


def margin_inputs(
    rng: np.random.Generator, N: int = 4, C: int = 5
) -> tuple[np.ndarray, np.ndarray]:
    """Logits whose hinge terms all stay clear of the kink at zero."""
    while True:
        z = rng.normal(scale=2.0, size=(N, C))
        y = rng.integers(0, C, size=N)
        hinge = 1.0 - z[np.arange(N), y][:, None] + z
        hinge[np.arange(N), y] = 1.0
        if np.abs(hinge).min() >= 1e-3:
            return z, y


def check_margin(rng: np.random.Generator) -> float:
    z, y = margin_inputs(rng)
    return grad_check(
        lambda: multi_margin_loss(z, y)[0], [z], [multi_margin_loss(z, y)[1]]
    )


def _head_check(rng: np.random.Generator, kind: HeadKind) -> float:
    config = FusionHeadConfig(
        kind=kind,
        depth=2 if kind is HeadKind.CA else 1,
        hidden=5,
        n_classes=3,
        T=3,
        D=4,
        projections=kind is not HeadKind.FC,
        ffn_mult=2,
        seed=int(rng.integers(1 << 31)),
    )
    head = FusionHead(config)
    for p in head.parameters():
        p.value += rng.normal(scale=0.1, size=p.shape)
    x1 = rng.normal(size=(2, 3, 4))
    x2 = rng.normal(size=(2, 3, 4)) if kind is HeadKind.CA else None
    inputs = [x1] if x2 is None else [x1, x2]

    def forward():
        return head.forward(x1, x2)[0]

    def backward(R):
        head.zero_grad()
        _, cache = head.forward(x1, x2)
        dx1, dx2 = head.backward(R, cache)
        grads = [dx1] if dx2 is None else [dx1, dx2]
        return [*grads, *(p.grad.copy() for p in head.parameters())]

    arrays = [*inputs, *(p.value for p in head.parameters())]
    return _projection_check(rng, forward, backward, arrays)


def check_head_fc(rng: np.random.Generator) -> float:
    return _head_check(rng, HeadKind.FC)


def check_head_sa(rng: np.random.Generator) -> float:
    return _head_check(rng, HeadKind.SA)


def check_head_ca(rng: np.random.Generator) -> float:
    return _head_check(rng, HeadKind.CA)


# metric oracle


def brute_force_ap(scores: np.ndarray, labels: np.ndarray) -> float:
    """AP from explicit ranks; ties go to the lower index."""
    n = len(scores)
    rank = []
    for i in range(n):
        s = scores[i]
        ahead = sum(t > s or (t == s and j < i) for j, t in enumerate(scores))
        rank.append(1 + ahead)
    positives = [i for i in range(n) if labels[i]]
    total = 0.0
    for i in positives:
        hits = sum(1 for j in positives if rank[j] <= rank[i])
        total += hits / rank[i]
    return total / len(positives)


def random_table(rng: np.random.Generator) -> ScoreTable:
    """Random table with at least one positive per row and per column."""
    while True:
        N = int(rng.integers(2, 21))
        C = int(rng.integers(2, 7))
        labels = rng.integers(0, 2, size=(N, C))
        if labels.any(axis=1).all() and labels.any(axis=0).all():
            break
    # coarse scores so ties occur
    scores = np.round(rng.uniform(size=(N, C)), 1)
    return ScoreTable(scores, labels)


def check_metric_oracle(rng: np.random.Generator, tables: int = 200) -> float:
    worst = 0.0
    for _ in range(tables):
        table = random_table(rng)
        macro = np.mean(
            [brute_force_ap(s, y) for s, y in zip(table.scores.T, table.labels.T)]
        )
        mmit = np.mean(
            [brute_force_ap(s, y) for s, y in zip(table.scores, table.labels)]
        )
        worst = max(worst, abs(macro_map(table) - macro), abs(mmit_map(table) - mmit))
    return worst


def check_ap_hand_case(rng: np.random.Generator) -> float:
    ap = average_precision(np.array([0.9, 0.8, 0.1]), np.array([1, 0, 1]))
    return abs(ap - (1.0 + 2.0 / 3.0) / 2.0)


# identities


def check_label_space(rng: np.random.Generator) -> float:
    """0 when the default space has 14 singles, 59 pairs and 74 composites."""
    space = default_label_space()
    miss = abs(len(space.singles) - 14) + abs(len(space.pairs) - 59)
    miss += abs(len(space.composites) - 74)
    for label in space.composites:
        union = np.zeros(space.n_classes, dtype=np.uint8)
        for m in label.members:
            union |= encode_multi_hot(CompositeLabel.of(m), space.n_classes)
        miss += int((union != encode_multi_hot(label, space.n_classes)).sum())
    return float(miss)


def check_degeneration(rng: np.random.Generator) -> float:
    """CA on (x, x) against SA with the same parameters."""
    base = {"hidden": 6, "n_classes": 3, "T": 3, "D": 4, "projections": True, "seed": 7}
    ca = FusionHead(FusionHeadConfig(kind=HeadKind.CA, **base))
    sa = FusionHead(FusionHeadConfig(kind=HeadKind.SA, **base))
    sa.load_state_dict(ca.state_dict())
    x = rng.normal(size=(2, 3, 4))
    return float(np.abs(ca.forward(x, x)[0] - sa.forward(x)[0]).max())


def check_replication(rng: np.random.Generator) -> float:
    x = rng.normal(size=(3, 4, 5))
    worst = 0.0
    for kind in (VANILLA_SUM, WEIGHTED_RANDOM):
        out = aggregate([x, x], AggregationStrategy(kind=kind), rng)
        worst = max(worst, float(np.abs(out - x).max()))
    return worst


CHECKS: list[tuple[str, Callable[[np.random.Generator], float], float, int]] = [
    ("linear", check_linear, LOSS_TOL, 10),
    ("softmax", check_softmax, KERNEL_TOL, 10),
    ("layer_norm", check_layer_norm, KERNEL_TOL, 10),
    ("attention", check_attention, KERNEL_TOL, 10),
    ("feed_forward", check_feed_forward, KERNEL_TOL, 10),
    ("bce_loss", check_bce, LOSS_TOL, 10),
    ("ce_loss", check_ce, LOSS_TOL, 10),
    ("multi_margin_loss", check_margin, LOSS_TOL, 10),
    ("head FC", check_head_fc, KERNEL_TOL, 10),
    ("head SA", check_head_sa, KERNEL_TOL, 10),
    ("head CA", check_head_ca, KERNEL_TOL, 10),
    ("metric oracle", check_metric_oracle, 1e-12, 1),
    ("AP hand case", check_ap_hand_case, 1e-15, 1),
    ("label space", check_label_space, 0.5, 1),
    ("CA degenerates to SA", check_degeneration, 1e-12, 1),
    ("replication identity", check_replication, 0.0, 1),
]


def iter_selftest(seed: int = 0) -> Iterator[CheckResult]:
    rng = np.random.default_rng(seed)
    for name, check, limit, trials in CHECKS:
        started = time.perf_counter()
        value = max(check(rng) for _ in range(trials))
        result = CheckResult(
            name, value <= limit, value, limit, time.perf_counter() - started
        )
        if not result.passed:
            logger.warning("Self-test %s failed: %.3g > %.3g", name, value, limit)
        yield result


def run_selftest(seed: int = 0) -> list[CheckResult]:
    return list(iter_selftest(seed))
