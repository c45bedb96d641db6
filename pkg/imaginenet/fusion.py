"""Imagination heads: FC, self-attention (SA) and cross-attention (CA).

All heads end in the same tail: temporal mean-pool, linear, ReLU, linear to
class logits. SA and CA put a stack of residual attention blocks in front of
the tail; the first CA block attends from the first input to the second.
Heads stay in logit space; sigmoid is applied by :func:`infer` and inside
the BCE loss.
"""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from dataclasses import asdict, dataclass, field
from enum import Enum
import logging
from pathlib import Path
from typing import Any

import numpy as np

from .aggregation import COUNT_SKETCH_CBP, AggregationStrategy, aggregate, output_dim
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import FeatureFormatError, ShapeMismatch, ValidationError
from .nn_core import (
    ParamTensor,
    attention_backward,
    feed_forward,
    feed_forward_backward,
    init_linear,
    layer_norm,
    layer_norm_backward,
    linear,
    linear_backward,
    positional_embedding,
    positional_embedding_backward,
    relu,
    relu_backward,
    scaled_dot_attention,
    sigmoid,
    uniform_init,
)

logger = logging.getLogger(__name__)

CHECKPOINT_KIND = "fusion_head"


class HeadKind(str, Enum):
    FC = "FC"
    SA = "SA"
    CA = "CA"


@dataclass(frozen=True)
class FusionHeadConfig:
    kind: HeadKind = HeadKind.FC
    depth: int = 1
    pos_emb: bool = True
    hidden: int = 512
    n_classes: int = 14
    T: int = 8
    D: int = 2048
    projections: bool = False
    ffn_mult: int = 4
    ca_fold: bool = False
    aggregation: AggregationStrategy = field(default_factory=AggregationStrategy)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", HeadKind(self.kind))
        if isinstance(self.aggregation, Mapping):
            strategy = AggregationStrategy(**self.aggregation)
            object.__setattr__(self, "aggregation", strategy)
        for name in ("depth", "hidden", "n_classes", "T", "ffn_mult"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1")
        if self.D < 2:
            raise ValidationError(f"D must be >= 2, got {self.D}")
        if self.kind is HeadKind.CA and self.aggregation.kind == COUNT_SKETCH_CBP:
            raise ValidationError("The CA head cannot take CBP features")

    @property
    def input_dim(self) -> int:
        """Width of the features entering the head."""
        if self.kind is HeadKind.CA:
            return self.D
        return output_dim(self.aggregation, self.D)

    def to_dict(self) -> dict[str, Any]:
        data = asdict(self)
        data["kind"] = self.kind.value
        return data

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> FusionHeadConfig:
        return cls(**data)


def variant_name(config: FusionHeadConfig) -> str:
    """Short label of a head variant: FC, SA, SAx2, CA, CA+SA, CA+SAx2, ..."""
    if config.kind is HeadKind.FC:
        return "FC"
    if config.kind is HeadKind.SA:
        name = "SA" if config.depth == 1 else f"SAx{config.depth}"
    else:
        rest = config.depth - 1
        name = "CA" if rest == 0 else "CA+SA" if rest == 1 else f"CA+SAx{rest}"
    return name if config.pos_emb else f"{name} w/o PosEmb"


def estimate_flops(config: FusionHeadConfig) -> int:
    """Floating-point operations (2 per multiply-add) of one forward pass."""
    T, D, h, C = config.T, config.input_dim, config.hidden, config.n_classes
    tail = 2 * D * h + 2 * h * C
    if config.kind is HeadKind.FC:
        return tail
    per_block = 4 * T * T * D + 4 * config.ffn_mult * T * D * D
    if config.projections:
        per_block += 6 * T * D * D
    return config.depth * per_block + tail


def _norm_params(prefix: str, D: int) -> tuple[ParamTensor, ParamTensor]:
    return (
        ParamTensor(f"{prefix}.gain", np.ones(D)),
        ParamTensor(f"{prefix}.bias", np.zeros(D)),
    )


class AttentionBlock:
    """y1 = LN(xq + attn(xq, xkv, xkv)); y = LN(y1 + FFN(y1))."""

    def __init__(
        self,
        prefix: str,
        D: int,
        ffn_mult: int,
        projections: bool,
        rng: np.random.Generator,
    ):
        self.proj: list[ParamTensor] = []
        if projections:
            self.proj = [
                uniform_init(rng, f"{prefix}.W{n}", (D, D), D) for n in ("q", "k", "v")
            ]
        self.ln1 = _norm_params(f"{prefix}.ln1", D)
        self.ln2 = _norm_params(f"{prefix}.ln2", D)
        self.ffn = (
            *init_linear(rng, f"{prefix}.ffn1", D, ffn_mult * D),
            *init_linear(rng, f"{prefix}.ffn2", ffn_mult * D, D),
        )

    def parameters(self) -> list[ParamTensor]:
        return [*self.proj, *self.ln1, *self.ln2, *self.ffn]

    def forward(self, xq: np.ndarray, xkv: np.ndarray) -> tuple[np.ndarray, tuple]:
        if self.proj:
            Wq, Wk, Wv = self.proj
            Q, K, V = xq @ Wq.value, xkv @ Wk.value, xkv @ Wv.value
        else:
            Q, K, V = xq, xkv, xkv
        att, c_att = scaled_dot_attention(Q, K, V)
        y1, c_ln1 = layer_norm(xq + att, *self.ln1)
        f, c_ffn = feed_forward(y1, *self.ffn)
        y2, c_ln2 = layer_norm(y1 + f, *self.ln2)
        return y2, (xq, xkv, c_att, c_ln1, c_ffn, c_ln2)

    def backward(self, dy: np.ndarray, cache: tuple) -> tuple[np.ndarray, np.ndarray]:
        xq, xkv, c_att, c_ln1, c_ffn, c_ln2 = cache
        dr2 = layer_norm_backward(dy, c_ln2)
        dy1 = dr2 + feed_forward_backward(dr2, c_ffn)
        dr1 = layer_norm_backward(dy1, c_ln1)
        dQ, dK, dV = attention_backward(dr1, c_att)
        if not self.proj:
            return dr1 + dQ, dK + dV
        D = xq.shape[-1]
        for W, x, d in zip(self.proj, (xq, xkv, xkv), (dQ, dK, dV)):
            W.grad += x.reshape(-1, D).T @ d.reshape(-1, D)
        Wq, Wk, Wv = (W.value for W in self.proj)
        return dr1 + dQ @ Wq.T, dK @ Wk.T + dV @ Wv.T


class FusionHead:
    def __init__(self, config: FusionHeadConfig):
        self.config = config
        rng = np.random.default_rng(config.seed)
        D = config.input_dim
        self.pos: ParamTensor | None = None
        self.blocks: list[AttentionBlock] = []
        if config.kind is not HeadKind.FC:
            if config.pos_emb:
                self.pos = ParamTensor("pos.P", np.zeros((config.T, D)))
            self.blocks = [
                AttentionBlock(f"block{i}", D, config.ffn_mult, config.projections, rng)
                for i in range(config.depth)
            ]
        self.fc1 = init_linear(rng, "fc1", D, config.hidden)
        self.fc2 = init_linear(rng, "fc2", config.hidden, config.n_classes)
        logger.debug(
            "Built %s head with %d parameters",
            variant_name(config),
            sum(p.value.size for p in self.parameters()),
        )

    def parameters(self) -> list[ParamTensor]:
        params = [self.pos] if self.pos is not None else []
        for block in self.blocks:
            params.extend(block.parameters())
        return [*params, *self.fc1, *self.fc2]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {p.name: p.value.copy() for p in self.parameters()}

    def load_state_dict(self, tensors: Mapping[str, np.ndarray]) -> None:
        params = {p.name: p for p in self.parameters()}
        if set(params) != set(tensors):
            raise FeatureFormatError(sorted(params), sorted(tensors))
        for name, p in params.items():
            if tensors[name].shape != p.shape:
                raise ShapeMismatch(f"load {name}", p.shape, tensors[name].shape)
            p.value = np.array(tensors[name], dtype=np.float64)
            p.zero_grad()

    def _check(self, x: np.ndarray, op: str) -> None:
        D = self.config.input_dim
        if self.pos is not None:
            if x.shape[-2:] != (self.config.T, D):
                raise ShapeMismatch(op, f"(..., {self.config.T}, {D})", x.shape)
        elif x.ndim < 2 or x.shape[-1] != D:
            raise ShapeMismatch(op, f"(..., T, {D})", x.shape)

    def _embed(self, x: np.ndarray) -> np.ndarray:
        return positional_embedding(x, self.pos, True) if self.pos is not None else x

    def _tail(self, x: np.ndarray) -> tuple[np.ndarray, tuple]:
        pooled = x.mean(axis=-2)
        h, c1 = linear(pooled, *self.fc1)
        a, mask = relu(h)
        logits, c2 = linear(a, *self.fc2)
        return logits, (x.shape, c1, mask, c2, a)

    def _tail_backward(self, dlogits: np.ndarray, cache: tuple) -> np.ndarray:
        shape, c1, mask, c2, _ = cache
        da = linear_backward(dlogits, c2)
        dpooled = linear_backward(relu_backward(da, mask), c1)
        return np.broadcast_to(dpooled[..., None, :] / shape[-2], shape).copy()

    def forward(
        self, x1: np.ndarray, x2: np.ndarray | None = None
    ) -> tuple[np.ndarray, dict[str, Any]]:
        """Logits for ``x1`` (FC/SA) or for the pair ``(x1, x2)`` (CA)."""
        kind = self.config.kind
        self._check(x1, f"head_{kind.value.lower()}")
        if kind is HeadKind.CA:
            if x2 is None:
                raise ValidationError("The CA head takes two inputs")
            if x2.shape != x1.shape:
                raise ShapeMismatch("head_ca", x1.shape, x2.shape)
        elif x2 is not None:
            raise ValidationError(f"The {kind.value} head takes one input")

        caches = []
        if kind is HeadKind.CA:
            x, c = self.blocks[0].forward(self._embed(x1), self._embed(x2))
            caches.append(c)
            rest = self.blocks[1:]
        else:
            x = self._embed(x1)
            rest = self.blocks
        for block in rest:
            x, c = block.forward(x, x)
            caches.append(c)
        logits, c_tail = self._tail(x)
        return logits, {"blocks": caches, "tail": c_tail}

    def backward(
        self, dlogits: np.ndarray, cache: dict[str, Any]
    ) -> tuple[np.ndarray, np.ndarray | None]:
        """Accumulate parameter gradients; return input gradients."""
        dx = self._tail_backward(dlogits, cache["tail"])
        blocks = cache["blocks"]
        cross = self.config.kind is HeadKind.CA
        start = 1 if cross else 0
        for block, c in zip(reversed(self.blocks[start:]), reversed(blocks[start:])):
            dq, dkv = block.backward(dx, c)
            dx = dq + dkv
        if not cross:
            if self.pos is not None:
                positional_embedding_backward(dx, self.pos, True)
            return dx, None
        dx1, dx2 = self.blocks[0].backward(dx, blocks[0])
        if self.pos is not None:
            positional_embedding_backward(dx1, self.pos, True)
            positional_embedding_backward(dx2, self.pos, True)
        return dx1, dx2

    def imagine(
        self, members: Sequence[np.ndarray], rng: np.random.Generator | None = None
    ) -> tuple[np.ndarray, dict[str, Any]]:
        """Forward pass on an imagined composite built from member features."""
        strategy = self.config.aggregation
        if self.config.kind is not HeadKind.CA:
            return self.forward(aggregate(members, strategy, rng))
        if len(members) == 2:
            return self.forward(members[0], members[1])
        if len(members) > 2 and self.config.ca_fold:
            return self.forward(members[0], aggregate(members[1:], strategy, rng))
        raise ValidationError(
            f"The CA head takes 2 members (or more with ca_fold), got {len(members)}"
        )


def _require(head: FusionHead, kind: HeadKind) -> None:
    if head.config.kind is not kind:
        raise ValidationError(
            f"Expected a {kind.value} head, got {head.config.kind.value}"
        )


def head_fc(x12: np.ndarray, head: FusionHead) -> np.ndarray:
    _require(head, HeadKind.FC)
    return head.forward(x12)[0]


def head_sa(x12: np.ndarray, head: FusionHead) -> np.ndarray:
    _require(head, HeadKind.SA)
    return head.forward(x12)[0]


def head_ca(x1: np.ndarray, x2: np.ndarray, head: FusionHead) -> np.ndarray:
    _require(head, HeadKind.CA)
    return head.forward(x1, x2)[0]


def _replicated_forward(head: FusionHead, x: np.ndarray) -> tuple[np.ndarray, dict]:
    if head.config.kind is HeadKind.CA:
        return head.forward(x, x)
    return head.forward(aggregate([x, x], head.config.aggregation))


def infer(head: FusionHead, x: np.ndarray) -> np.ndarray:
    """Scores in [0, 1] for a clip feature (or a batch), replicated to fill the pair."""
    return sigmoid(_replicated_forward(head, x)[0])


def embed(head: FusionHead, x: np.ndarray) -> np.ndarray:
    """Hidden activation of the FC tail under replication fill."""
    return _replicated_forward(head, x)[1]["tail"][-1]


def save_head(
    path: str | Path, head: FusionHead, extra: Mapping[str, Any] | None = None
) -> str:
    config = {"kind": CHECKPOINT_KIND, "head": head.config.to_dict(), **(extra or {})}
    return save_checkpoint(path, config, head.state_dict())


def load_head(path: str | Path) -> tuple[FusionHead, dict[str, Any]]:
    config, tensors = load_checkpoint(path)
    if config.get("kind") != CHECKPOINT_KIND:
        raise FeatureFormatError(CHECKPOINT_KIND, config.get("kind"))
    head = FusionHead(FusionHeadConfig.from_dict(config["head"]))
    head.load_state_dict(tensors)
    return head, config

