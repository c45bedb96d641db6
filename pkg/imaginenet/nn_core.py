"""Dense numeric kernels with hand-written backward passes.

Every forward kernel returns its output together with a cache; the matching
``*_backward`` consumes the upstream gradient and the cache, returns the
input gradient and accumulates parameter gradients into ``ParamTensor.grad``.
Kernels accept arbitrary leading batch dimensions.
"""

from __future__ import annotations

from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
import math
from typing import Any

import numpy as np

from .errors import ShapeMismatch, ValidationError
from .utils import check_finite

LN_EPS = 1e-5


@dataclass(eq=False)
class ParamTensor:
    name: str
    value: np.ndarray
    grad: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.value = np.asarray(self.value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad.fill(0.0)


def uniform_init(
    rng: np.random.Generator, name: str, shape: tuple[int, ...], fan_in: int
) -> ParamTensor:
    bound = 1.0 / math.sqrt(fan_in)
    return ParamTensor(name, rng.uniform(-bound, bound, size=shape))


def init_linear(
    rng: np.random.Generator, name: str, fan_in: int, fan_out: int
) -> tuple[ParamTensor, ParamTensor]:
    """Weight and bias, both uniform in ±1/sqrt(fan_in)."""
    return (
        uniform_init(rng, f"{name}.W", (fan_in, fan_out), fan_in),
        uniform_init(rng, f"{name}.b", (1, fan_out), fan_in),
    )


def _sum_leading(a: np.ndarray, ndim: int) -> np.ndarray:
    """Reduce ``a`` over the leading axes so ``ndim`` trailing axes remain."""
    extra = a.ndim - ndim
    return a.sum(axis=tuple(range(extra))) if extra > 0 else a


# linear


def linear(
    x: np.ndarray, W: ParamTensor, b: ParamTensor
) -> tuple[np.ndarray, tuple[Any, ...]]:
    if x.shape[-1] != W.shape[0]:
        raise ShapeMismatch("linear", f"(..., {W.shape[0]})", x.shape)
    if b.shape != (1, W.shape[1]):
        raise ShapeMismatch("linear bias", (1, W.shape[1]), b.shape)
    y = x @ W.value + b.value[0]
    return check_finite(y, "linear"), (x, W, b)


def linear_backward(dy: np.ndarray, cache: tuple[Any, ...]) -> np.ndarray:
    x, W, b = cache
    x2 = x.reshape(-1, x.shape[-1])
    dy2 = dy.reshape(-1, dy.shape[-1])
    W.grad += x2.T @ dy2
    b.grad += dy2.sum(axis=0, keepdims=True)
    return dy @ W.value.T


# activations


def relu(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mask = x > 0
    return x * mask, mask


def relu_backward(dy: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return dy * mask


def sigmoid(z: np.ndarray) -> np.ndarray:
    """Overflow-free logistic function."""
    return np.exp(-np.logaddexp(0.0, -z))


def softmax_rows(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_backward(dout: np.ndarray, out: np.ndarray) -> np.ndarray:
    return out * (dout - (dout * out).sum(axis=-1, keepdims=True))


# layer norm


def layer_norm(
    x: np.ndarray, gain: ParamTensor, bias: ParamTensor, eps: float = LN_EPS
) -> tuple[np.ndarray, tuple[Any, ...]]:
    D = x.shape[-1]
    if D < 2:
        raise ValidationError("layer_norm needs at least 2 columns")
    if gain.shape != (D,) or bias.shape != (D,):
        raise ShapeMismatch("layer_norm", (D,), (gain.shape, bias.shape))
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv
    y = xhat * gain.value + bias.value
    return check_finite(y, "layer_norm"), (xhat, inv, gain, bias)


def layer_norm_backward(dy: np.ndarray, cache: tuple[Any, ...]) -> np.ndarray:
    xhat, inv, gain, bias = cache
    gain.grad += _sum_leading(dy * xhat, 1)
    bias.grad += _sum_leading(dy, 1)
    dxhat = dy * gain.value
    return inv * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )


# attention


def scaled_dot_attention(
    Q: np.ndarray, K: np.ndarray, V: np.ndarray
) -> tuple[np.ndarray, tuple[Any, ...]]:
    """softmax(Q Kᵀ / sqrt(D)) V, single head."""
    if Q.shape[-1] != K.shape[-1]:
        raise ShapeMismatch("attention Q/K", Q.shape[-1], K.shape[-1])
    if K.shape[-2] != V.shape[-2]:
        raise ShapeMismatch("attention K/V", K.shape[-2], V.shape[-2])
    scale = 1.0 / math.sqrt(Q.shape[-1])
    A = softmax_rows(Q @ np.swapaxes(K, -1, -2) * scale)
    out = A @ V
    return check_finite(out, "attention"), (Q, K, V, A, scale)


def attention_backward(
    dout: np.ndarray, cache: tuple[Any, ...]
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    Q, K, V, A, scale = cache
    dV = np.swapaxes(A, -1, -2) @ dout
    dA = dout @ np.swapaxes(V, -1, -2)
    dS = softmax_backward(dA, A) * scale
    dQ = dS @ K
    dK = np.swapaxes(dS, -1, -2) @ Q
    return dQ, dK, dV


# feed-forward


def feed_forward(
    x: np.ndarray,
    W1: ParamTensor,
    b1: ParamTensor,
    W2: ParamTensor,
    b2: ParamTensor,
) -> tuple[np.ndarray, tuple[Any, ...]]:
    """W2·relu(W1·x + b1) + b2."""
    h, c1 = linear(x, W1, b1)
    a, mask = relu(h)
    y, c2 = linear(a, W2, b2)
    return y, (c1, mask, c2)


def feed_forward_backward(dy: np.ndarray, cache: tuple[Any, ...]) -> np.ndarray:
    c1, mask, c2 = cache
    da = linear_backward(dy, c2)
    return linear_backward(relu_backward(da, mask), c1)


# positional embedding


def positional_embedding(x: np.ndarray, P: ParamTensor, enabled: bool) -> np.ndarray:
    if x.shape[-2:] != P.shape:
        raise ShapeMismatch("positional_embedding", P.shape, x.shape[-2:])
    return x + P.value if enabled else x


def positional_embedding_backward(
    dy: np.ndarray, P: ParamTensor, enabled: bool
) -> np.ndarray:
    if enabled:
        P.grad += _sum_leading(dy, 2)
    return dy


# losses; each returns (scalar loss, gradient w.r.t. logits)


def _check_logits(logits: np.ndarray, op: str) -> None:
    if logits.ndim != 2:
        raise ShapeMismatch(op, "(N, C)", logits.shape)


def bce_loss(logits: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean binary cross-entropy over all N×C entries, in log-sum-exp form."""
    _check_logits(logits, "bce_loss")
    if target.shape != logits.shape:
        raise ShapeMismatch("bce_loss", logits.shape, target.shape)
    if not np.isin(target, (0, 1)).all():
        raise ValidationError("bce_loss targets must be 0 or 1")
    t = target.astype(np.float64)
    z = logits
    per = np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z)))
    loss = float(check_finite(per, "bce_loss").mean())
    return loss, (sigmoid(z) - t) / z.size


def _check_index(index: np.ndarray, n: int, C: int, op: str) -> np.ndarray:
    index = np.asarray(index)
    if index.shape != (n,):
        raise ShapeMismatch(op, (n,), index.shape)
    if not np.issubdtype(index.dtype, np.integer):
        raise ValidationError(f"{op}: class index must be integer, got {index.dtype}")
    if index.min() < 0 or index.max() >= C:
        raise ValidationError(f"{op}: class index outside 0..{C - 1}")
    return index


def ce_loss(logits: np.ndarray, index: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean of -log softmax(z)[y]."""
    _check_logits(logits, "ce_loss")
    N, C = logits.shape
    index = _check_index(index, N, C, "ce_loss")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(N)
    loss = float(check_finite(log_z - shifted[rows, index], "ce_loss").mean())
    grad = softmax_rows(logits)
    grad[rows, index] -= 1.0
    return loss, grad / N


def multi_margin_loss(
    logits: np.ndarray, index: np.ndarray, margin: float = 1.0
) -> tuple[float, np.ndarray]:
    """mean_j≠y max(0, margin - z_y + z_j), averaged again over rows."""
    _check_logits(logits, "multi_margin_loss")
    N, C = logits.shape
    if C < 2:
        raise ValidationError("multi_margin_loss needs at least 2 classes")
    index = _check_index(index, N, C, "multi_margin_loss")
    rows = np.arange(N)
    hinge = margin - logits[rows, index][:, None] + logits
    hinge[rows, index] = 0.0
    active = (hinge > 0).astype(np.float64)
    loss = float(np.maximum(hinge, 0.0).sum() / (N * (C - 1)))
    grad = active / (N * (C - 1))
    grad[rows, index] = -active.sum(axis=1) / (N * (C - 1))
    return loss, grad


# verification


def grad_check(
    fn: Callable[[], float],
    arrays: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    eps: float = 1e-5,
    floor: float = 1e-4,
) -> float:
    """Max relative error between analytic ``grads`` and central differences.

    ``fn`` must recompute the scalar objective from the current contents of
    ``arrays``, which are perturbed in place and restored. Denominators are
    clamped at ``floor`` so near-zero gradients compare absolutely.
    """
    if len(arrays) != len(grads):
        raise ValidationError("grad_check needs one gradient per array")
    worst = 0.0
    for array, grad in zip(arrays, grads):
        if array.shape != grad.shape:
            raise ShapeMismatch("grad_check", array.shape, grad.shape)
        for idx in np.ndindex(array.shape):
            orig = array[idx]
            array[idx] = orig + eps
            f_plus = fn()
            array[idx] = orig - eps
            f_minus = fn()
            array[idx] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            analytic = grad[idx]
            rel = abs(analytic - numeric) / max(abs(analytic) + abs(numeric), floor)
            worst = max(worst, rel)
    return worst
