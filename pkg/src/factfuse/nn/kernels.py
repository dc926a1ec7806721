"""Pure numpy forward kernels.

Every function here is side-effect free and works on float64 arrays.  Leading
batch dimensions are allowed wherever the docstring says ``(..., n)``.  The
differentiable versions in :mod:`factfuse.nn.tape` call into these so that the
numbers produced during training and during plain inference are the same.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from factfuse.errors import (
    AllMasked,
    ConfigError,
    EmptyInput,
    IndexOutOfRange,
    NotADistribution,
    ShapeMismatch,
)

DTYPE = np.float64
LOG_EPS = 1e-12
LN_EPS = 1e-5


def _as_array(x) -> np.ndarray:
    return np.asarray(x, dtype=DTYPE)


def linear(x, W, b) -> np.ndarray:
    """``x @ W + b`` with shape checks.  ``x`` may carry leading batch axes."""
    x, W, b = _as_array(x), _as_array(W), _as_array(b)
    if W.ndim != 2:
        raise ShapeMismatch(f"weight must be 2-D, got shape {W.shape}")
    if x.shape[-1] != W.shape[0]:
        raise ShapeMismatch(f"x has {x.shape[-1]} columns but W has {W.shape[0]} rows")
    b = b.reshape(-1)
    if b.shape[0] != W.shape[1]:
        raise ShapeMismatch(f"bias has {b.shape[0]} entries but W has {W.shape[1]} columns")
    return x @ W + b


def softmax(v, axis: int = -1) -> np.ndarray:
    v = _as_array(v)
    if v.size == 0 or v.shape[axis] == 0:
        raise EmptyInput("softmax of an empty vector")
    shifted = v - v.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def masked_softmax(logits: np.ndarray, mask: np.ndarray | None) -> np.ndarray:
    """Softmax over the last axis restricted to positions where ``mask`` is true.

    Masked positions are left out of the max and the normaliser and receive
    weight exactly 0.  ``mask`` broadcasts against ``logits``.
    """
    if mask is None:
        return softmax(logits)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), logits.shape)
    if not mask.any(axis=-1).all():
        raise AllMasked("attention call with every key masked")
    peak = np.where(mask, logits, -np.inf).max(axis=-1, keepdims=True)
    e = np.where(mask, np.exp(np.where(mask, logits - peak, 0.0)), 0.0)
    return e / e.sum(axis=-1, keepdims=True)


def scaled_dot_attention(Q, K, V, mask=None, return_weights: bool = False):
    """softmax(Q Kᵀ / √d_k) V over the unmasked keys.

    Shapes: Q ``(..., q, d_k)``, K ``(..., k, d_k)``, V ``(..., k, d_v)`` and
    ``mask`` ``(..., k)`` booleans (True = attend).
    """
    Q, K, V = _as_array(Q), _as_array(K), _as_array(V)
    if Q.shape[-1] != K.shape[-1]:
        raise ShapeMismatch(f"query width {Q.shape[-1]} != key width {K.shape[-1]}")
    if K.shape[-2] != V.shape[-2]:
        raise ShapeMismatch(f"{K.shape[-2]} keys but {V.shape[-2]} values")
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape[-1] != K.shape[-2]:
            raise ShapeMismatch(f"mask length {mask.shape[-1]} != key count {K.shape[-2]}")
        mask = mask[..., None, :]
    scores = (Q @ np.swapaxes(K, -1, -2)) / np.sqrt(Q.shape[-1])
    weights = masked_softmax(scores, mask)
    out = weights @ V
    if return_weights:
        return out, weights
    return out


def split_heads(x: np.ndarray, heads: int) -> np.ndarray:
    """``(..., L, H)`` -> ``(..., heads, L, H // heads)``."""
    *lead, length, hidden = x.shape
    x = x.reshape(*lead, length, heads, hidden // heads)
    return np.swapaxes(x, -2, -3)


def merge_heads(x: np.ndarray) -> np.ndarray:
    """Inverse of :func:`split_heads`."""
    x = np.swapaxes(x, -2, -3)
    *lead, length, heads, width = x.shape
    return x.reshape(*lead, length, heads * width)


@dataclass
class AttentionParams:
    """Projection weights of one multi-head attention block.

    Weights are ``(in, hidden)`` for q/k/v and ``(hidden, hidden)`` for the
    output projection; biases are 1-D.
    """

    wq: np.ndarray
    bq: np.ndarray
    wk: np.ndarray
    bk: np.ndarray
    wv: np.ndarray
    bv: np.ndarray
    wo: np.ndarray
    bo: np.ndarray
    heads: int

    @classmethod
    def identity(cls, hidden: int, heads: int = 1) -> "AttentionParams":
        eye, zero = np.eye(hidden), np.zeros(hidden)
        return cls(eye, zero, eye, zero, eye, zero, eye, zero, heads)


def check_heads(hidden: int, heads: int) -> None:
    if heads < 1 or hidden % heads:
        raise ConfigError(f"hidden size {hidden} is not divisible by {heads} heads")


def multi_head_attention(Q, K, V, mask, params: AttentionParams) -> np.ndarray:
    """Project, split into heads, attend per head, concatenate, project."""
    hidden = params.wq.shape[1]
    check_heads(hidden, params.heads)
    q = split_heads(linear(Q, params.wq, params.bq), params.heads)
    k = split_heads(linear(K, params.wk, params.bk), params.heads)
    v = split_heads(linear(V, params.wv, params.bv), params.heads)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)[..., None, :]
    heads_out = scaled_dot_attention(q, k, v, mask)
    return linear(merge_heads(heads_out), params.wo, params.bo)


def relu(x) -> np.ndarray:
    return np.maximum(_as_array(x), 0.0)


def layer_norm(x, gain, bias, eps: float = LN_EPS) -> np.ndarray:
    x = _as_array(x)
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * gain + bias


def check_distribution(P, tol: float = 1e-6) -> np.ndarray:
    P = _as_array(P)
    if P.size == 0:
        raise NotADistribution("empty probability vector")
    if (P < 0).any() or np.abs(P.sum(axis=-1) - 1.0).max() > tol:
        raise NotADistribution(f"not a probability vector: {P}")
    return P


def cross_entropy(P, y_star: int) -> float:
    """``-log P[y_star]`` with the log clamped at ``LOG_EPS``."""
    P = check_distribution(P)
    if P.ndim != 1:
        raise ShapeMismatch("cross_entropy expects a single probability vector")
    if not 0 <= int(y_star) < P.shape[0]:
        raise IndexOutOfRange(f"class index {y_star} outside [0, {P.shape[0]})")
    return float(-np.log(max(P[int(y_star)], LOG_EPS)))
