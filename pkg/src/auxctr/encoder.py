"""Single-head self-attention encoders over right-padded behavior sequences.

Shapes: ``X`` is ``(n, m, d)`` (a single sequence ``(m, d)`` also works) and
``valid`` is the boolean padding mask of shape ``(n, m)``; valid positions form
a prefix. Forward functions return ``(output, cache)``; backward functions take
the upstream gradient and that cache.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, SequenceTooShortError
from .kernels import masked_softmax, softmax_backward

OWNERS = ("main-tower", "uim", "nip")


@dataclass
class AttentionParams:
    owner: str
    W_Q: np.ndarray
    W_K: np.ndarray
    W_V: np.ndarray

    @classmethod
    def init(cls, owner: str, dim: int, rng: np.random.Generator) -> "AttentionParams":
        bound = 1.0 / math.sqrt(dim)
        mats = [rng.uniform(-bound, bound, size=(dim, dim)) for _ in range(3)]
        return cls(owner, *mats)

    @property
    def dim(self) -> int:
        return self.W_Q.shape[0]

    def named(self) -> dict[str, np.ndarray]:
        return {"W_Q": self.W_Q, "W_K": self.W_K, "W_V": self.W_V}


@dataclass
class SequenceMask:
    valid: np.ndarray

    @classmethod
    def from_lengths(cls, lengths: np.ndarray, m: int) -> "SequenceMask":
        lengths = np.asarray(lengths)
        return cls(np.arange(m) < lengths[..., None])

    @property
    def valid_count(self) -> np.ndarray:
        return self.valid.sum(axis=-1)


@dataclass
class _AttentionCache:
    X: np.ndarray
    Q: np.ndarray
    K: np.ndarray
    V: np.ndarray
    A: np.ndarray
    query_valid: np.ndarray
    params: AttentionParams = field(repr=False)


def _as_valid(mask, X: np.ndarray) -> np.ndarray:
    valid = mask.valid if isinstance(mask, SequenceMask) else np.asarray(mask, dtype=bool)
    if valid.shape != X.shape[:-1]:
        raise DimensionError(f"mask shape {valid.shape} does not match sequence shape {X.shape[:-1]}")
    return valid


def _attend(X: np.ndarray, p: AttentionParams, valid: np.ndarray, causal: bool):
    if X.shape[-1] != p.dim:
        raise DimensionError(f"sequence width {X.shape[-1]} does not match attention dim {p.dim}")
    m = X.shape[-2]
    Q = X @ p.W_Q
    K = X @ p.W_K
    V = X @ p.W_V
    scores = (Q @ np.swapaxes(K, -1, -2)) / math.sqrt(p.dim)
    allowed = valid[..., :, None] & valid[..., None, :]
    if causal:
        allowed = allowed & np.tril(np.ones((m, m), dtype=bool))
    A = masked_softmax(scores, allowed)
    out = (A @ V) * valid[..., None]
    return out, _AttentionCache(X, Q, K, V, A, valid, p)


def _attend_backward(dout: np.ndarray, cache: _AttentionCache):
    p = cache.params
    dout = dout * cache.query_valid[..., None]
    dA = dout @ np.swapaxes(cache.V, -1, -2)
    dV = np.swapaxes(cache.A, -1, -2) @ dout
    dS = softmax_backward(dA, cache.A) / math.sqrt(p.dim)
    dQ = dS @ cache.K
    dK = np.swapaxes(dS, -1, -2) @ cache.Q
    X = cache.X
    dX = dQ @ p.W_Q.T + dK @ p.W_K.T + dV @ p.W_V.T
    X2 = X.reshape(-1, X.shape[-1])

    def _w(dY):
        return X2.T @ dY.reshape(-1, dY.shape[-1])

    grads = {"W_Q": _w(dQ), "W_K": _w(dK), "W_V": _w(dV)}
    return dX, grads


def self_attention(X: np.ndarray, p: AttentionParams, mask) -> tuple[np.ndarray, _AttentionCache]:
    """Bidirectional attention; padded keys are excluded, padded queries output zero."""
    return _attend(X, p, _as_valid(mask, X), causal=False)


def self_attention_backward(dout: np.ndarray, cache: _AttentionCache):
    return _attend_backward(dout, cache)


def causal_self_attention(X: np.ndarray, p: AttentionParams, mask) -> tuple[np.ndarray, _AttentionCache]:
    """Prefix representations ``r^1..r^{m-1}``.

    Row ``t-1`` of the result attends to positions ``1..t`` only, so the last
    position (which has no next item to predict) is dropped.
    """
    if X.shape[-2] < 2:
        raise SequenceTooShortError(f"causal attention needs m >= 2, got m = {X.shape[-2]}")
    out, cache = _attend(X, p, _as_valid(mask, X), causal=True)
    return out[..., :-1, :], cache


def causal_self_attention_backward(dR: np.ndarray, cache: _AttentionCache):
    pad = np.zeros(dR.shape[:-2] + (1, dR.shape[-1]))
    return _attend_backward(np.concatenate([dR, pad], axis=-2), cache)


def mean_pool(H: np.ndarray, mask) -> np.ndarray:
    valid = _as_valid(mask, H)
    counts = valid.sum(axis=-1)[..., None]
    summed = np.sum(np.where(valid[..., None], H, 0.0), axis=-2)
    return summed / np.maximum(counts, 1)


def mean_pool_backward(de: np.ndarray, mask) -> np.ndarray:
    valid = mask.valid if isinstance(mask, SequenceMask) else np.asarray(mask, dtype=bool)
    counts = np.maximum(valid.sum(axis=-1), 1)[..., None]
    return (de / counts)[..., None, :] * valid[..., None]
