"""Dense numeric primitives with hand-written backward passes.

Every forward function here takes and returns plain float64 ``numpy`` arrays.
Leading batch axes are allowed wherever the operation is defined on the
trailing two axes (``matmul``, ``softmax_rows``). Each ``*_backward`` takes the
upstream gradient plus whatever the forward needs and returns gradients for
the inputs in the same order as the forward signature.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import DegenerateRowError, DimensionError

COSINE_EPS = 1e-12


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"cannot multiply shapes {a.shape} and {b.shape}")
    return np.matmul(a, b)


def matmul_backward(dc: np.ndarray, a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    da = np.matmul(dc, np.swapaxes(b, -1, -2))
    db = np.matmul(np.swapaxes(a, -1, -2), dc)
    return _unbroadcast(da, a.shape), _unbroadcast(db, b.shape)


def masked_softmax(a: np.ndarray, valid: np.ndarray | None = None) -> np.ndarray:
    """Row softmax where rows with no valid entry come out all-zero.

    Used internally by the attention encoders, where a padded query row
    legitimately has nothing to attend to.
    """
    if valid is None:
        shifted = a - a.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=-1, keepdims=True)
    x = np.where(valid, a, -np.inf)
    row_max = x.max(axis=-1, keepdims=True)
    row_max = np.where(np.isfinite(row_max), row_max, 0.0)
    e = np.exp(x - row_max)
    denom = e.sum(axis=-1, keepdims=True)
    return e / np.where(denom > 0.0, denom, 1.0)


def softmax_rows(a: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    """Numerically stable softmax over the last axis.

    ``mask`` marks the entries that take part (True = kept). Masked entries
    come out exactly zero. A row with every entry masked has no defined
    distribution and raises ``DegenerateRowError``.
    """
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != a.shape:
            raise DimensionError(f"mask shape {mask.shape} does not match input shape {a.shape}")
        if not mask.any(axis=-1).all():
            raise DegenerateRowError("softmax row has every entry masked")
    return masked_softmax(a, mask)


def softmax_backward(dy: np.ndarray, y: np.ndarray) -> np.ndarray:
    return y * (dy - np.sum(dy * y, axis=-1, keepdims=True))


def _safe_norms(x: np.ndarray, eps: float) -> tuple[np.ndarray, np.ndarray]:
    norms = np.sqrt(np.sum(x * x, axis=-1, keepdims=True))
    return norms, np.maximum(norms, eps)


def cosine_sim_matrix(a: np.ndarray, b: np.ndarray, eps: float = COSINE_EPS) -> np.ndarray:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise DimensionError(f"cosine similarity needs n x d and k x d, got {a.shape} and {b.shape}")
    _, na = _safe_norms(a, eps)
    _, nb = _safe_norms(b, eps)
    return (a / na) @ (b / nb).T


def _normalize_backward(dhat: np.ndarray, x: np.ndarray, eps: float) -> np.ndarray:
    norms, guarded = _safe_norms(x, eps)
    xhat = x / guarded
    # below the guard the normalizer is the constant eps
    radial = np.where(norms > eps, np.sum(dhat * xhat, axis=-1, keepdims=True), 0.0)
    return (dhat - xhat * radial) / guarded


def cosine_sim_matrix_backward(
    dc: np.ndarray, a: np.ndarray, b: np.ndarray, eps: float = COSINE_EPS
) -> tuple[np.ndarray, np.ndarray]:
    ahat = a / _safe_norms(a, eps)[1]
    bhat = b / _safe_norms(b, eps)[1]
    da_hat = dc @ bhat
    db_hat = dc.T @ ahat
    return _normalize_backward(da_hat, a, eps), _normalize_backward(db_hat, b, eps)


def affine(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    if x.shape[-1] != w.shape[0] or b.shape[-1] != w.shape[1]:
        raise DimensionError(f"affine shapes do not conform: x {x.shape}, W {w.shape}, b {b.shape}")
    return x @ w + b


def affine_backward(
    dy: np.ndarray, x: np.ndarray, w: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    x2 = x.reshape(-1, x.shape[-1])
    dy2 = dy.reshape(-1, dy.shape[-1])
    return dy @ w.T, x2.T @ dy2, dy2.sum(axis=0)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(dy: np.ndarray, x: np.ndarray) -> np.ndarray:
    return np.where(x > 0.0, dy, 0.0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_backward(dy: np.ndarray, y: np.ndarray) -> np.ndarray:
    return dy * y * (1.0 - y)


def concat_cols(parts: Sequence[np.ndarray]) -> np.ndarray:
    rows = {p.shape[:-1] for p in parts}
    if len(rows) != 1:
        raise DimensionError(f"concat_cols needs equal leading shapes, got {[p.shape for p in parts]}")
    return np.concatenate(parts, axis=-1)


def concat_cols_backward(dy: np.ndarray, widths: Sequence[int]) -> list[np.ndarray]:
    bounds = np.cumsum(widths)[:-1]
    return np.split(dy, bounds, axis=-1)
