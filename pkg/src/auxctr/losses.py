"""Training objectives: symmetric InfoNCE match losses, BCE and their weighted sum.

Each loss returns its value together with gradients for its inputs, so the
model can push them straight into its own backward pass.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .errors import ConfigError, DimensionError, LabelError
from .kernels import COSINE_EPS, cosine_sim_matrix, cosine_sim_matrix_backward

PROB_EPS = 1e-7


class AuxLoss(NamedTuple):
    """Value of a symmetric match loss and the gradients for its two inputs."""

    value: float
    grad_a: np.ndarray
    grad_b: np.ndarray
    skipped: bool


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def info_nce_directional(
    anchors: np.ndarray, candidates: np.ndarray, pair_of: np.ndarray, tau: float, with_grad: bool = True
) -> tuple[float, np.ndarray | None, np.ndarray | None]:
    """Mean InfoNCE of each anchor against all candidates.

    Anchor ``k`` is paired with ``candidates[pair_of[k]]``; the softmax
    denominator runs over every candidate row, the positive included.
    Returns ``(loss, d_anchors, d_candidates)``; the gradients are None
    when ``with_grad`` is false.
    """
    if tau <= 0:
        raise ConfigError(f"temperature must be positive, got {tau}")
    pair_of = np.asarray(pair_of, dtype=np.int64)
    s = anchors.shape[0]
    if s == 0:
        return 0.0, np.zeros_like(anchors), np.zeros_like(candidates)
    if pair_of.shape != (s,):
        raise DimensionError(f"pair_of has shape {pair_of.shape}, expected ({s},)")
    if pair_of.min() < 0 or pair_of.max() >= candidates.shape[0]:
        raise DimensionError("pair_of indexes outside the candidate set")
    sim = cosine_sim_matrix(anchors, candidates)
    logp = _log_softmax(sim / tau)
    rows = np.arange(s)
    loss = -float(np.mean(logp[rows, pair_of]))
    if not with_grad:
        return loss, None, None
    dlogits = np.exp(logp)
    dlogits[rows, pair_of] -= 1.0
    dsim = dlogits / (s * tau)
    d_anchors, d_candidates = cosine_sim_matrix_backward(dsim, anchors, candidates)
    return loss, d_anchors, d_candidates


def uim_loss(r_user: np.ndarray, r_item: np.ndarray, labels: np.ndarray, tau: float, with_grad: bool = True) -> AuxLoss:
    """User-item match loss ``L_ui + L_iu`` over the positive rows of a batch.

    Positives are anchors; every batch row (positive or negative) is a
    candidate. A batch without positives is skipped with zero loss.
    """
    if r_user.shape != r_item.shape:
        raise DimensionError(f"user reps {r_user.shape} and item reps {r_item.shape} differ")
    pos = np.flatnonzero(np.asarray(labels) == 1)
    if pos.size == 0:
        if tau <= 0:
            raise ConfigError(f"temperature must be positive, got {tau}")
        return AuxLoss(0.0, np.zeros_like(r_user), np.zeros_like(r_item), True)
    l_ui, d_anchor_u, d_cand_i = info_nce_directional(r_user[pos], r_item, pos, tau, with_grad)
    l_iu, d_anchor_i, d_cand_u = info_nce_directional(r_item[pos], r_user, pos, tau, with_grad)
    if not with_grad:
        return AuxLoss(l_ui + l_iu, None, None, False)
    d_user = d_cand_u
    d_item = d_cand_i
    np.add.at(d_user, pos, d_anchor_u)
    np.add.at(d_item, pos, d_anchor_i)
    return AuxLoss(l_ui + l_iu, d_user, d_item, False)


def _masked_nce(logits: np.ndarray, valid: np.ndarray, axis: int, with_grad: bool = True) -> tuple[float, np.ndarray | None]:
    """Summed InfoNCE over stacked ``(K, n, n)`` logits with diagonal positives.

    The softmax runs along ``axis`` (2: rows are anchors, 1: columns are
    anchors). Entry ``i`` of block ``k`` takes part, as anchor or candidate,
    only when ``valid[k, i]``. Returns the summed loss and its gradient
    w.r.t. ``logits``.
    """
    cand = valid[:, None, :] if axis == 2 else valid[:, :, None]
    anchor = valid[:, :, None] if axis == 2 else valid[:, None, :]
    full = bool(valid.all())
    x = logits if full else np.where(cand, logits, -np.inf)
    row_max = x.max(axis=axis, keepdims=True)
    if not full:
        row_max = np.where(np.isfinite(row_max), row_max, 0.0)
    e = np.exp(x - row_max)
    z = e.sum(axis=axis, keepdims=True)
    if not full:
        z = np.where(z > 0.0, z, 1.0)
    diag = np.diagonal(logits, axis1=1, axis2=2)
    log_z = (np.log(z) + row_max).reshape(diag.shape)
    loss = float(np.sum(np.where(valid, log_z - diag, 0.0)))
    if not with_grad:
        return loss, None
    grad = e / z
    if not full:
        grad *= anchor
    k_idx = np.arange(logits.shape[1])
    grad[:, k_idx, k_idx] -= valid
    return loss, grad


def nip_loss(
    prefix: np.ndarray, next_emb: np.ndarray, position_valid: np.ndarray, tau: float, with_grad: bool = True
) -> AuxLoss:
    """Next-item match loss ``L_pi + L_ip``.

    ``prefix`` and ``next_emb`` are ``(n, m-1, d)``; position ``k`` of row ``i``
    takes part only when ``position_valid[i, k]``. Negatives for a position are
    the valid rows of other instances at the same position. Both directions
    average over the valid-position count.
    """
    if tau <= 0:
        raise ConfigError(f"temperature must be positive, got {tau}")
    if prefix.shape != next_emb.shape or prefix.shape[:2] != position_valid.shape:
        raise DimensionError(
            f"NIP shapes disagree: prefix {prefix.shape}, next {next_emb.shape}, mask {position_valid.shape}"
        )
    total = int(position_valid.sum())
    if total == 0:
        return AuxLoss(0.0, np.zeros_like(prefix), np.zeros_like(next_emb), True)
    # positions become the leading (stacked) axis
    R = np.ascontiguousarray(prefix.transpose(1, 0, 2))
    E = np.ascontiguousarray(next_emb.transpose(1, 0, 2))
    valid = np.ascontiguousarray(position_valid.T)
    r_norm = np.maximum(np.linalg.norm(R, axis=2, keepdims=True), COSINE_EPS)
    e_norm = np.maximum(np.linalg.norm(E, axis=2, keepdims=True), COSINE_EPS)
    Rh, Eh = R / r_norm, E / e_norm
    sim = Rh @ Eh.transpose(0, 2, 1)
    logits = sim / tau
    l_pi, g_pi = _masked_nce(logits, valid, 2, with_grad)
    l_ip, g_ip = _masked_nce(logits, valid, 1, with_grad)
    if not with_grad:
        return AuxLoss((l_pi + l_ip) / total, None, None, False)
    dsim = (g_pi + g_ip) / (total * tau)
    dRh = dsim @ Eh
    dEh = dsim.transpose(0, 2, 1) @ Rh

    def unnormalize(dxh, xh, norm):
        # below the guard the normalizer is the constant eps
        radial = np.where(norm > COSINE_EPS, np.sum(dxh * xh, axis=2, keepdims=True), 0.0)
        return (dxh - xh * radial) / norm

    dR = unnormalize(dRh, Rh, r_norm)
    dE = unnormalize(dEh, Eh, e_norm)
    return AuxLoss((l_pi + l_ip) / total, dR.transpose(1, 0, 2), dE.transpose(1, 0, 2), False)


def bce_loss(p: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean binary cross-entropy on probabilities clamped to [eps, 1 - eps].

    The gradient is taken w.r.t. ``p``; clamped entries get zero gradient.
    """
    p = np.asarray(p, dtype=np.float64)
    y = np.asarray(y)
    if p.shape != y.shape:
        raise DimensionError(f"probabilities {p.shape} and labels {y.shape} differ")
    if not ((y == 0) | (y == 1)).all():
        raise LabelError("labels must be 0 or 1")
    y = y.astype(np.float64)
    pc = np.clip(p, PROB_EPS, 1.0 - PROB_EPS)
    n = p.size
    loss = float(np.mean(-y * np.log(pc) - (1.0 - y) * np.log(1.0 - pc)))
    inside = (p >= PROB_EPS) & (p <= 1.0 - PROB_EPS)
    grad = np.where(inside, (-y / pc + (1.0 - y) / (1.0 - pc)) / n, 0.0)
    return loss, grad


def total_loss(l_main: float, l_uim: float, l_nip: float, lambda_uim: float, lambda_nip: float) -> float:
    if lambda_uim < 0 or lambda_nip < 0:
        raise ConfigError(f"loss weights must be non-negative, got {lambda_uim}, {lambda_nip}")
    return l_main + lambda_uim * l_uim + lambda_nip * l_nip
