"""Finite-difference and brute-force oracles shared by the test modules.

These deliberately avoid the package's own kernels so they stay independent
of the code they check.
"""
import math

import numpy as np

FD_STEP = 1e-4


def numeric_grad(f, x: np.ndarray, step: float = FD_STEP) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. every entry of ``x`` (perturbed in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + step
        fp = f()
        x[idx] = old - step
        fm = f()
        x[idx] = old
        g[idx] = (fp - fm) / (2 * step)
    return g


def max_rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """Largest entrywise |a - n| / max(|a|, |n|, floor)."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))


def cosine(a, b, eps=1e-12):
    na = max(math.sqrt(sum(x * x for x in a)), eps)
    nb = max(math.sqrt(sum(x * x for x in b)), eps)
    return sum(x * y for x, y in zip(a, b)) / (na * nb)


def naive_directional(anchor_rows, cand_rows, pairs, tau):
    total = 0.0
    for k, a in enumerate(anchor_rows):
        num = math.exp(cosine(a, cand_rows[pairs[k]]) / tau)
        den = sum(math.exp(cosine(a, c) / tau) for c in cand_rows)
        total += -math.log(num / den)
    return total / len(anchor_rows)


def naive_uim(r_u, r_i, labels, tau):
    """Double loop over the batch, straight from the symmetric InfoNCE definition."""
    r_u = r_u.tolist()
    r_i = r_i.tolist()
    pos = [k for k, y in enumerate(labels) if y == 1]
    if not pos:
        return 0.0
    l_ui = 0.0
    l_iu = 0.0
    for k in pos:
        l_ui += -math.log(
            math.exp(cosine(r_u[k], r_i[k]) / tau) / sum(math.exp(cosine(r_u[k], r_i[j]) / tau) for j in range(len(r_i)))
        )
        l_iu += -math.log(
            math.exp(cosine(r_i[k], r_u[k]) / tau) / sum(math.exp(cosine(r_i[k], r_u[j]) / tau) for j in range(len(r_u)))
        )
    return l_ui / len(pos) + l_iu / len(pos)


def naive_nip(R, E, valid, tau):
    """Per-(i, k) loop; candidates are the valid rows at the same position."""
    n, K, _ = R.shape
    total = 0
    l_pi = 0.0
    l_ip = 0.0
    for i in range(n):
        for k in range(K):
            if not valid[i, k]:
                continue
            total += 1
            js = [j for j in range(n) if valid[j, k]]
            r, e = R[i, k].tolist(), E[i, k].tolist()
            l_pi += -math.log(math.exp(cosine(r, e) / tau) / sum(math.exp(cosine(r, E[j, k].tolist()) / tau) for j in js))
            l_ip += -math.log(math.exp(cosine(e, r) / tau) / sum(math.exp(cosine(e, R[j, k].tolist()) / tau) for j in js))
    if total == 0:
        return 0.0
    return (l_pi + l_ip) / total


def pairwise_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    wins = 0.0
    for p in pos:
        for q in neg:
            wins += 1.0 if p > q else (0.5 if p == q else 0.0)
    return wins / (len(pos) * len(neg))
