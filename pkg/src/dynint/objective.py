"""Losses, orthogonality penalties and evaluation metrics."""

from dataclasses import dataclass

import numpy as np

from .ndcore import DTYPE, ShapeError

PROB_CLIP = 1e-7
NORM_EPS = 1e-12


class UndefinedMetricError(ValueError):
    """AUC requested on a sample that lacks one of the two classes."""


@dataclass(frozen=True)
class LossValue:
    data_loss: float
    orth_penalty: float
    orth_lambda: float

    @property
    def total(self):
        return self.data_loss + self.orth_lambda * self.orth_penalty


@dataclass(frozen=True)
class MetricReport:
    auc: float
    logloss: float
    n: int


def _check_pair(p, y):
    p = np.asarray(p, dtype=DTYPE).ravel()
    y = np.asarray(y, dtype=DTYPE).ravel()
    if p.shape != y.shape:
        raise ShapeError(f"prediction/label length mismatch: {p.shape[0]} vs {y.shape[0]}")
    return p, y


def log_loss(prob, y):
    """Mean negative log-likelihood with probabilities clipped to ``[1e-7, 1-1e-7]``."""
    p, y = _check_pair(prob, y)
    p = np.clip(p, PROB_CLIP, 1.0 - PROB_CLIP)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log1p(-p)))


def log_loss_grad(prob, y):
    """Gradient of :func:`log_loss` w.r.t. the logits: ``(p - y) / N``."""
    p, y = _check_pair(prob, y)
    return (p - y) / p.shape[0]


def cosine_penalty(vectors):
    """Sum over pairs ``p > q`` of ``|cos(vectors[p], vectors[q])|``.

    ``vectors`` has shape ``(..., K, n)``; the leading axes are kept, so the
    result has shape ``vectors.shape[:-2]``.
    """
    M = np.asarray(vectors, dtype=DTYPE)
    cos = _cosines(M)[0]
    K = M.shape[-2]
    lower = np.tril(np.ones((K, K), dtype=bool), k=-1)
    return np.abs(cos[..., lower]).sum(axis=-1)


def _cosines(M):
    raw = np.sqrt(np.einsum("...kn,...kn->...k", M, M))
    # floor rather than offset so rescaling a vector leaves its cosines unchanged
    norms = np.maximum(raw, NORM_EPS)
    gram = np.matmul(M, np.swapaxes(M, -1, -2))
    cos = gram / (norms[..., :, None] * norms[..., None, :])
    return cos, norms, raw


def cosine_penalty_grad(vectors):
    """Gradient of :func:`cosine_penalty` w.r.t. ``vectors`` (same shape)."""
    M = np.asarray(vectors, dtype=DTYPE)
    cos, norms, raw = _cosines(M)
    K = M.shape[-2]
    off = ~np.eye(K, dtype=bool)
    S = np.sign(cos) * off
    # d|cos_pq|/dm_p = s_pq * (m_q / (N_p N_q) - cos_pq * m_p / (|m_p| N_p))
    coef = S / (norms[..., :, None] * norms[..., None, :])
    cross = np.matmul(coef, M)
    live = raw > NORM_EPS
    safe = np.where(live, raw, 1.0)
    self_w = (S * cos).sum(axis=-1) / (safe * norms) * live
    return cross - self_w[..., None] * M


def orth_penalty_dgp(factors):
    """Penalty over static DGP factors; ``factors`` is a list of ``(U, V)`` per layer."""
    total = 0.0
    for U, V in factors:
        total += float(cosine_penalty(np.asarray(U).T)) + float(cosine_penalty(np.asarray(V).T))
    return total


def orth_penalty_dgp_grad(factors):
    return [(cosine_penalty_grad(np.asarray(U).T).T, cosine_penalty_grad(np.asarray(V).T).T)
            for U, V in factors]


def orth_penalty_dwp(generated):
    """Batch-averaged penalty over generated pairs.

    ``generated`` is a list (one per layer) of ``(u, v)`` arrays shaped
    ``(B, K, n)``.  The per-instance sum is divided by ``B``.
    """
    total = 0.0
    for u, v in generated:
        B = u.shape[0]
        total += float(cosine_penalty(u).sum() + cosine_penalty(v).sum()) / B
    return total


def orth_penalty_dwp_grad(generated):
    out = []
    for u, v in generated:
        B = u.shape[0]
        out.append((cosine_penalty_grad(u) / B, cosine_penalty_grad(v) / B))
    return out


def _midranks(x):
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    ranks = np.empty(x.shape[0], dtype=DTYPE)
    # boundaries of runs of equal values
    starts = np.flatnonzero(np.r_[True, xs[1:] != xs[:-1]])
    ends = np.r_[starts[1:], xs.shape[0]]
    mid = 0.5 * (starts + ends - 1) + 1.0
    ranks[order] = np.repeat(mid, ends - starts)
    return ranks


def auc(scores, labels):
    """Mann-Whitney AUC with ties counted as half, via midranks."""
    s, y = _check_pair(scores, labels)
    pos = y == 1
    n_pos = int(pos.sum())
    n_neg = s.shape[0] - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs at least one positive and one negative label")
    r = _midranks(s)
    u = r[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def evaluate_predictions(prob, y):
    p, yy = _check_pair(prob, y)
    return MetricReport(auc=auc(p, yy), logloss=log_loss(p, yy), n=int(p.shape[0]))
