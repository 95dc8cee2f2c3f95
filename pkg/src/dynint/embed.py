"""Per-field embedding tables and their adjoint (gradient scatter)."""

import numpy as np

from .ndcore import DTYPE, ShapeError


class EmbeddingIndexError(IndexError):
    """An index is outside its field's vocabulary."""


class EmbeddingTable:
    """One ``C_f x D`` matrix per field; rows are the group-lasso groups.

    Parameters
    ----------
    cardinalities : sequence of int
        Vocabulary size of each field, OOV row included.
    dim : int
        Shared embedding size ``D``.
    rng : numpy.random.Generator, optional
        When given, entries are drawn i.i.d. from ``N(0, 1/sqrt(D))``;
        otherwise the table starts at zero.
    """

    def __init__(self, cardinalities, dim, rng=None):
        self.cardinalities = tuple(int(c) for c in cardinalities)
        self.dim = int(dim)
        scale = 1.0 / np.sqrt(self.dim)
        self.tables = [
            rng.normal(0.0, scale, size=(c, self.dim)) if rng is not None
            else np.zeros((c, self.dim), dtype=DTYPE)
            for c in self.cardinalities
        ]

    @property
    def n_fields(self):
        return len(self.tables)

    def lookup(self, indices):
        return lookup(self.tables, indices)


def _check_indices(tables, indices):
    indices = np.asarray(indices)
    if indices.shape[-1] != len(tables):
        raise ShapeError(f"expected {len(tables)} field indices, got shape {indices.shape}")
    for f, t in enumerate(tables):
        col = indices[..., f]
        if col.size and (col.min() < 0 or col.max() >= t.shape[0]):
            bad = int(col.max() if col.max() >= t.shape[0] else col.min())
            raise EmbeddingIndexError(f"field {f}: index {bad} out of range [0, {t.shape[0]})")
    return indices


def lookup(tables, indices):
    """Gather field rows into a feature map.

    ``indices`` of shape ``(F,)`` gives an ``F x D`` map; ``(B, F)`` gives
    ``B x F x D``.
    """
    indices = _check_indices(tables, indices)
    return np.stack([t[indices[..., f]] for f, t in enumerate(tables)], axis=-2)


def grad_scatter(grads, indices, upstream):
    """Accumulate ``upstream`` rows into per-field gradient tables in place.

    Repeated indices add up.  ``grads`` is a list of arrays shaped like the
    tables; it is returned for convenience.
    """
    indices = np.asarray(indices)
    upstream = np.asarray(upstream, dtype=DTYPE)
    if upstream.shape[:-1] != indices.shape:
        raise ShapeError(f"upstream {upstream.shape} does not match indices {indices.shape}")
    idx2 = indices.reshape(-1, indices.shape[-1])
    up2 = upstream.reshape(-1, indices.shape[-1], upstream.shape[-1])
    for f, g in enumerate(grads):
        np.add.at(g, idx2[:, f], up2[:, f, :])
    return grads


def touched_rows(indices, n_fields):
    """Sorted unique row ids per field that appear in a batch."""
    indices = np.asarray(indices).reshape(-1, n_fields)
    return [np.unique(indices[:, f]) for f in range(n_fields)]


def group_norms(tables):
    """L2 norm of every embedding row, one vector per field."""
    return [np.sqrt(np.einsum("ij,ij->i", t, t)) for t in tables]
