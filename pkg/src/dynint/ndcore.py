"""Dense kernels and seeded randomness shared by every other module.

Matrices are plain float64 ``numpy.ndarray`` objects in C (row-major) order.
The kernels add shape checking with readable errors on top of numpy and
accept leading batch dimensions where noted.
"""

import numpy as np

DTYPE = np.float64


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested kernel."""


class ConfigurationError(ValueError):
    """A configuration value violates a documented invariant."""


def as_matrix(a):
    """Return ``a`` as a C-contiguous float64 array (no copy when possible)."""
    return np.ascontiguousarray(a, dtype=DTYPE)


def matmul(a, b):
    """Matrix product ``a @ b``; both operands may carry leading batch axes."""
    a = np.asarray(a, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return np.matmul(a, b)


def hadamard(a, b):
    """Elementwise product of two equally shaped arrays."""
    a = np.asarray(a, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    if a.shape != b.shape:
        raise ShapeError(f"hadamard: shapes differ, {a.shape} vs {b.shape}")
    return a * b


def row_scale(v, a):
    """Scale row ``i`` of ``a`` by ``v[i]``, i.e. ``diag(v) @ a`` without the diagonal.

    ``v`` may be batched as ``(..., n)`` against ``a`` of shape ``(..., n, m)``.
    """
    v = np.asarray(v, dtype=DTYPE)
    a = np.asarray(a, dtype=DTYPE)
    if a.ndim < 2 or v.shape[-1] != a.shape[-2]:
        raise ShapeError(f"row_scale: vector {v.shape} does not match rows of {a.shape}")
    return v[..., :, None] * a


def make_rng(seed):
    """Seeded generator; identical seeds give identical streams."""
    return np.random.default_rng(np.random.PCG64(seed))


def spawn_rng(rng, n=1):
    """Independent child generators derived deterministically from ``rng``."""
    seeds = rng.integers(0, 2**63 - 1, size=n, dtype=np.int64)
    return [make_rng(int(s)) for s in seeds]
