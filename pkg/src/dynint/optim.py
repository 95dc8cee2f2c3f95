"""Per-coordinate optimizers: FTRL-Proximal, group-lasso FTRL and Adam.

Each optimizer owns its state arrays and updates the weight array it was
constructed with *in place*, so model parameter dicts stay valid across steps.

The FTRL accumulators start at ``z = 0, n = 0`` whatever the initial
weights are.  A non-zero initialization therefore only enters through the
``sigma * w`` term of the first update of each coordinate (or row); after
that the weights are the closed-form function of ``(z, n)``.  With
``anchored=True`` the start is instead ``z = -(beta/alpha + l2) w0``, the
value whose unthresholded reconstruction is ``w0``; the initial point then
acts like an earlier quadratic anchor (and ``l1`` must overcome it).
"""

import numpy as np

from .ndcore import DTYPE, ShapeError


class NonFiniteGradientError(FloatingPointError):
    """A gradient contained NaN or Inf; training must stop."""


def _check_grad(name, g, shape):
    g = np.asarray(g, dtype=DTYPE)
    if g.shape != shape:
        raise ShapeError(f"{name}: gradient shape {g.shape} != parameter shape {shape}")
    if not np.all(np.isfinite(g)):
        raise NonFiniteGradientError(f"{name}: non-finite gradient")
    return g


def ftrl_step(z, n, w, g, alpha, beta, l1, l2):
    """One FTRL-Proximal update; returns new ``(z, n, w)`` arrays."""
    n_new = n + g * g
    sigma = (np.sqrt(n_new) - np.sqrt(n)) / alpha
    z_new = z + g - sigma * w
    denom = (beta + np.sqrt(n_new)) / alpha + l2
    w_new = np.where(np.abs(z_new) <= l1, 0.0, -(z_new - np.sign(z_new) * l1) / denom)
    return z_new, n_new, w_new


def gftrl_step(z, n, w, g, alpha, beta, l1, l2):
    """Group-lasso FTRL on rows: ``z, w, g`` are ``(R, D)``, ``n`` is ``(R,)``."""
    gsq = np.einsum("ij,ij->i", g, g)
    n_new = n + gsq
    sigma = (np.sqrt(n_new) - np.sqrt(n)) / alpha
    z_new = z + g - sigma[:, None] * w
    znorm = np.sqrt(np.einsum("ij,ij->i", z_new, z_new))
    denom = (beta + np.sqrt(n_new)) / alpha + l2
    keep = znorm > l1
    shrink = np.zeros_like(znorm)
    shrink[keep] = (1.0 - l1 / znorm[keep]) / denom[keep]
    w_new = -shrink[:, None] * z_new
    return z_new, n_new, w_new


class Ftrl:
    """Element-wise FTRL-Proximal over one parameter array."""

    def __init__(self, weights, alpha=0.05, beta=1.0, l1=0.0, l2=0.0, name="param",
                 anchored=False):
        self.weights = weights
        self.alpha, self.beta, self.l1, self.l2 = alpha, beta, l1, l2
        self.name = name
        self.z = -weights * (beta / alpha + l2) if anchored else np.zeros_like(weights)
        self.n = np.zeros_like(weights)

    def step(self, grad):
        g = _check_grad(self.name, grad, self.weights.shape)
        self.z, self.n, w = ftrl_step(self.z, self.n, self.weights, g,
                                      self.alpha, self.beta, self.l1, self.l2)
        self.weights[...] = w
        return self.weights

    def state(self):
        return {"z": self.z, "n": self.n}

    def load_state(self, state):
        self.z = np.array(state["z"], dtype=DTYPE)
        self.n = np.array(state["n"], dtype=DTYPE)


class GroupFtrl:
    """Row-wise (group-lasso) FTRL over a ``(rows, D)`` table.

    Only the rows passed to :meth:`step` are touched; rows absent from a batch
    keep their weights and accumulators exactly.
    """

    def __init__(self, table, alpha=0.05, beta=1.0, l1=0.0, l2=0.0, name="table",
                 anchored=False):
        self.weights = table
        self.alpha, self.beta, self.l1, self.l2 = alpha, beta, l1, l2
        self.name = name
        self.z = -table * (beta / alpha + l2) if anchored else np.zeros_like(table)
        self.n = np.zeros(table.shape[0], dtype=DTYPE)

    def step(self, rows, grad_rows):
        rows = np.asarray(rows, dtype=np.int64)
        g = _check_grad(self.name, grad_rows, (rows.shape[0], self.weights.shape[1]))
        z, n, w = gftrl_step(self.z[rows], self.n[rows], self.weights[rows], g,
                             self.alpha, self.beta, self.l1, self.l2)
        self.z[rows] = z
        self.n[rows] = n
        self.weights[rows] = w
        return self.weights

    def state(self):
        return {"z": self.z, "n": self.n}

    def load_state(self, state):
        self.z = np.array(state["z"], dtype=DTYPE)
        self.n = np.array(state["n"], dtype=DTYPE)


class Adam:
    """Bias-corrected adaptive moments over one parameter array."""

    def __init__(self, weights, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, name="param"):
        self.weights = weights
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.name = name
        self.m = np.zeros_like(weights)
        self.v = np.zeros_like(weights)
        self.t = 0

    def step(self, grad):
        g = _check_grad(self.name, grad, self.weights.shape)
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * g
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * g * g
        m_hat = self.m / (1.0 - self.beta1 ** self.t)
        v_hat = self.v / (1.0 - self.beta2 ** self.t)
        self.weights -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        return self.weights

    def state(self):
        return {"m": self.m, "v": self.v, "t": np.array([self.t], dtype=DTYPE)}

    def load_state(self, state):
        self.m = np.array(state["m"], dtype=DTYPE)
        self.v = np.array(state["v"], dtype=DTYPE)
        self.t = int(np.asarray(state["t"]).ravel()[0])
