"""Independent reference computations used to check the fast paths.

Nothing here shares code with :mod:`dynint.layers`: the polynomial expansion
is symbolic, gradients come from central differences, and the synthetic
generators expose their true click probabilities so the best achievable AUC
is known.
"""

from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .ndcore import DTYPE, ConfigurationError
from .objective import auc

MAX_FIELDS, MAX_DIM, MAX_DEPTH = 4, 3, 3


class ExpansionTooLarge(ConfigurationError):
    pass


# -- finite differences ---------------------------------------------------------

def finite_diff(fn, params, step=1e-5):
    """Central-difference gradient of scalar ``fn`` at array ``params``."""
    x = np.array(params, dtype=DTYPE)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = fn(x)
        flat[i] = orig - step
        down = fn(x)
        flat[i] = orig
        if not (np.isfinite(up) and np.isfinite(down)):
            raise FloatingPointError(f"non-finite function value at coordinate {i}")
        g[i] = (up - down) / (2.0 * step)
    return grad


def rel_error(a, b):
    """``max|a - b| / max(max|a|, max|b|, 1e-8)`` over whole arrays."""
    a = np.asarray(a, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    denom = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), 1e-8)
    return float(np.abs(a - b).max(initial=0.0) / denom)


# -- symbolic polynomials ---------------------------------------------------------

class Polynomial:
    """Sparse polynomial over variables ``(field, bit)``.

    A monomial is a sorted tuple of variables with repetition, so
    ``((0, 0), (0, 0), (1, 0))`` is ``x_00^2 * x_10``.
    """

    def __init__(self, terms=None):
        self.terms = {}
        for mono, c in (terms or {}).items():
            if c != 0.0:
                self.terms[tuple(sorted(mono))] = float(c)

    @classmethod
    def variable(cls, var):
        return cls({(var,): 1.0})

    @classmethod
    def constant(cls, c):
        return cls({(): c})

    def __add__(self, other):
        out = defaultdict(float, self.terms)
        for m, c in other.terms.items():
            out[m] += c
        return Polynomial(out)

    def __mul__(self, other):
        if not isinstance(other, Polynomial):
            return Polynomial({m: c * other for m, c in self.terms.items()})
        out = defaultdict(float)
        for m1, c1 in self.terms.items():
            for m2, c2 in other.terms.items():
                out[tuple(sorted(m1 + m2))] += c1 * c2
        return Polynomial(out)

    __rmul__ = __mul__

    @property
    def degree(self):
        return max((len(m) for m in self.terms), default=0)

    def variables(self):
        return {v for m in self.terms for v in m}

    def evaluate(self, X0):
        X0 = np.asarray(X0, dtype=DTYPE)
        total = 0.0
        for m, c in self.terms.items():
            term = c
            for f, k in m:
                term *= X0[f, k]
            total += term
        return total

    def __len__(self):
        return len(self.terms)

    def __repr__(self):
        return f"Polynomial({len(self.terms)} terms, degree {self.degree})"


def expand_pin(weights, F, D, h=1):
    """Symbolic output of a static PIN stack, one polynomial per ``(field, bit)``.

    ``weights`` are the ``(F*h) x (F*h)`` layer matrices.  The expansion is
    built by literally multiplying out ``X_l = X_{l-1} * (W X_0 + 1)`` on
    polynomials, then mapping stacked coordinates back to ``(field, bit)``.
    """
    L = len(weights)
    if F > MAX_FIELDS or D > MAX_DIM or L > MAX_DEPTH:
        raise ExpansionTooLarge(
            f"expansion limited to F<={MAX_FIELDS}, D<={MAX_DIM}, L<={MAX_DEPTH}; "
            f"got F={F}, D={D}, L={L}")
    if D % h:
        raise ConfigurationError(f"h={h} must divide D={D}")
    d = D // h
    n = F * h
    # stacked row j*F + f, column c  <->  original field f, bit j*d + c
    coord = {(j * F + f, c): (f, j * d + c) for j in range(h) for f in range(F) for c in range(d)}
    X0s = [[Polynomial.variable(coord[(r, c)]) for c in range(d)] for r in range(n)]
    X = [row[:] for row in X0s]
    one = Polynomial.constant(1.0)
    for W in weights:
        W = np.asarray(W, dtype=DTYPE)
        if W.shape != (n, n):
            raise ConfigurationError(f"weight shape {W.shape} != ({n}, {n})")
        new = []
        for r in range(n):
            row = []
            for c in range(d):
                agg = Polynomial()
                for s in range(n):
                    if W[r, s] != 0.0:
                        agg = agg + W[r, s] * X0s[s][c]
                row.append(X[r][c] * (agg + one))
            new.append(row)
        X = new
    out = [[None] * D for _ in range(F)]
    for (r, c), (f, k) in coord.items():
        out[f][k] = X[r][c]
    return out


def evaluate_expansion(polys, X0):
    return np.array([[p.evaluate(X0) for p in row] for row in polys])


# -- synthetic data -----------------------------------------------------------------

@dataclass
class SyntheticSpec:
    """Known-probability click generator over categorical fields.

    Every value ``v`` of field ``f`` has a latent score ``scores[f][v]``.
    The click logit is::

        bias + sum_i linear[i] z_i + sum_{i<=j} coef[c][i, j] z_i z_j

    where ``c`` is the value of ``context_field`` (or 0 without one).
    """

    cardinalities: tuple
    scores: list
    coef: np.ndarray
    bias: float = 0.0
    linear: np.ndarray = None
    context_field: int = None

    def __post_init__(self):
        self.coef = np.asarray(self.coef, dtype=DTYPE)
        if self.coef.ndim == 2:
            self.coef = self.coef[None]
        self.coef = np.triu(self.coef)
        F = len(self.cardinalities)
        if self.linear is None:
            self.linear = np.zeros(F)
        self.linear = np.asarray(self.linear, dtype=DTYPE)

    @property
    def n_fields(self):
        return len(self.cardinalities)

    def latent(self, X):
        X = np.asarray(X)
        return np.stack([self.scores[f][X[:, f]] for f in range(self.n_fields)], axis=1)

    def logit(self, X):
        X = np.asarray(X)
        z = self.latent(X)
        ctx = X[:, self.context_field] if self.context_field is not None else np.zeros(len(X), int)
        quad = np.einsum("bi,bij,bj->b", z, self.coef[ctx], z)
        return self.bias + z @ self.linear + quad

    def prob(self, X):
        return 1.0 / (1.0 + np.exp(-self.logit(X)))

    def sample(self, n, rng):
        X = np.stack([rng.integers(0, c, size=n) for c in self.cardinalities], axis=1)
        p = self.prob(X)
        y = (rng.random(n) < p).astype(np.int8)
        return X, y, p


def make_interaction_spec(rng, n_fields=6, cardinality=12, strength=1.0, linear=0.0,
                          bias=0.0):
    """Degree-2 generator with random pairwise coefficients on all fields."""
    scores = [rng.normal(0.0, 1.0, size=cardinality) for _ in range(n_fields)]
    coef = np.triu(rng.normal(0.0, strength, size=(n_fields, n_fields)))
    lin = rng.normal(0.0, linear, size=n_fields) if linear else None
    return SyntheticSpec((cardinality,) * n_fields, scores, coef, bias, lin)


def make_sparsity_spec(rng, n_informative=6, n_noise=6, cardinality=20, strength=0.8,
                       linear=1.0):
    """Informative fields carry main and pairwise effects; noise fields carry none."""
    F = n_informative + n_noise
    scores = [rng.normal(0.0, 1.0, size=cardinality) for _ in range(F)]
    coef = np.zeros((F, F))
    coef[:n_informative, :n_informative] = np.triu(
        rng.normal(0.0, strength, size=(n_informative, n_informative)), k=1)
    lin = np.zeros(F)
    lin[:n_informative] = rng.choice([-1.0, 1.0], size=n_informative) * linear
    return SyntheticSpec((cardinality,) * F, scores, coef, 0.0, lin)


def make_context_switch_spec(rng, n_fields=5, cardinality=10, strength=1.5, linear=0.5):
    """Field 0 is a binary context that flips the sign of every pairwise effect."""
    F = n_fields
    scores = [np.zeros(2)] + [rng.normal(0.0, 1.0, size=cardinality) for _ in range(F - 1)]
    base = np.zeros((F, F))
    base[1:, 1:] = np.triu(rng.normal(0.0, strength, size=(F - 1, F - 1)), k=1)
    coef = np.stack([base, -base])
    lin = np.zeros(F)
    lin[1:] = rng.normal(0.0, linear, size=F - 1)
    return SyntheticSpec((2,) + (cardinality,) * (F - 1), scores, coef, 0.0, lin, context_field=0)


def bayes_auc(spec, X, y):
    """AUC of the true click probabilities against sampled labels."""
    return auc(spec.prob(X), y)
