"""Named verification suites behind ``dynint verify``.

Every suite is a function returning a list of :class:`Check`; a suite passes
when all of its checks pass.  All randomness is seeded.
"""

from dataclasses import dataclass
from itertools import product

import numpy as np

from . import embed, experiments, layers, objective, oracle
from .model import DynIntModel, TrainConfig
from .ndcore import make_rng

GRAD_TOL = 1e-4
EXACT_TOL = 1e-10


@dataclass
class Check:
    name: str
    passed: bool
    value: float
    threshold: float

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: {self.value:.6g} (threshold {self.threshold:g})"


def _below(name, value, threshold):
    return Check(name, bool(value < threshold), float(value), threshold)


def _above(name, value, threshold):
    return Check(name, bool(value > threshold), float(value), threshold)


# -- grad ---------------------------------------------------------------------------------

GRAD_CASES = [("pin", "vector"), ("da", "vector"), ("da", "full"), ("dgp", "vector"),
              ("dwp", "vector")]


def random_model(variant, subspaces=1, gate_mode="vector", seed=0, n_fields=5, embed_dim=4,
                 depth=2, rank=2, cardinality=3, orth_lambda=0.1):
    """Small model with every parameter drawn at random (no zero-init shortcuts)."""
    cfg = TrainConfig(variant=variant, depth=depth, subspaces=subspaces, embed_dim=embed_dim,
                      rank=rank, reduction_ratio=2, gate_mode=gate_mode,
                      orth_lambda=orth_lambda if variant in ("dgp", "dwp") else 0.0, seed=seed)
    rng = make_rng(seed)
    model = DynIntModel(cfg, (cardinality,) * n_fields, rng=rng)
    for name, p in model.params.items():
        p[...] = rng.normal(0.0, 0.5, size=p.shape)
    return model, rng


def _fd_loss(model, name, X0, gin, y):
    target = model.params[name]

    def fn(x):
        saved = target.copy()
        target[...] = x
        try:
            return model.loss(model.forward_from_X0(X0, gen_input=gin), y).total
        finally:
            target[...] = saved
    return fn


def grad_checks_for(variant, subspaces, gate_mode="vector", seed=0, batch=4):
    """Finite-difference checks of every parameter, ``X0`` and the embedding tables.

    The generator input is frozen at the original ``X0`` while perturbing
    ``X0`` or the tables: the generator path is gradient-blocked by design.
    """
    model, rng = random_model(variant, subspaces, gate_mode, seed)
    idx = np.stack([rng.integers(0, c, size=batch) for c in model.cardinalities], axis=1)
    y = rng.integers(0, 2, size=batch)
    X0 = embed.lookup(model.tables, idx)
    gin = X0.copy()
    result = model.forward_from_X0(X0, gen_input=gin, indices=idx)
    grads = model.backward(result, y)
    tag = f"{variant}/{gate_mode}/h={subspaces}" if variant == "da" else f"{variant}/h={subspaces}"
    checks = []
    for name in sorted(model.params):
        if name.startswith("embed."):
            continue
        fd = oracle.finite_diff(_fd_loss(model, name, X0, gin, y), model.params[name])
        checks.append(_below(f"grad {tag} {name}", oracle.rel_error(grads[name], fd), GRAD_TOL))

    def x0_loss(x):
        return model.loss(model.forward_from_X0(x, gen_input=gin), y).total
    fd = oracle.finite_diff(x0_loss, X0)
    checks.append(_below(f"grad {tag} X0 (generator path blocked)",
                         oracle.rel_error(grads["X0"], fd), GRAD_TOL))
    for f in range(model.n_fields):
        table = model.params[f"embed.{f}"]

        def table_loss(x, f=f, table=table):
            saved = table.copy()
            table[...] = x
            try:
                Xp = embed.lookup(model.tables, idx)
                return model.loss(model.forward_from_X0(Xp, gen_input=gin), y).total
            finally:
                table[...] = saved
        fd = oracle.finite_diff(table_loss, table)
        checks.append(_below(f"grad {tag} embed.{f}", oracle.rel_error(grads[f"embed.{f}"], fd),
                             GRAD_TOL))
    return checks


def _standalone_grad_checks(seed=0):
    rng = make_rng(seed)
    checks = []
    z = rng.normal(0.0, 2.0, size=7)
    y = rng.integers(0, 2, size=7)
    fd = oracle.finite_diff(lambda q: objective.log_loss(layers.sigmoid(q), y), z)
    analytic = objective.log_loss_grad(layers.sigmoid(z), y)
    checks.append(_below("grad log_loss (w.r.t. logits)", oracle.rel_error(analytic, fd),
                         GRAD_TOL))
    factors = [(rng.normal(size=(6, 3)), rng.normal(size=(6, 3))) for _ in range(2)]
    analytic = objective.orth_penalty_dgp_grad(factors)
    for l, (U, V) in enumerate(factors):
        for which, arr, g in (("U", U, analytic[l][0]), ("V", V, analytic[l][1])):
            def fn(x, arr=arr):
                saved = arr.copy()
                arr[...] = x
                try:
                    return objective.orth_penalty_dgp(factors)
                finally:
                    arr[...] = saved
            fd = oracle.finite_diff(fn, arr)
            checks.append(_below(f"grad orth_penalty_dgp {which}.{l}", oracle.rel_error(g, fd),
                                 GRAD_TOL))
    gen = [(rng.normal(size=(3, 2, 5)), rng.normal(size=(3, 2, 5))) for _ in range(2)]
    analytic = objective.orth_penalty_dwp_grad(gen)
    for l, (u, v) in enumerate(gen):
        for which, arr, g in (("u", u, analytic[l][0]), ("v", v, analytic[l][1])):
            def fn(x, arr=arr):
                saved = arr.copy()
                arr[...] = x
                try:
                    return objective.orth_penalty_dwp(gen)
                finally:
                    arr[...] = saved
            fd = oracle.finite_diff(fn, arr)
            checks.append(_below(f"grad orth_penalty_dwp {which}.{l}", oracle.rel_error(g, fd),
                                 GRAD_TOL))
    return checks


def suite_grad():
    checks = []
    for (variant, mode), h in product(GRAD_CASES, (1, 2)):
        checks.extend(grad_checks_for(variant, h, mode, seed=h))
    checks.extend(_standalone_grad_checks())
    return checks


# -- poly ---------------------------------------------------------------------------------

def poly_case(rng):
    F = int(rng.integers(1, oracle.MAX_FIELDS + 1))
    D = int(rng.integers(1, oracle.MAX_DIM + 1))
    L = int(rng.integers(0, oracle.MAX_DEPTH + 1))
    weights = [rng.normal(0.0, 1.0, size=(F, F)) for _ in range(L)]
    X0 = rng.normal(0.0, 1.0, size=(F, D))
    return F, D, L, weights, X0


def suite_poly(n_cases=100, seed=0):
    rng = make_rng(seed)
    worst_err, degree_ok, columns_ok = 0.0, True, True
    for _ in range(n_cases):
        F, D, L, weights, X0 = poly_case(rng)
        polys = oracle.expand_pin(weights, F, D)
        got = oracle.evaluate_expansion(polys, X0)
        worst_err = max(worst_err, float(np.abs(got - layers.pin_forward(X0, weights)).max()))
        degree_ok &= max(p.degree for row in polys for p in row) == L + 1
        columns_ok &= all(k2 == k for row in polys for k, p in enumerate(row)
                          for (_, k2) in p.variables())
    checks = [
        _below("poly expansion == pin_forward (max abs)", worst_err, EXACT_TOL),
        Check("poly max degree == L+1", bool(degree_ok), float(degree_ok), 1),
        Check("poly h=1 columns only cross themselves", bool(columns_ok), float(columns_ok), 1),
    ]
    # subspace stacking with h = D crosses bits of different columns
    F, D = 2, 2
    W = rng.normal(size=(F * D, F * D))
    polys = oracle.expand_pin([W], F, D, h=D)
    crosses = any(len({k for _, k in m}) > 1 for p in polys[0] for m in p.terms)
    X0 = rng.normal(size=(F, D))
    ref = layers.subspace_unstack(
        layers.pin_forward(layers.subspace_stack(X0[None], D), [W]), D, F)[0]
    err = float(np.abs(oracle.evaluate_expansion(polys, X0) - ref).max())
    checks.append(Check("poly h=D expansion crosses columns", bool(crosses), float(crosses), 1))
    checks.append(_below("poly h=D expansion == stacked pin_forward", err, EXACT_TOL))
    return checks


# -- lowrank ------------------------------------------------------------------------------

def suite_lowrank(n_cases=50, seed=0):
    rng = make_rng(seed)
    dgp_err = dwp_err = 0.0
    for _ in range(n_cases):
        B, n, d, K = (int(rng.integers(1, 6)), int(rng.integers(2, 9)), int(rng.integers(1, 5)),
                      int(rng.integers(1, 4)))
        X0 = rng.normal(size=(B, n, d))
        Xp = rng.normal(size=(B, n, d))
        U, V = rng.normal(size=(n, K)), rng.normal(size=(n, K))
        sigma = rng.normal(size=(B, K))
        a, _ = layers.dgp_layer_forward_lowrank(Xp, X0, U, V, sigma)
        b, _ = layers.dgp_layer_forward_dense(Xp, X0, U, V, sigma)
        dgp_err = max(dgp_err, float(np.abs(a - b).max()))
        W = rng.normal(size=(n, n))
        u, v = rng.normal(size=(B, K, n)), rng.normal(size=(B, K, n))
        a, _ = layers.dwp_layer_forward(Xp, X0, W, u, v)
        b, _ = layers.dwp_layer_forward_dense(Xp, X0, W, u, v)
        dwp_err = max(dwp_err, float(np.abs(a - b).max()))
    checks = [_below("lowrank dgp low-rank == dense", dgp_err, EXACT_TOL),
              _below("lowrank dwp vectorized == dense", dwp_err, EXACT_TOL)]
    B, F, K, D = 64, 10, 1, 4
    X0 = rng.normal(size=(B, F, D))
    U, V, sigma = rng.normal(size=(F, K)), rng.normal(size=(F, K)), rng.normal(size=(B, K))
    low, dense = layers.MemoryCounter(), layers.MemoryCounter()
    layers.dgp_layer_forward_lowrank(X0, X0, U, V, sigma, low)
    layers.dgp_layer_forward_dense(X0, X0, U, V, sigma, dense)
    checks.append(Check("lowrank counted elements == B*K + 2FK", low.total == B * K + 2 * F * K,
                        low.total, B * K + 2 * F * K))
    checks.append(Check("lowrank dense counted elements == B*F^2", dense.total == B * F * F,
                        dense.total, B * F * F))
    return checks


# -- sparsity -----------------------------------------------------------------------------

NOISE_ZERO_MIN = 0.8
INFORMATIVE_NONZERO_MIN = 0.8
KERNEL_ZERO_MIN = 0.1


def sparsity_checks(points):
    """One check for the sweep as a whole plus one for kernel zeros.

    Small ``l1`` values may leave noise rows alive; the sweep passes when at
    least one value meets both row thresholds.
    """
    ok = [p.l1 for p in points if p.noise_zero >= NOISE_ZERO_MIN
          and p.informative_nonzero >= INFORMATIVE_NONZERO_MIN]
    best = max(points, key=lambda p: min(p.noise_zero / NOISE_ZERO_MIN,
                                         p.informative_nonzero / INFORMATIVE_NONZERO_MIN))
    label = ",".join(f"{l:g}" for l in ok) or "none"
    checks = [
        Check(f"sparsity noise rows zero (l1 separating: {label})", bool(ok), best.noise_zero,
              NOISE_ZERO_MIN),
        Check(f"sparsity informative rows nonzero at l1={best.l1:g}", bool(ok),
              best.informative_nonzero, INFORMATIVE_NONZERO_MIN),
    ]
    top = max(points, key=lambda p: p.l1)
    checks.append(_above(f"sparsity kernel zeros at l1={top.kernel_l1:g}", top.kernel_zero,
                         KERNEL_ZERO_MIN))
    return checks


def suite_sparsity():
    return sparsity_checks(experiments.sparsity_sweep())


# -- metrics ------------------------------------------------------------------------------

def brute_auc(scores, labels):
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    total = 0.0
    for s in pos:
        total += np.sum(s > neg) + 0.5 * np.sum(s == neg)
    return total / (pos.size * neg.size)


def suite_metrics(n_cases=200, seed=0):
    rng = make_rng(seed)
    worst = 0.0
    for _ in range(n_cases):
        n = int(rng.integers(2, 40))
        scores = rng.integers(0, 5, size=n).astype(float)  # heavy ties
        labels = rng.integers(0, 2, size=n)
        labels[0], labels[1] = 0, 1
        worst = max(worst, abs(objective.auc(scores, labels) - brute_auc(scores, labels)))
    checks = [Check("metrics auc == pair enumeration", worst == 0.0, worst, 0.0)]
    hand = [
        ([0.5], [1], 0.6931471805599453),
        ([0.5, 0.5], [0, 1], 0.6931471805599453),
        ([0.9, 0.1], [1, 0], 0.10536051565782628),
    ]
    err = max(abs(objective.log_loss(np.array(p), np.array(y)) - v) for p, y, v in hand)
    checks.append(_below("metrics log_loss hand cases", err, 1e-9))
    return checks


SUITES = {
    "grad": suite_grad,
    "poly": suite_poly,
    "lowrank": suite_lowrank,
    "sparsity": suite_sparsity,
    "metrics": suite_metrics,
}


def run_suite(name):
    if name not in SUITES:
        raise KeyError(f"unknown suite {name!r}; choose from {sorted(SUITES)}")
    return SUITES[name]()
