"""Fixed-seed synthetic experiments shared by the verify suites and acceptance tests.

Each function builds its data from :mod:`dynint.oracle`, trains through the
normal :func:`dynint.train.fit` loop and returns plain numbers.  Seeds and
hyper-parameters are frozen here so results are reproducible bit for bit.
"""

from dataclasses import dataclass, field

import numpy as np

from . import oracle, train
from .dataio import Dataset
from .model import DynIntModel, TrainConfig
from .ndcore import make_rng

# synthetic data is small and well-conditioned; larger steps than the
# production defaults converge within a few epochs
SYNTH_TRAIN = dict(embed_dim=8, batch_size=256, eval_every=200, max_epochs=30,
                   w_init_scale=0.1, ftrl_alpha=0.5, gftrl_alpha=0.5)


def _three_way(X, y, cards, n_train, n_valid):
    a, b = n_train, n_train + n_valid
    return (Dataset(X[:a], y[:a], cards), Dataset(X[a:b], y[a:b], cards),
            Dataset(X[b:], y[b:], cards))


def _run(cards, tr, va, **overrides):
    kw = dict(SYNTH_TRAIN)
    kw.update(overrides)
    model = DynIntModel(TrainConfig(**kw), cards)
    opts = train.make_optimizers(model)
    state = train.fit(model, tr, va, optimizers=opts)
    return model, opts, state


# -- recovery of a degree-2 generator -------------------------------------------------

@dataclass
class RecoveryResult:
    bayes_auc: float
    pin_auc: float
    shallow_auc: float


def synthetic_recovery(seed=7, n_train=50000, n_valid=10000, n_test=10000):
    """2-layer PIN and a depth-0 model against the Bayes AUC of the generator."""
    rng = make_rng(seed)
    spec = oracle.make_interaction_spec(rng, n_fields=6, cardinality=12, strength=1.0)
    X, y, _ = spec.sample(n_train + n_valid + n_test, rng)
    tr, va, te = _three_way(X, y, spec.cardinalities, n_train, n_valid)
    out = {}
    for depth in (2, 0):
        model, _, _ = _run(spec.cardinalities, tr, va, variant="pin", depth=depth,
                           ftrl_start="anchored")
        out[depth] = train.evaluate(model, te).auc
    return RecoveryResult(oracle.bayes_auc(spec, te.X, te.y), out[2], out[0])


# -- group-lasso sparsity -----------------------------------------------------------------

SPARSITY_L1 = (0.02, 0.04, 0.06)
KERNEL_L1_RATIO = 0.1


@dataclass
class SparsityPoint:
    l1: float
    kernel_l1: float
    noise_zero: float
    informative_nonzero: float
    kernel_zero: float
    test_auc: float


def _row_fractions(model, touched, fields, zero):
    fracs = []
    for f in fields:
        rows = touched[f]
        norms = np.linalg.norm(model.tables[f][rows], axis=1)
        fracs.append(np.mean(norms == 0.0) if zero else np.mean(norms > 0.0))
    return float(np.mean(fracs))


def sparsity_sweep(seed=11, n_rows=20000, l1_values=SPARSITY_L1, n_informative=6):
    """Row sparsity of G-FTRL and element sparsity of FTRL over an ``l1`` sweep.

    Fractions are over embedding rows that occur in the training split (rows
    never touched keep their initial values and carry no information).
    """
    rng = make_rng(seed)
    spec = oracle.make_sparsity_spec(rng, n_informative=n_informative)
    X, y, _ = spec.sample(n_rows, rng)
    n_train, n_valid = int(0.7 * n_rows), int(0.1 * n_rows)
    tr, va, te = _three_way(X, y, spec.cardinalities, n_train, n_valid)
    F = spec.n_fields
    touched = [np.unique(tr.X[:, f]) for f in range(F)]
    points = []
    for lam in l1_values:
        klam = lam * KERNEL_L1_RATIO
        model, _, _ = _run(spec.cardinalities, tr, va, variant="pin", depth=2, max_epochs=15,
                           gftrl_l1=lam, ftrl_l1=klam, eval_every=100)
        kernels = np.concatenate([model.params[f"pin.W.{l}"].ravel() for l in range(2)])
        points.append(SparsityPoint(
            l1=lam, kernel_l1=klam,
            noise_zero=_row_fractions(model, touched, range(n_informative, F), True),
            informative_nonzero=_row_fractions(model, touched, range(n_informative), False),
            kernel_zero=float(np.mean(kernels == 0.0)),
            test_auc=train.evaluate(model, te).auc))
    return points


# -- context-switching interactions -------------------------------------------------------

@dataclass
class ContextResult:
    bayes_auc: float
    aucs: dict = field(default_factory=dict)  # variant -> list over seeds

    def mean(self, variant):
        return float(np.mean(self.aucs[variant]))

    def margin(self, variant):
        return self.mean(variant) - self.mean("pin")

    def noise_band(self, variant):
        """Three standard deviations of the per-seed AUC, the larger of the two models."""
        return 3.0 * max(float(np.std(self.aucs[variant])), float(np.std(self.aucs["pin"])))


def context_switch(seed=5, model_seeds=(0, 1, 2, 3, 4), n_rows=40000, depth=1,
                   variants=("pin", "da", "dgp", "dwp")):
    """Static PIN against the dynamic variants on context-flipped interactions."""
    rng = make_rng(seed)
    spec = oracle.make_context_switch_spec(rng)
    X, y, _ = spec.sample(n_rows, rng)
    n_train, n_valid = int(0.7 * n_rows), int(0.1 * n_rows)
    tr, va, te = _three_way(X, y, spec.cardinalities, n_train, n_valid)
    res = ContextResult(oracle.bayes_auc(spec, te.X, te.y))
    for v in variants:
        res.aucs[v] = []
        for s in model_seeds:
            model, _, _ = _run(spec.cardinalities, tr, va, variant=v, depth=depth, rank=2,
                               max_epochs=20, seed=s, ftrl_start="anchored", adam_lr=0.01)
            res.aucs[v].append(train.evaluate(model, te).auc)
    return res
