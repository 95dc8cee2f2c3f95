"""scikit-learn style classifier wrapping :class:`~dynint.model.DynIntModel`."""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import train as _train
from .dataio import Dataset, split_indices
from .model import DynIntModel, TrainConfig
from .ndcore import ConfigurationError, make_rng


class DynIntClassifier(ClassifierMixin, BaseEstimator):
    """Binary classifier over integer-encoded categorical fields.

    ``X`` is an ``(n_samples, n_fields)`` integer matrix where column ``f``
    holds an index in ``[0, C_f)``; :class:`~dynint.dataio.CTREncoder`
    produces such matrices from raw CSV columns.

    Parameters
    ----------
    variant : {"pin", "da", "dgp", "dwp"}
        Interaction layer: static polynomial, dynamic gate, generated
        low-rank weights or re-weighted static weights.
    depth : int
        Number of interaction layers; 0 gives logistic regression on summed
        embeddings.
    subspaces : int
        Number of blocks the embedding dimension is split into.
    embed_dim : int
    rank : int
        ``K`` for the dgp/dwp variants.
    cardinalities : sequence of int, optional
        Per-field index ranges.  Defaults to ``max(X[:, f]) + 1`` on the
        training data.
    validation_fraction : float
        Held-out share of the training rows used for early stopping when
        ``fit`` gets no ``eval_set``.
    random_state : int
    """

    def __init__(self, variant="pin", depth=2, subspaces=1, embed_dim=16, rank=2,
                 reduction_ratio=4, gate_mode="vector", orth_lambda=0.0, batch_size=256,
                 eval_every=200, patience=5, min_delta=1e-5, max_epochs=10, max_steps=0,
                 ftrl_alpha=0.05, ftrl_l1=0.0, ftrl_l2=0.0, gftrl_alpha=0.05, gftrl_l1=0.0,
                 gftrl_l2=0.0, adam_lr=1e-3, ftrl_start="zero", cardinalities=None,
                 validation_fraction=0.1, random_state=0):
        self.variant = variant
        self.depth = depth
        self.subspaces = subspaces
        self.embed_dim = embed_dim
        self.rank = rank
        self.reduction_ratio = reduction_ratio
        self.gate_mode = gate_mode
        self.orth_lambda = orth_lambda
        self.batch_size = batch_size
        self.eval_every = eval_every
        self.patience = patience
        self.min_delta = min_delta
        self.max_epochs = max_epochs
        self.max_steps = max_steps
        self.ftrl_alpha = ftrl_alpha
        self.ftrl_l1 = ftrl_l1
        self.ftrl_l2 = ftrl_l2
        self.gftrl_alpha = gftrl_alpha
        self.gftrl_l1 = gftrl_l1
        self.gftrl_l2 = gftrl_l2
        self.adam_lr = adam_lr
        self.ftrl_start = ftrl_start
        self.cardinalities = cardinalities
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    def _config(self):
        return TrainConfig(
            variant=self.variant, depth=self.depth, subspaces=self.subspaces,
            embed_dim=self.embed_dim, rank=self.rank, reduction_ratio=self.reduction_ratio,
            gate_mode=self.gate_mode, orth_lambda=self.orth_lambda, batch_size=self.batch_size,
            eval_every=self.eval_every, patience=self.patience, min_delta=self.min_delta,
            max_epochs=self.max_epochs, max_steps=self.max_steps, seed=self.random_state,
            ftrl_alpha=self.ftrl_alpha, ftrl_l1=self.ftrl_l1, ftrl_l2=self.ftrl_l2,
            gftrl_alpha=self.gftrl_alpha, gftrl_l1=self.gftrl_l1, gftrl_l2=self.gftrl_l2,
            adam_lr=self.adam_lr, ftrl_start=self.ftrl_start)

    def _encode_y(self, y):
        classes = np.unique(y)
        if classes.shape[0] != 2:
            raise ValueError(f"binary labels required, got classes {classes}")
        self.classes_ = classes
        return (y == classes[1]).astype(np.int8)

    def _check_X(self, X):
        X = check_array(X, dtype=np.int64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} fields, model expects {self.n_features_in_}")
        if X.min(initial=0) < 0 or np.any(X.max(axis=0, initial=0) >= self.cardinalities_):
            raise ValueError("field index out of range for the fitted cardinalities")
        return X

    def fit(self, X, y, eval_set=None):
        """Train with FTRL / group FTRL / Adam and early stopping.

        Parameters
        ----------
        X : array-like of int, shape (n_samples, n_fields)
        y : array-like, shape (n_samples,)
            Two distinct label values.
        eval_set : tuple (X_valid, y_valid), optional
            Validation data for early stopping.  Without it a
            ``validation_fraction`` share of ``X`` is held out.

        Returns
        -------
        self
        """
        X, y = check_X_y(X, y, dtype=np.int64)
        y01 = self._encode_y(y)
        self.n_features_in_ = X.shape[1]
        if self.cardinalities is None:
            cards = tuple(int(c) for c in X.max(axis=0) + 1)
            if eval_set is not None:
                Xv = check_array(eval_set[0], dtype=np.int64)
                cards = tuple(max(a, int(b)) for a, b in zip(cards, Xv.max(axis=0) + 1))
        else:
            cards = tuple(int(c) for c in self.cardinalities)
            if len(cards) != X.shape[1]:
                raise ConfigurationError("one cardinality per column required")
        self.cardinalities_ = cards
        cfg = self._config()
        if eval_set is None:
            fr = self.validation_fraction
            if not 0.0 < fr < 1.0:
                raise ConfigurationError("validation_fraction must be in (0, 1)")
            rng = make_rng(self.random_state + 2)
            tr, va = split_indices(X.shape[0], (1.0 - fr, fr), rng)
            train_ds = Dataset(X[tr], y01[tr], cards)
            valid_ds = Dataset(X[va], y01[va], cards)
        else:
            Xv, yv = check_X_y(eval_set[0], eval_set[1], dtype=np.int64)
            train_ds = Dataset(X, y01, cards)
            valid_ds = Dataset(Xv, (yv == self.classes_[1]).astype(np.int8), cards)
        self.model_ = DynIntModel(cfg, cards)
        self.run_state_ = _train.fit(self.model_, train_ds, valid_ds)
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        p = self.model_.predict_proba(self._check_X(X))
        return np.column_stack([1.0 - p, p])

    def decision_function(self, X):
        check_is_fitted(self, "model_")
        X = self._check_X(X)
        return np.concatenate([self.model_.forward(X[s:s + 8192]).logit
                               for s in range(0, X.shape[0], 8192)])

    def predict(self, X):
        return self.classes_[(self.predict_proba(X)[:, 1] > 0.5).astype(int)]
