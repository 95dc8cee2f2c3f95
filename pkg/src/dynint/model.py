"""End-to-end network: embeddings, interaction stack, output head and loss."""

from dataclasses import dataclass, field, fields

import numpy as np

from . import embed, layers, objective
from .layers import StackConfig
from .ndcore import DTYPE, ConfigurationError, make_rng


class StaleCacheError(RuntimeError):
    """A forward cache was used after the parameters it depends on changed."""


@dataclass
class TrainConfig:
    """Every tunable of a run; also the schema of the flat config file."""

    variant: str = "pin"
    depth: int = 2
    subspaces: int = 1
    embed_dim: int = 16
    rank: int = 2
    reduction_ratio: int = 4
    gate_mode: str = "vector"
    orth_lambda: float = 0.0
    batch_size: int = 4096
    eval_every: int = 2000
    patience: int = 5
    min_delta: float = 1e-5
    max_epochs: int = 10
    max_steps: int = 0
    seed: int = 0
    init: str = "default"
    w_init_scale: float = 0.01
    frozen: str = ""
    ftrl_start: str = "zero"
    ftrl_alpha: float = 0.05
    ftrl_beta: float = 1.0
    ftrl_l1: float = 0.0
    ftrl_l2: float = 0.0
    gftrl_alpha: float = 0.05
    gftrl_beta: float = 1.0
    gftrl_l1: float = 0.0
    gftrl_l2: float = 0.0
    adam_lr: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        self.validate()

    def validate(self):
        self.stack_config(1)
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if self.eval_every < 1:
            raise ConfigurationError("eval_every must be >= 1")
        if self.patience < 1:
            raise ConfigurationError("patience must be >= 1")
        if self.max_epochs < 1 and self.max_steps < 1:
            raise ConfigurationError("one of max_epochs / max_steps must be positive")
        if self.init not in ("default", "identity"):
            raise ConfigurationError("init must be 'default' or 'identity'")
        if self.ftrl_start not in ("zero", "anchored"):
            raise ConfigurationError("ftrl_start must be 'zero' or 'anchored'")
        if self.orth_lambda < 0:
            raise ConfigurationError("orth_lambda must be >= 0")
        for name in ("ftrl_alpha", "gftrl_alpha", "adam_lr"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be > 0")
        for name in ("ftrl_l1", "ftrl_l2", "gftrl_l1", "gftrl_l2"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be >= 0")

    def stack_config(self, n_fields):
        return StackConfig(variant=self.variant, depth=self.depth, subspaces=self.subspaces,
                           n_fields=n_fields, embed_dim=self.embed_dim, rank=self.rank,
                           reduction_ratio=self.reduction_ratio, gate_mode=self.gate_mode)

    @property
    def frozen_prefixes(self):
        return tuple(p.strip() for p in self.frozen.split(",") if p.strip())

    # -- flat "key = value" text format -------------------------------------

    def to_text(self):
        return "".join(f"{f.name} = {getattr(self, f.name)}\n" for f in fields(self))

    @classmethod
    def from_text(cls, text, overrides=None):
        kinds = {f.name: f.type for f in fields(cls)}
        values = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigurationError(f"config line {lineno}: expected 'key = value'")
            key, val = (s.strip() for s in line.split("=", 1))
            if key not in kinds:
                raise ConfigurationError(f"config line {lineno}: unknown key {key!r}")
            if key in values:
                raise ConfigurationError(f"config line {lineno}: duplicate key {key!r}")
            values[key] = _coerce(key, kinds[key], val)
        for key, val in (overrides or {}).items():
            if key not in kinds:
                raise ConfigurationError(f"unknown config key {key!r}")
            values[key] = _coerce(key, kinds[key], str(val))
        return cls(**values)


def _coerce(key, kind, text):
    kind = kind if isinstance(kind, str) else kind.__name__
    try:
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
    except ValueError:
        raise ConfigurationError(f"config key {key!r}: cannot parse {text!r} as {kind}") from None
    return text


@dataclass
class ForwardResult:
    logit: np.ndarray
    prob: np.ndarray
    X0: np.ndarray
    indices: np.ndarray
    stack_cache: layers.StackCache
    head_cache: dict
    version: int
    XL: np.ndarray = field(repr=False, default=None)


class DynIntModel:
    """Parameters and forward/backward of a full DynInt network.

    Parameters live in ``self.params`` (name -> float64 array):
    ``embed.<f>``, the interaction stack (``pin.W.<l>``, ``dgp.U.<l>``,
    ``dwp.W.<l>``, ``gen.<l>.*``) and the head ``out.W``, ``out.b``.
    """

    def __init__(self, config, cardinalities, rng=None):
        self.config = config
        self.cardinalities = tuple(int(c) for c in cardinalities)
        self.stack = config.stack_config(len(self.cardinalities))
        rng = make_rng(config.seed) if rng is None else rng
        table = embed.EmbeddingTable(self.cardinalities, config.embed_dim, rng)
        self.params = {f"embed.{f}": t for f, t in enumerate(table.tables)}
        self.params.update(layers.init_stack_params(self.stack, rng, config.w_init_scale))
        self.params["out.W"] = np.zeros(self.n_fields, dtype=DTYPE)
        self.params["out.b"] = np.zeros(1, dtype=DTYPE)
        if config.init == "identity":
            self._identity_init()
        self.version = 0

    def _identity_init(self):
        n = self.stack.n_rows
        for name, p in self.params.items():
            if name.startswith(("pin.W.", "dwp.W.")):
                p[...] = np.eye(n)
            elif name.startswith(("dgp.U.", "dgp.V.")):
                if p.shape[1] != n:
                    raise ConfigurationError("identity init for dgp needs rank == F*h")
                p[...] = np.eye(n)
            elif name.startswith("gen.") and name.endswith("out.W"):
                p[...] = 0.0
            elif name.startswith("gen.") and name.endswith("out.b") and self.stack.variant == "dgp":
                p[...] = 1.0

    @property
    def n_fields(self):
        return len(self.cardinalities)

    @property
    def tables(self):
        return [self.params[f"embed.{f}"] for f in range(self.n_fields)]

    def bump_version(self):
        self.version += 1

    # -- forward ---------------------------------------------------------------

    def forward(self, indices, dense=False, counter=None):
        indices = np.asarray(indices, dtype=np.int64)
        X0 = embed.lookup(self.tables, indices)
        return self.forward_from_X0(X0, indices=indices, dense=dense, counter=counter)

    def forward_from_X0(self, X0, gen_input=None, indices=None, dense=False, counter=None):
        XL, scache = layers.stack_forward(X0, self.params, self.stack, gen_input=gen_input,
                                          dense=dense, counter=counter)
        logit, prob, hcache = layers.output_forward(XL, self.params["out.W"], self.params["out.b"])
        return ForwardResult(logit, prob, X0, indices, scache, hcache, self.version, XL)

    def predict_proba(self, indices, batch_size=8192):
        indices = np.asarray(indices, dtype=np.int64)
        out = np.empty(indices.shape[0], dtype=DTYPE)
        for s in range(0, indices.shape[0], batch_size):
            out[s:s + batch_size] = self.forward(indices[s:s + batch_size]).prob
        return out

    # -- loss --------------------------------------------------------------------

    def orth_penalty(self, result):
        cfg = self.stack
        if cfg.variant == "dgp":
            return objective.orth_penalty_dgp(self._dgp_factors())
        if cfg.variant == "dwp":
            return objective.orth_penalty_dwp([(g["u"], g["v"]) for g in result.stack_cache.generated])
        return 0.0

    def _dgp_factors(self):
        return [(self.params[f"dgp.U.{l}"], self.params[f"dgp.V.{l}"])
                for l in range(self.stack.depth)]

    def loss(self, result, y):
        data = objective.log_loss(result.prob, y)
        lam = self.config.orth_lambda
        return objective.LossValue(data, self.orth_penalty(result), lam)

    def backward(self, result, y, dense_embeddings=True):
        """Gradients of the total loss.

        Returns a dict with one entry per parameter plus ``"X0"``.  Embedding
        gradients are dense ``C_f x D`` arrays unless ``dense_embeddings`` is
        false; the training loop uses :meth:`embedding_row_grads` instead.
        """
        if result.version != self.version:
            raise StaleCacheError("forward cache predates the latest parameter update")
        lam = self.config.orth_lambda
        dlogit = objective.log_loss_grad(result.prob, y)
        dXL, dw, db = layers.output_backward(result.head_cache, dlogit, self.params["out.W"])
        gen_up = None
        if lam > 0 and self.stack.variant == "dwp":
            gen = [(g["u"], g["v"]) for g in result.stack_cache.generated]
            gen_up = [{"u": lam * du, "v": lam * dv}
                      for du, dv in objective.orth_penalty_dwp_grad(gen)]
        dX0, grads = layers.stack_backward(result.stack_cache, self.params, dXL, gen_up)
        if lam > 0 and self.stack.variant == "dgp":
            for l, (dU, dV) in enumerate(objective.orth_penalty_dgp_grad(self._dgp_factors())):
                grads[f"dgp.U.{l}"] = grads[f"dgp.U.{l}"] + lam * dU
                grads[f"dgp.V.{l}"] = grads[f"dgp.V.{l}"] + lam * dV
        grads["out.W"] = dw
        grads["out.b"] = db
        grads["X0"] = dX0
        if dense_embeddings and result.indices is not None:
            tables = [np.zeros_like(t) for t in self.tables]
            embed.grad_scatter(tables, result.indices, dX0)
            for f, g in enumerate(tables):
                grads[f"embed.{f}"] = g
        return grads

    def embedding_row_grads(self, indices, dX0):
        """Per field: ``(rows, grad_rows)`` for the rows present in the batch."""
        out = []
        for f in range(self.n_fields):
            rows, inv = np.unique(indices[:, f], return_inverse=True)
            g = np.zeros((rows.shape[0], dX0.shape[-1]), dtype=DTYPE)
            np.add.at(g, inv, dX0[:, f, :])
            out.append((rows, g))
        return out
