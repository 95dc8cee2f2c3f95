"""Interaction layers with hand-derived backward passes.

All arrays are batched: a feature map is ``(B, n, d)`` where ``n = F*h`` and
``d = D/h`` after subspace stacking.  Every layer has the residual form::

    X_l = X_{l-1} * A_l + X_{l-1}

and the variants differ only in how the aggregation ``A_l`` is built from the
(stacked) input map ``X0``:

* ``pin``: ``A = W @ X0``
* ``da``:  ``A = (W @ X0) * gate`` with ``gate = 2 * sigmoid(gen(X0))``
* ``dgp``: ``A = U @ diag(sigma) @ V.T @ X0`` with ``sigma = gen(X0)``
* ``dwp``: ``A = sum_p diag(u_p) @ W @ diag(v_p) @ X0`` with ``(u, v) = gen(X0) + 1/K``

Generators read a flattened, gradient-blocked copy of the unstacked ``X0``.
"""

from dataclasses import dataclass, field

import numpy as np

from .ndcore import DTYPE, ConfigurationError, ShapeError

VARIANTS = ("pin", "da", "dgp", "dwp")


# -- subspace crossing ------------------------------------------------------------

def subspace_stack(X, h):
    """Split the embedding axis into ``h`` blocks and stack them along fields.

    ``(..., F, D) -> (..., F*h, D/h)``; block ``j`` occupies rows
    ``j*F .. (j+1)*F - 1`` and holds columns ``j*D/h .. (j+1)*D/h - 1``.
    """
    X = np.asarray(X, dtype=DTYPE)
    F, D = X.shape[-2:]
    if h < 1 or D % h:
        raise ConfigurationError(f"subspace count h={h} must divide embedding size D={D}")
    d = D // h
    lead = X.shape[:-2]
    out = X.reshape(lead + (F, h, d))
    out = np.swapaxes(out, -3, -2)
    return np.ascontiguousarray(out.reshape(lead + (h * F, d)))


def subspace_unstack(Xs, h, F):
    """Exact inverse of :func:`subspace_stack`."""
    Xs = np.asarray(Xs, dtype=DTYPE)
    n, d = Xs.shape[-2:]
    if n != F * h:
        raise ShapeError(f"stacked map has {n} rows, expected F*h = {F * h}")
    lead = Xs.shape[:-2]
    out = Xs.reshape(lead + (h, F, d))
    out = np.swapaxes(out, -3, -2)
    return np.ascontiguousarray(out.reshape(lead + (F, h * d)))


# -- generator networks -----------------------------------------------------------

def sigmoid(z):
    z = np.asarray(z, dtype=DTYPE)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


GATE, IDENTITY, SHIFT = "gate", "identity", "shift"


@dataclass
class GeneratorNet:
    """Two dense layers ``in -> in/r -> out`` with a relu hidden layer.

    ``kind`` selects the output transform: ``"gate"`` is ``2*sigmoid``,
    ``"identity"`` passes through, ``"shift"`` adds ``shift`` (``1/K``).
    """

    hidden_W: np.ndarray
    hidden_b: np.ndarray
    out_W: np.ndarray
    out_b: np.ndarray
    kind: str = IDENTITY
    shift: float = 0.0

    @classmethod
    def init(cls, in_dim, out_dim, reduction_ratio, kind, rng, shift=0.0):
        if reduction_ratio < 1:
            raise ConfigurationError("reduction ratio must be >= 1")
        hid = max(1, in_dim // reduction_ratio)
        return cls(
            hidden_W=rng.normal(0.0, 1.0 / np.sqrt(in_dim), size=(hid, in_dim)),
            hidden_b=np.zeros(hid, dtype=DTYPE),
            out_W=np.zeros((out_dim, hid), dtype=DTYPE),
            out_b=np.zeros(out_dim, dtype=DTYPE),
            kind=kind,
            shift=shift,
        )

    def params(self):
        return {"hidden.W": self.hidden_W, "hidden.b": self.hidden_b,
                "out.W": self.out_W, "out.b": self.out_b}


def generator_forward(x, net):
    """Run ``net`` on flattened inputs ``x`` of shape ``(B, F*D)``.

    ``x`` is a constant: :func:`generator_backward` never returns a gradient
    for it.
    """
    x = np.asarray(x, dtype=DTYPE)
    if x.shape[-1] != net.hidden_W.shape[1]:
        raise ShapeError(f"generator expects inputs of width {net.hidden_W.shape[1]}, got {x.shape}")
    pre = x @ net.hidden_W.T + net.hidden_b
    hid = np.maximum(pre, 0.0)
    z = hid @ net.out_W.T + net.out_b
    if net.kind == GATE:
        s = sigmoid(z)
        out = 2.0 * s
    elif net.kind == SHIFT:
        s = None
        out = z + net.shift
    else:
        s = None
        out = z
    return out, {"x": x, "pre": pre, "hid": hid, "s": s, "net": net}


def generator_backward(cache, d_out):
    """Gradients for the generator's own weights only."""
    net = cache["net"]
    dz = np.asarray(d_out, dtype=DTYPE)
    if net.kind == GATE:
        s = cache["s"]
        dz = dz * 2.0 * s * (1.0 - s)
    dhid = dz @ net.out_W
    dpre = dhid * (cache["pre"] > 0)
    return {
        "out.W": dz.T @ cache["hid"],
        "out.b": dz.sum(axis=0),
        "hidden.W": dpre.T @ cache["x"],
        "hidden.b": dpre.sum(axis=0),
    }


# -- single interaction layers --------------------------------------------------------

def _residual(X_prev, A):
    return X_prev * A + X_prev


def pin_layer_forward(X_prev, X0, W):
    W = np.asarray(W, dtype=DTYPE)
    n = X0.shape[-2]
    if W.shape != (n, n) or X_prev.shape != X0.shape:
        raise ShapeError(f"PIN layer: W {W.shape}, X_prev {X_prev.shape}, X0 {X0.shape}")
    A = np.matmul(W, X0)
    return _residual(X_prev, A), {"X_prev": X_prev, "A": A}


def pin_layer_backward(cache, G, X0, W):
    dX_prev = G * (cache["A"] + 1.0)
    dA = G * cache["X_prev"]
    dW = np.einsum("bid,bjd->ij", dA, X0)
    dX0 = np.matmul(W.T, dA)
    return dX_prev, dX0, dW


def da_layer_forward(X_prev, X0, W, gate):
    """Gated interaction; ``gate`` is ``(B, n)`` (per row) or ``(B, n, d)``."""
    W = np.asarray(W, dtype=DTYPE)
    n = X0.shape[-2]
    if W.shape != (n, n) or X_prev.shape != X0.shape:
        raise ShapeError(f"DA layer: W {W.shape}, X_prev {X_prev.shape}, X0 {X0.shape}")
    g = gate[..., None] if gate.ndim == 2 else gate
    A = np.matmul(W, X0)
    inter = X_prev * A
    return inter * g + X_prev, {"X_prev": X_prev, "A": A, "inter": inter, "g": g,
                                "vector_gate": gate.ndim == 2}


def da_layer_backward(cache, G, X0, W):
    g = cache["g"]
    dX_prev = G * (cache["A"] * g + 1.0)
    dA = G * cache["X_prev"] * g
    dgate = G * cache["inter"]
    if cache["vector_gate"]:
        dgate = dgate.sum(axis=-1)
    dW = np.einsum("bid,bjd->ij", dA, X0)
    dX0 = np.matmul(W.T, dA)
    return dX_prev, dX0, dW, dgate


class MemoryCounter:
    """Tally of array elements held to represent per-instance weights."""

    def __init__(self):
        self.records = []

    def record(self, name, array):
        self.records.append((name, int(np.size(array))))

    @property
    def total(self):
        return sum(n for _, n in self.records)

    def by_name(self):
        out = {}
        for name, n in self.records:
            out[name] = out.get(name, 0) + n
        return out


def _check_dgp(X_prev, X0, U, V, sigma):
    n = X0.shape[-2]
    K = U.shape[1]
    if U.shape != (n, K) or V.shape != (n, K) or sigma.shape != (X0.shape[0], K):
        raise ShapeError(f"DGP layer: U {U.shape}, V {V.shape}, sigma {sigma.shape}, X0 {X0.shape}")
    if X_prev.shape != X0.shape:
        raise ShapeError(f"DGP layer: X_prev {X_prev.shape} vs X0 {X0.shape}")


def dgp_layer_forward_dense(X_prev, X0, U, V, sigma, counter=None):
    """Reference path: materialize ``W_i = U diag(sigma_i) V.T`` per instance."""
    _check_dgp(X_prev, X0, U, V, sigma)
    Wi = np.matmul(U[None, :, :] * sigma[:, None, :], V.T)
    if counter is not None:
        counter.record("dgp.dense.W", Wi)
    A = np.matmul(Wi, X0)
    return _residual(X_prev, A), {"X_prev": X_prev, "A": A, "Wi": Wi}


def dgp_layer_forward_lowrank(X_prev, X0, U, V, sigma, counter=None):
    """``U @ (sigma * (V.T @ X0))`` without forming the ``n x n`` matrix."""
    _check_dgp(X_prev, X0, U, V, sigma)
    if counter is not None:
        counter.record("dgp.sigma", sigma)
        counter.record("dgp.U", U)
        counter.record("dgp.V", V)
    P = np.matmul(V.T, X0)
    Q = sigma[:, :, None] * P
    A = np.matmul(U, Q)
    return _residual(X_prev, A), {"X_prev": X_prev, "A": A, "P": P, "Q": Q}


def dgp_layer_backward(cache, G, X0, U, V, sigma):
    dX_prev = G * (cache["A"] + 1.0)
    dA = G * cache["X_prev"]
    dU = np.einsum("bid,bkd->ik", dA, cache["Q"])
    dQ = np.matmul(U.T, dA)
    dsigma = np.einsum("bkd,bkd->bk", dQ, cache["P"])
    dP = sigma[:, :, None] * dQ
    dV = np.einsum("bid,bkd->ik", X0, dP)
    dX0 = np.matmul(V, dP)
    return dX_prev, dX0, dU, dV, dsigma


def _check_dwp(X_prev, X0, W, u, v):
    B, n = X0.shape[:2]
    if W.shape != (n, n) or u.shape != v.shape or u.ndim != 3 or u.shape[0] != B or u.shape[2] != n:
        raise ShapeError(f"DWP layer: W {W.shape}, u {u.shape}, v {v.shape}, X0 {X0.shape}")
    if X_prev.shape != X0.shape:
        raise ShapeError(f"DWP layer: X_prev {X_prev.shape} vs X0 {X0.shape}")


def dwp_layer_forward(X_prev, X0, W, u, v):
    """Vectorized form ``sum_p u_p * (W @ (v_p * X0))``; ``u, v`` are ``(B, K, n)``."""
    W = np.asarray(W, dtype=DTYPE)
    _check_dwp(X_prev, X0, W, u, v)
    Y = v[:, :, :, None] * X0[:, None, :, :]
    Z = np.matmul(W, Y)
    A = (u[:, :, :, None] * Z).sum(axis=1)
    return _residual(X_prev, A), {"X_prev": X_prev, "A": A, "Y": Y, "Z": Z}


def dwp_layer_forward_dense(X_prev, X0, W, u, v):
    """Reference path: ``((sum_p u_p v_p^T) * W) @ X0`` with the weighting materialized."""
    W = np.asarray(W, dtype=DTYPE)
    _check_dwp(X_prev, X0, W, u, v)
    Gm = np.einsum("bki,bkj->bij", u, v)
    A = np.matmul(Gm * W, X0)
    return _residual(X_prev, A), {"X_prev": X_prev, "A": A, "G": Gm}


def dwp_layer_backward(cache, G, X0, W, u, v):
    dX_prev = G * (cache["A"] + 1.0)
    dA = G * cache["X_prev"]
    du = np.einsum("bid,bkid->bki", dA, cache["Z"])
    dZ = u[:, :, :, None] * dA[:, None, :, :]
    dW = np.einsum("bkid,bkjd->ij", dZ, cache["Y"])
    dY = np.matmul(W.T, dZ)
    dv = np.einsum("bkid,bid->bki", dY, X0)
    dX0 = (v[:, :, :, None] * dY).sum(axis=1)
    return dX_prev, dX0, dW, du, dv


# -- output head ---------------------------------------------------------------

def output_forward(XL, w_out, b):
    """Logits ``(w_out @ X_L + b 1^T) 1`` and probabilities; ``XL`` is ``(B, F, D)``."""
    XL = np.asarray(XL, dtype=DTYPE)
    w_out = np.asarray(w_out, dtype=DTYPE).ravel()
    if XL.shape[-2] != w_out.shape[0]:
        raise ShapeError(f"output head: W_out length {w_out.shape[0]} vs {XL.shape[-2]} fields")
    rows = XL.sum(axis=-1)
    logit = rows @ w_out + float(np.asarray(b).ravel()[0]) * XL.shape[-1]
    return logit, sigmoid(logit), {"rows": rows, "D": XL.shape[-1]}


def output_backward(cache, dlogit, w_out):
    w_out = np.asarray(w_out, dtype=DTYPE).ravel()
    dw = dlogit @ cache["rows"]
    db = np.array([dlogit.sum() * cache["D"]])
    dXL = np.broadcast_to(dlogit[:, None, None] * w_out[None, :, None],
                          dlogit.shape + (w_out.shape[0], cache["D"])).copy()
    return dXL, dw, db


# -- whole interaction stack -----------------------------------------------------------

@dataclass
class StackConfig:
    variant: str = "pin"
    depth: int = 2
    subspaces: int = 1
    n_fields: int = 1
    embed_dim: int = 16
    rank: int = 2
    reduction_ratio: int = 4
    gate_mode: str = "vector"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.depth < 0:
            raise ConfigurationError("depth must be >= 0")
        if self.subspaces < 1 or self.embed_dim % self.subspaces:
            raise ConfigurationError(
                f"subspaces={self.subspaces} must divide embed_dim={self.embed_dim}")
        if self.rank < 1:
            raise ConfigurationError("rank must be >= 1")
        if self.gate_mode not in ("vector", "full"):
            raise ConfigurationError("gate_mode must be 'vector' or 'full'")

    @property
    def n_rows(self):
        return self.n_fields * self.subspaces

    @property
    def sub_dim(self):
        return self.embed_dim // self.subspaces

    def generator_out_dim(self):
        n = self.n_rows
        if self.variant == "da":
            return n if self.gate_mode == "vector" else n * self.sub_dim
        if self.variant == "dgp":
            return self.rank
        if self.variant == "dwp":
            return 2 * self.rank * n
        return 0


def init_stack_params(cfg, rng, w_scale=0.01):
    """Fresh parameter dict for the interaction stack.

    Static ``W`` matrices start near zero, DGP factors ``U, V`` are drawn from
    ``N(0, 1/sqrt(n))`` and generator output layers start at zero, so every
    variant begins at (or next to) the identity map.
    """
    n = cfg.n_rows
    params = {}
    for l in range(cfg.depth):
        if cfg.variant == "dgp":
            params[f"dgp.U.{l}"] = rng.normal(0.0, 1.0 / np.sqrt(n), size=(n, cfg.rank))
            params[f"dgp.V.{l}"] = rng.normal(0.0, 1.0 / np.sqrt(n), size=(n, cfg.rank))
        else:
            params[f"{'dwp' if cfg.variant == 'dwp' else 'pin'}.W.{l}"] = \
                rng.normal(0.0, w_scale, size=(n, n))
        if cfg.variant != "pin":
            net = make_generator(cfg, rng)
            for k, v in net.params().items():
                params[f"gen.{l}.{k}"] = v
    return params


def make_generator(cfg, rng):
    kind = {"da": GATE, "dgp": IDENTITY, "dwp": SHIFT}[cfg.variant]
    shift = 1.0 / cfg.rank if cfg.variant == "dwp" else 0.0
    return GeneratorNet.init(cfg.n_fields * cfg.embed_dim, cfg.generator_out_dim(),
                             cfg.reduction_ratio, kind, rng, shift=shift)


def generator_for_layer(cfg, params, l):
    kind = {"da": GATE, "dgp": IDENTITY, "dwp": SHIFT}[cfg.variant]
    shift = 1.0 / cfg.rank if cfg.variant == "dwp" else 0.0
    return GeneratorNet(params[f"gen.{l}.hidden.W"], params[f"gen.{l}.hidden.b"],
                        params[f"gen.{l}.out.W"], params[f"gen.{l}.out.b"], kind, shift)


@dataclass
class StackCache:
    cfg: StackConfig
    X0s: np.ndarray
    layers: list = field(default_factory=list)
    generated: list = field(default_factory=list)
    gen_caches: list = field(default_factory=list)


def _split_pairs(out, cfg):
    B = out.shape[0]
    pairs = out.reshape(B, 2, cfg.rank, cfg.n_rows)
    return pairs[:, 0], pairs[:, 1]


def stack_forward(X0, params, cfg, gen_input=None, dense=False, counter=None):
    """Run all interaction layers on ``X0`` of shape ``(B, F, D)``.

    ``gen_input`` overrides the (gradient-blocked) generator input; it
    defaults to ``X0`` itself.  ``dense=True`` switches DGP/DWP to their
    materialized reference paths.  Returns ``(X_L, cache)`` with ``X_L``
    unstacked to ``(B, F, D)``.
    """
    X0 = np.asarray(X0, dtype=DTYPE)
    B, F, D = X0.shape
    if F != cfg.n_fields or D != cfg.embed_dim:
        raise ShapeError(f"feature map {X0.shape[1:]} does not match config ({cfg.n_fields}, {cfg.embed_dim})")
    X0s = subspace_stack(X0, cfg.subspaces)
    gin = (X0 if gen_input is None else np.asarray(gen_input, dtype=DTYPE)).reshape(B, F * D)
    cache = StackCache(cfg, X0s)
    X = X0s
    for l in range(cfg.depth):
        gen = None
        if cfg.variant != "pin":
            out, gcache = generator_forward(gin, generator_for_layer(cfg, params, l))
            cache.gen_caches.append(gcache)
        if cfg.variant == "pin":
            X, lc = pin_layer_forward(X, X0s, params[f"pin.W.{l}"])
        elif cfg.variant == "da":
            gate = out if cfg.gate_mode == "vector" else out.reshape(B, cfg.n_rows, cfg.sub_dim)
            gen = {"gate": gate}
            X, lc = da_layer_forward(X, X0s, params[f"pin.W.{l}"], gate)
        elif cfg.variant == "dgp":
            gen = {"sigma": out}
            fwd = dgp_layer_forward_dense if dense else dgp_layer_forward_lowrank
            X, lc = fwd(X, X0s, params[f"dgp.U.{l}"], params[f"dgp.V.{l}"], out, counter)
        else:
            u, v = _split_pairs(out, cfg)
            gen = {"u": u, "v": v}
            fwd = dwp_layer_forward_dense if dense else dwp_layer_forward
            X, lc = fwd(X, X0s, params[f"dwp.W.{l}"], u, v)
        cache.layers.append(lc)
        cache.generated.append(gen)
    return subspace_unstack(X, cfg.subspaces, F), cache


def stack_backward(cache, params, dXL, gen_upstream=None):
    """Backward of :func:`stack_forward` (low-rank/vectorized paths only).

    ``gen_upstream`` optionally adds gradients w.r.t. generated quantities
    (e.g. an orthogonality penalty on ``u``/``v``), one dict per layer.
    Returns ``(dX0, grads)`` where ``dX0`` excludes any generator path.
    """
    cfg = cache.cfg
    X0s = cache.X0s
    F = cfg.n_fields
    G = subspace_stack(dXL, cfg.subspaces)
    dX0s = np.zeros_like(X0s)
    grads = {}
    for l in reversed(range(cfg.depth)):
        lc = cache.layers[l]
        gen = cache.generated[l]
        extra = (gen_upstream or [None] * cfg.depth)[l] or {}
        if cfg.variant == "pin":
            G, dx0, dW = pin_layer_backward(lc, G, X0s, params[f"pin.W.{l}"])
            grads[f"pin.W.{l}"] = dW
            dout = None
        elif cfg.variant == "da":
            G, dx0, dW, dgate = da_layer_backward(lc, G, X0s, params[f"pin.W.{l}"])
            grads[f"pin.W.{l}"] = dW
            dout = dgate.reshape(dgate.shape[0], -1)
        elif cfg.variant == "dgp":
            U, V = params[f"dgp.U.{l}"], params[f"dgp.V.{l}"]
            G, dx0, dU, dV, dsigma = dgp_layer_backward(lc, G, X0s, U, V, gen["sigma"])
            grads[f"dgp.U.{l}"] = dU
            grads[f"dgp.V.{l}"] = dV
            dout = dsigma + extra.get("sigma", 0.0)
        else:
            G, dx0, dW, du, dv = dwp_layer_backward(lc, G, X0s, params[f"dwp.W.{l}"],
                                                    gen["u"], gen["v"])
            grads[f"dwp.W.{l}"] = dW
            du = du + extra.get("u", 0.0)
            dv = dv + extra.get("v", 0.0)
            dout = np.stack([du, dv], axis=1).reshape(du.shape[0], -1)
        dX0s += dx0
        if dout is not None:
            for k, g in generator_backward(cache.gen_caches[l], dout).items():
                grads[f"gen.{l}.{k}"] = g
    dX0s += G
    return subspace_unstack(dX0s, cfg.subspaces, F), grads


def pin_forward(X0, weights):
    """Static PIN on a single ``F x D`` map (or a ``(B, F, D)`` batch).

    ``weights`` is a list of ``F x F`` matrices, one per layer.
    """
    X0 = np.asarray(X0, dtype=DTYPE)
    single = X0.ndim == 2
    Xb = X0[None] if single else X0
    X = Xb
    for W in weights:
        X, _ = pin_layer_forward(X, Xb, W)
    return X[0] if single else X
