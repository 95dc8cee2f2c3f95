"""Mini-batch training loop, evaluation, early stopping and size accounting."""

import copy
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint, objective
from .ndcore import make_rng
from .optim import Adam, Ftrl, GroupFtrl

log = logging.getLogger(__name__)

METRICS_HEADER = "step,split,auc,logloss\n"


class TrainingAborted(RuntimeError):
    """Training hit a non-finite loss or gradient."""


def make_optimizers(model):
    """Embeddings -> group-lasso FTRL, generators -> Adam, everything else -> FTRL."""
    cfg = model.config
    frozen = cfg.frozen_prefixes
    anchored = cfg.ftrl_start == "anchored"
    opts = {}
    for name, p in model.params.items():
        if frozen and name.startswith(frozen):
            continue
        if name.startswith("embed."):
            opts[name] = GroupFtrl(p, cfg.gftrl_alpha, cfg.gftrl_beta, cfg.gftrl_l1,
                                   cfg.gftrl_l2, name=name, anchored=anchored)
        elif name.startswith("gen."):
            opts[name] = Adam(p, cfg.adam_lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps,
                              name=name)
        else:
            opts[name] = Ftrl(p, cfg.ftrl_alpha, cfg.ftrl_beta, cfg.ftrl_l1, cfg.ftrl_l2,
                              name=name, anchored=anchored)
    return opts


def train_step(model, optimizers, X, y):
    """Forward, backward and one update of every optimizer; returns the batch loss."""
    X = np.asarray(X, dtype=np.int64)
    result = model.forward(X)
    loss = model.loss(result, y)
    if not np.isfinite(loss.total):
        raise TrainingAborted(f"non-finite loss {loss.total}")
    grads = model.backward(result, y, dense_embeddings=False)
    for f, (rows, g) in enumerate(model.embedding_row_grads(X, grads["X0"])):
        opt = optimizers.get(f"embed.{f}")
        if opt is not None:
            opt.step(rows, g)
    for name, opt in optimizers.items():
        if not name.startswith("embed."):
            opt.step(grads[name])
    model.bump_version()
    return loss


def evaluate(model, dataset, batch_size=8192):
    """Deterministic AUC / LogLoss over a whole dataset; parameters untouched."""
    prob = model.predict_proba(dataset.X, batch_size=batch_size)
    return objective.evaluate_predictions(prob, dataset.y)


class EarlyStopper:
    """Stop after ``patience`` evaluations without a logloss drop of more than ``min_delta``."""

    def __init__(self, patience=5, min_delta=1e-5):
        self.patience = patience
        self.min_delta = min_delta
        self.best = np.inf
        self.bad_evals = 0

    def update(self, logloss):
        """Record one evaluation; returns ``(improved, stop)``."""
        if logloss < self.best - self.min_delta:
            self.best = logloss
            self.bad_evals = 0
            return True, False
        self.bad_evals += 1
        return False, self.bad_evals >= self.patience


@dataclass
class RunState:
    step: int = 0
    best_logloss: float = np.inf
    best_step: int = 0
    since_improvement: int = 0
    stopped_early: bool = False
    history: list = field(default_factory=list)


def _format_metric(step, split, report):
    return f"{step},{split},{report.auc!r},{report.logloss!r}\n"


def fit(model, train, valid, run_dir=None, optimizers=None):
    """Train ``model`` on ``train`` with periodic validation and early stopping.

    Batches come from a seeded shuffle per epoch (no replacement, short last
    batch kept).  Validation runs every ``eval_every`` optimizer steps and once
    more at the end.  On return the model holds the best-validation weights.
    When ``run_dir`` is given, ``metrics.csv``, ``train.log`` and the
    ``best.ckpt`` / ``last.ckpt`` checkpoints are written there.
    """
    cfg = model.config
    optimizers = make_optimizers(model) if optimizers is None else optimizers
    rng = make_rng(cfg.seed + 1)
    stopper = EarlyStopper(cfg.patience, cfg.min_delta)
    state = RunState()
    best_params = copy.deepcopy(model.params)
    run_dir = Path(run_dir) if run_dir is not None else None
    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / "metrics.csv").write_text(METRICS_HEADER)
        (run_dir / "train.log").write_text("")
    last_ckpt = None
    n = len(train)
    running = []

    def do_eval():
        nonlocal best_params, last_ckpt
        report = evaluate(model, valid)
        improved, stop = stopper.update(report.logloss)
        state.history.append((state.step, report))
        train_loss = float(np.mean(running)) if running else float("nan")
        running.clear()
        line = (f"step={state.step} train_loss={train_loss!r} valid_auc={report.auc!r} "
                f"valid_logloss={report.logloss!r} improved={improved}")
        log.info(line)
        if improved:
            state.best_logloss = report.logloss
            state.best_step = state.step
            best_params = copy.deepcopy(model.params)
        state.since_improvement = stopper.bad_evals
        if run_dir is not None:
            with open(run_dir / "metrics.csv", "a") as fh:
                fh.write(_format_metric(state.step, "valid", report))
            with open(run_dir / "train.log", "a") as fh:
                fh.write(line + "\n")
            extra = {"step": state.step}
            if improved:
                checkpoint.save_model(run_dir / "best.ckpt", model, optimizers, extra)
            checkpoint.save_model(run_dir / "last.ckpt", model, optimizers, extra)
            last_ckpt = run_dir / "last.ckpt"
        return stop

    done = False
    epoch = 0
    while not done:
        if cfg.max_epochs > 0 and epoch >= cfg.max_epochs:
            break
        perm = rng.permutation(n)
        for s in range(0, n, cfg.batch_size):
            b = perm[s:s + cfg.batch_size]
            try:
                loss = train_step(model, optimizers, train.X[b], train.y[b])
            except (TrainingAborted, FloatingPointError) as exc:
                raise TrainingAborted(
                    f"step {state.step}: {exc}; last good checkpoint: {last_ckpt}") from exc
            running.append(loss.total)
            state.step += 1
            if state.step % cfg.eval_every == 0 and do_eval():
                state.stopped_early = True
                done = True
                break
            if cfg.max_steps and state.step >= cfg.max_steps:
                done = True
                break
        epoch += 1
    if not state.history or state.history[-1][0] != state.step:
        do_eval()
    for name, arr in best_params.items():
        model.params[name][...] = arr
    model.bump_version()
    return state


# -- size accounting ----------------------------------------------------------------

def _generator_params(cfg, n_fields):
    scfg = cfg.stack_config(n_fields)
    out = scfg.generator_out_dim()
    if not out:
        return 0
    inp = n_fields * cfg.embed_dim
    hid = max(1, inp // cfg.reduction_ratio)
    return inp * hid + hid + hid * out + out


def count_params(cfg, cardinalities):
    """Exact trainable parameter counts per group."""
    F = len(cardinalities)
    n = F * cfg.subspaces
    counts = {"embedding": sum(cfg.embed_dim * c for c in cardinalities),
              "output": F + 1}
    per_layer = {"pin": n * n, "da": n * n, "dgp": 2 * n * cfg.rank, "dwp": n * n}[cfg.variant]
    counts["interaction"] = per_layer * cfg.depth
    counts["generator"] = _generator_params(cfg, F) * cfg.depth
    counts["total"] = sum(counts.values())
    return counts


def count_flops(cfg, n_fields):
    """Per-layer multiply counts of the aggregation ``W X0`` for each computation path.

    ``dense`` is the static or materialized product ``F*F*D`` (``h*F^2*D`` with
    subspaces); ``dgp_lowrank`` is ``2*F*K^2 + F*K*D`` and ``dwp_vectorized``
    is ``2*K*F^2 + K*F^2*D``, the expressions for the factored paths.
    """
    F, K, D = n_fields * cfg.subspaces, cfg.rank, cfg.embed_dim // cfg.subspaces
    return {
        "dense": F * F * D,
        "dgp_lowrank": 2 * F * K * K + F * K * D,
        "dwp_vectorized": 2 * K * F * F + K * F * F * D,
        "hadamard_residual": 2 * F * D,
    }


def dgp_memory(batch, n_fields, rank):
    """Elements held for per-instance DGP weights: dense, stored low-rank, and ``B*K*K`` form."""
    return {
        "dense": batch * n_fields * n_fields,
        "lowrank": batch * rank + 2 * n_fields * rank,
        "lowrank_full_sigma": batch * rank * rank + 2 * n_fields * rank,
    }


def dwp_memory(batch, n_fields, rank):
    return {
        "dense": batch * n_fields * n_fields,
        "vectorized": 2 * batch * n_fields * rank + n_fields * n_fields,
    }
