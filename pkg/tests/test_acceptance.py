"""Acceptance criteria 1-10, one PASS/FAIL line printed per criterion.

Run alone with ``pytest tests/test_acceptance.py -v``.  The lines are written
past pytest's output capture so they show up in the normal report.
"""

import time

import numpy as np
import pytest

from dynint import experiments, train, verify
from dynint.dataio import Dataset
from dynint.layers import (MemoryCounter, StackConfig, dgp_layer_forward_dense,
                           dgp_layer_forward_lowrank, init_stack_params, pin_forward,
                           stack_forward)
from dynint.model import DynIntModel, TrainConfig
from dynint.ndcore import make_rng
from dynint.objective import log_loss

# frozen from the 5-seed calibration run of experiments.context_switch (seed 5):
# smallest observed margin over static PIN was 0.118, largest noise band 0.028
CONTEXT_MARGIN_MIN = 0.05


@pytest.fixture
def report(capsys):
    def emit(number, title, passed, detail):
        with capsys.disabled():
            print(f"\ncriterion {number:2d} {'PASS' if passed else 'FAIL'}  {title}: {detail}")
    return emit


def _suite(name):
    t0 = time.perf_counter()
    checks = verify.run_suite(name)
    return checks, time.perf_counter() - t0


def _failed(checks):
    return [c.line() for c in checks if not c.passed]


def test_criterion_01_polynomial_oracle(report):
    checks, secs = _suite("poly")
    ok = not _failed(checks) and secs < 10.0
    report(1, "polynomial expansion == pin_forward", ok,
           f"{len(checks)} checks, {len(_failed(checks))} failed, {secs:.1f}s (limit 10s)")
    assert not _failed(checks), _failed(checks)
    assert secs < 10.0


def test_criterion_02_gradients(report):
    checks, secs = _suite("grad")
    worst = max(c.value for c in checks)
    ok = not _failed(checks) and secs < 60.0
    report(2, "analytic gradients vs finite differences", ok,
           f"{len(checks)} checks, worst rel error {worst:.2e} (< 1e-4), {secs:.1f}s (limit 60s)")
    assert not _failed(checks), _failed(checks)
    assert secs < 60.0


def test_criterion_03_lowrank_dense(report):
    checks, _ = _suite("lowrank")
    worst = max(c.value for c in checks if "== dense" in c.name)
    ok = not _failed(checks)
    report(3, "low-rank paths == dense materialization", ok,
           f"{len(checks)} checks, worst abs diff {worst:.1e} (<= 1e-10)")
    assert ok, _failed(checks)


def _degeneracies():
    rng = make_rng(0)
    X0 = rng.normal(size=(16, 5, 4))
    out = {}
    out["zero W identity"] = bool(np.array_equal(pin_forward(X0, [np.zeros((5, 5))] * 3), X0))

    cards = (7, 3, 5, 4, 6)
    model = DynIntModel(TrainConfig(depth=0, embed_dim=4), cards)
    model.params["out.W"][...] = rng.normal(size=5)
    model.params["out.b"][...] = -0.2
    idx = np.stack([rng.integers(0, c, size=64) for c in cards], axis=1)
    y = rng.integers(0, 2, size=64)
    summed = np.stack([model.params[f"embed.{f}"][idx[:, f]].sum(axis=1) for f in range(5)], 1)
    lr_prob = 1.0 / (1.0 + np.exp(-(summed @ model.params["out.W"] - 0.2 * 4)))
    p = model.predict_proba(idx)
    per_example = [log_loss(p[i:i + 1], y[i:i + 1]) - log_loss(lr_prob[i:i + 1], y[i:i + 1])
                   for i in range(64)]
    out["depth 0 logistic regression"] = float(np.max(np.abs(per_example))) <= 1e-10

    for variant, kw in (("da", {"subspaces": 2}), ("dwp", {"rank": 1})):
        cfg = StackConfig(variant=variant, n_fields=5, embed_dim=4, depth=2, **kw)
        params = init_stack_params(cfg, make_rng(1), w_scale=0.3)
        got, _ = stack_forward(X0, params, cfg)
        prefix = "pin.W." if variant == "da" else "dwp.W."
        pin_cfg = StackConfig(variant="pin", n_fields=5, embed_dim=4, depth=2,
                              subspaces=cfg.subspaces)
        ref, _ = stack_forward(X0, {f"pin.W.{l}": params[f"{prefix}{l}"] for l in range(2)},
                               pin_cfg)
        out[f"{variant} zero generator == pin"] = bool(np.array_equal(got, ref))
    return out


def test_criterion_04_degeneracies(report):
    results = _degeneracies()
    ok = all(results.values())
    report(4, "degeneracy identities", ok,
           ", ".join(f"{k}={'ok' if v else 'BROKEN'}" for k, v in results.items()))
    assert ok, results


@pytest.mark.slow
def test_criterion_05_sparsity(report):
    t0 = time.perf_counter()
    points = experiments.sparsity_sweep()
    secs = time.perf_counter() - t0
    checks = verify.sparsity_checks(points)
    ok = not _failed(checks) and secs < 300.0
    detail = "; ".join(f"l1={p.l1}: noise zero {p.noise_zero:.2f}, informative nonzero "
                       f"{p.informative_nonzero:.2f}, kernel zero {p.kernel_zero:.2f}"
                       for p in points)
    report(5, "group-lasso row sparsity and kernel sparsity", ok, f"{detail}; {secs:.0f}s")
    assert not _failed(checks), _failed(checks)
    assert secs < 300.0


@pytest.mark.slow
def test_criterion_06_recovery(report):
    t0 = time.perf_counter()
    res = experiments.synthetic_recovery()
    secs = time.perf_counter() - t0
    gap = res.bayes_auc - res.pin_auc
    shortfall = res.pin_auc - res.shallow_auc
    ok = gap <= 0.02 and shortfall >= 0.03 and secs < 600.0
    report(6, "synthetic recovery", ok,
           f"bayes {res.bayes_auc:.4f}, 2-layer {res.pin_auc:.4f} (gap {gap:.4f} <= 0.02), "
           f"depth-0 {res.shallow_auc:.4f} (short by {shortfall:.4f} >= 0.03), {secs:.0f}s")
    assert gap <= 0.02
    assert shortfall >= 0.03
    assert secs < 600.0


@pytest.mark.slow
def test_criterion_07_dynamic_ordering(report):
    res = experiments.context_switch()
    parts, ok = [], True
    for v in ("da", "dgp", "dwp"):
        need = max(CONTEXT_MARGIN_MIN, res.noise_band(v))
        good = res.margin(v) > need
        ok &= good
        parts.append(f"{v} +{res.margin(v):.4f} (need > {need:.4f})")
    report(7, "dynamic variants beat static PIN", ok,
           f"pin {res.mean('pin'):.4f}; " + ", ".join(parts))
    assert ok


def test_criterion_08_memory(report):
    B, F, K = 4096, 10, 1
    rng = make_rng(0)
    X0 = rng.normal(size=(B, F, 4))
    U, V, s = rng.normal(size=(F, K)), rng.normal(size=(F, K)), rng.normal(size=(B, K))
    low, dense = MemoryCounter(), MemoryCounter()
    dgp_layer_forward_lowrank(X0, X0, U, V, s, low)
    dgp_layer_forward_dense(X0, X0, U, V, s, dense)
    per_instance = 1 - (low.total - 2 * F * K) / dense.total
    big = train.dgp_memory(10 ** 7, F, K)
    reduction = 1 - big["lowrank"] / big["dense"]
    ok = (low.total == B * K + 2 * F * K and dense.total == B * F * F
          and per_instance == 0.99 and round(100 * reduction) == 99)
    report(8, "low-rank memory accounting", ok,
           f"counted {low.total} == B*K+2FK, dense {dense.total} == B*F^2, "
           f"per-instance reduction {per_instance:.2%}, total at B=1e7 {reduction:.4%}")
    assert ok


def test_criterion_09_metrics(report):
    checks, _ = _suite("metrics")
    hand = abs(log_loss([0.5], [1]) - 0.693147) < 1e-6 and \
        abs(log_loss([0.5], [1]) - np.log(2.0)) < 1e-9
    ok = not _failed(checks) and hand
    report(9, "AUC vs pair enumeration, log-loss hand cases", ok,
           f"{len(checks)} checks, {len(_failed(checks))} failed")
    assert ok, _failed(checks)


def test_criterion_10_determinism(report, tmp_path):
    rng = make_rng(3)
    cards = (6, 5, 4)
    X = np.stack([rng.integers(0, c, size=1200) for c in cards], axis=1)
    y = ((X[:, 0] == X[:, 1]) ^ (rng.random(1200) < 0.2)).astype(int)
    tr, va = Dataset(X[:1000], y[:1000], cards), Dataset(X[1000:], y[1000:], cards)
    texts = []
    for run in ("a", "b"):
        cfg = TrainConfig(variant="dwp", embed_dim=4, batch_size=50, eval_every=5, max_epochs=3,
                          orth_lambda=0.1, seed=4)
        train.fit(DynIntModel(cfg, cards), tr, va, run_dir=tmp_path / run)
        texts.append((tmp_path / run / "metrics.csv").read_bytes())
    rows = texts[0].count(b"\n") - 1
    ok = texts[0] == texts[1] and rows > 5
    report(10, "bitwise-identical metrics CSV", ok,
           f"{rows} metric rows, identical={texts[0] == texts[1]}")
    assert ok
