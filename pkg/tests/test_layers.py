import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dynint import layers
from dynint.layers import (GeneratorNet, MemoryCounter, StackConfig, da_layer_forward,
                           dgp_layer_forward_dense, dgp_layer_forward_lowrank, dwp_layer_forward,
                           dwp_layer_forward_dense, generator_forward, init_stack_params,
                           output_forward, pin_forward, pin_layer_backward, pin_layer_forward,
                           stack_forward, subspace_stack, subspace_unstack)
from dynint.ndcore import ConfigurationError, ShapeError, make_rng

X0_TOY = np.array([[1.0], [2.0]])


def test_pin_hand_cases():
    np.testing.assert_array_equal(pin_forward(X0_TOY, [np.eye(2)]), [[2.0], [6.0]])
    np.testing.assert_array_equal(pin_forward(X0_TOY, [np.full((2, 2), 0.5)]), [[2.5], [5.0]])


def test_pin_zero_weights_is_identity():
    X0 = make_rng(0).normal(size=(3, 4))
    np.testing.assert_array_equal(pin_forward(X0, [np.zeros((3, 3))] * 3), X0)


def test_pin_backward_identity_layer():
    rng = make_rng(1)
    X0 = rng.normal(size=(2, 3, 2))
    G = rng.normal(size=X0.shape)
    W = np.zeros((3, 3))
    _, cache = pin_layer_forward(X0, X0, W)
    dprev, dx0, dW = pin_layer_backward(cache, G, X0, W)
    np.testing.assert_array_equal(dprev, G)
    np.testing.assert_array_equal(dx0, 0.0)
    zero = pin_layer_backward(cache, np.zeros_like(G), X0, W)
    for g in zero:
        np.testing.assert_array_equal(g, 0.0)


def test_subspace_stack_layout():
    X = np.array([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(subspace_stack(X, 2), [[1.0], [3.0], [2.0], [4.0]])
    np.testing.assert_array_equal(subspace_stack(X, 1), X)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 4), st.sampled_from([(4, 1), (4, 2), (4, 4), (6, 3)]),
       st.integers(0, 2**31 - 1))
def test_subspace_round_trip(F, Dh, seed):
    D, h = Dh
    X = np.random.default_rng(seed).normal(size=(2, F, D))
    np.testing.assert_array_equal(subspace_unstack(subspace_stack(X, h), h, F), X)


def test_da_hand_case_and_limits():
    X0 = X0_TOY[None]
    W = np.eye(2) * np.array([[1.0], [0.5]])  # W X0 = [[1], [1]] so X0*(W X0) = [[1], [2]]
    out, _ = da_layer_forward(X0, X0, W, np.array([[0.5, 1.5]]))
    np.testing.assert_array_equal(out[0], [[1.0 * 0.5 + 1.0], [2.0 * 1.5 + 2.0]])
    out, _ = da_layer_forward(X0, X0, W, np.zeros((1, 2)))
    np.testing.assert_array_equal(out, X0)


def test_generator_zero_output_values():
    rng = make_rng(0)
    gate = GeneratorNet.init(6, 3, 2, layers.GATE, rng)
    out, _ = generator_forward(rng.normal(size=(4, 6)), gate)
    np.testing.assert_array_equal(out, 1.0)
    shift = GeneratorNet.init(6, 8, 2, layers.SHIFT, rng, shift=0.5)
    out, _ = generator_forward(rng.normal(size=(4, 6)), shift)
    np.testing.assert_array_equal(out, 0.5)


def test_gate_strictly_inside_open_interval():
    rng = make_rng(3)
    net = GeneratorNet.init(6, 3, 2, layers.GATE, rng)
    net.out_W[...] = rng.normal(0, 5, size=net.out_W.shape)
    out, _ = generator_forward(rng.normal(size=(50, 6)), net)
    assert np.all(out > 0) and np.all(out < 2)


def test_dgp_identity_factorization_matches_pin():
    rng = make_rng(2)
    X0 = rng.normal(size=(3, 4, 2))
    I = np.eye(4)
    a, _ = dgp_layer_forward_lowrank(X0, X0, I, I, np.ones((3, 4)))
    b, _ = pin_layer_forward(X0, X0, I)
    np.testing.assert_array_equal(a, b)
    z, _ = dgp_layer_forward_lowrank(X0, X0, I, I, np.zeros((3, 4)))
    np.testing.assert_array_equal(z, X0)


def test_dgp_rank_one_selects_first_field():
    X0 = np.array([[[1.0], [2.0]]])
    e1 = np.array([[1.0], [0.0]])
    out, _ = dgp_layer_forward_lowrank(X0, X0, e1, e1, np.ones((1, 1)))
    np.testing.assert_array_equal(out[0], [[2.0], [2.0]])


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(2, 6), st.integers(1, 3), st.integers(1, 3),
       st.integers(0, 2**31 - 1))
def test_lowrank_paths_match_dense(B, n, d, K, seed):
    rng = np.random.default_rng(seed)
    X0 = rng.uniform(-1, 1, size=(B, n, d))
    Xp = rng.uniform(-1, 1, size=(B, n, d))
    U, V = rng.uniform(-1, 1, size=(n, K)), rng.uniform(-1, 1, size=(n, K))
    s = rng.uniform(-1, 1, size=(B, K))
    np.testing.assert_allclose(dgp_layer_forward_lowrank(Xp, X0, U, V, s)[0],
                               dgp_layer_forward_dense(Xp, X0, U, V, s)[0], rtol=0, atol=1e-10)
    W = rng.uniform(-1, 1, size=(n, n))
    u, v = rng.uniform(-1, 1, size=(B, K, n)), rng.uniform(-1, 1, size=(B, K, n))
    np.testing.assert_allclose(dwp_layer_forward(Xp, X0, W, u, v)[0],
                               dwp_layer_forward_dense(Xp, X0, W, u, v)[0], rtol=0, atol=1e-10)


def test_dwp_zero_weight_is_identity():
    rng = make_rng(4)
    X0 = rng.normal(size=(2, 3, 2))
    u, v = rng.normal(size=(2, 2, 3)), rng.normal(size=(2, 2, 3))
    out, _ = dwp_layer_forward(X0, X0, np.zeros((3, 3)), u, v)
    np.testing.assert_array_equal(out, X0)


def test_memory_counter_lowrank_vs_dense():
    rng = make_rng(5)
    B, F, K = 32, 10, 1
    X0 = rng.normal(size=(B, F, 3))
    U, V, s = rng.normal(size=(F, K)), rng.normal(size=(F, K)), rng.normal(size=(B, K))
    low, dense = MemoryCounter(), MemoryCounter()
    dgp_layer_forward_lowrank(X0, X0, U, V, s, low)
    dgp_layer_forward_dense(X0, X0, U, V, s, dense)
    assert low.total == B * K + 2 * F * K
    assert dense.total == B * F * F


def test_output_head_hand_cases():
    XL = np.array([[[1.0, 2.0], [3.0, 4.0]]])
    logit, prob, _ = output_forward(XL, np.array([1.0, 1.0]), np.array([0.0]))
    assert logit[0] == 10.0
    np.testing.assert_allclose(prob, [0.9999546021312976], rtol=1e-12)
    logit0, prob0, _ = output_forward(XL, np.zeros(2), np.zeros(1))
    assert prob0[0] == 0.5
    shifted, _, _ = output_forward(XL, np.array([1.0, 1.0]), np.array([0.25]))
    assert shifted[0] - logit[0] == 0.25 * 2


def _stack(variant, **kw):
    cfg = StackConfig(variant=variant, n_fields=3, embed_dim=4, **kw)
    return cfg, init_stack_params(cfg, make_rng(0), w_scale=0.3)


def test_da_zero_generator_equals_pin_bitwise():
    cfg, params = _stack("da", depth=2, subspaces=2)
    X0 = make_rng(1).normal(size=(5, 3, 4))
    out, _ = stack_forward(X0, params, cfg)
    pin_cfg = StackConfig(variant="pin", n_fields=3, embed_dim=4, depth=2, subspaces=2)
    ref, _ = stack_forward(X0, {k: v for k, v in params.items() if k.startswith("pin.")}, pin_cfg)
    np.testing.assert_array_equal(out, ref)


def test_dwp_rank_one_zero_generator_equals_pin_bitwise():
    cfg, params = _stack("dwp", depth=2, rank=1)
    X0 = make_rng(1).normal(size=(5, 3, 4))
    out, _ = stack_forward(X0, params, cfg)
    weights = [params[f"dwp.W.{l}"] for l in range(2)]
    np.testing.assert_array_equal(out, pin_forward(X0, weights))


def test_dgp_zero_generator_is_identity():
    cfg, params = _stack("dgp", depth=2)
    X0 = make_rng(1).normal(size=(5, 3, 4))
    out, _ = stack_forward(X0, params, cfg)
    np.testing.assert_array_equal(out, X0)


def test_stack_config_validation():
    with pytest.raises(ConfigurationError):
        StackConfig(variant="pin", embed_dim=4, subspaces=3)
    with pytest.raises(ConfigurationError):
        StackConfig(variant="xdeep")
    with pytest.raises(ShapeError):
        cfg, params = _stack("pin", depth=1)
        stack_forward(np.zeros((1, 2, 4)), params, cfg)
