from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cdtnet import nn
from cdtnet.nn import functional as F

from oracles import EXT, central_diff, layer_grad_error, max_rel_err, network_grad_error, tiny_cdt_config


def _rng(seed=0):
    return np.random.default_rng(seed)


# --- gradient checks, layer by layer -----------------------------------------

@pytest.mark.parametrize("width,cin,cout", [(4, 1, 3), (3, 3, 4), (2, 4, 2), (1, 2, 2), (5, 1, 1)])
def test_conv_gradients(width, cin, cout):
    layer = nn.Conv1D(width, cin, cout, _rng(1))
    layer.params["b"] = _rng(2).standard_normal(cout)
    x = _rng(3).standard_normal((2, 3, 9, cin))
    err, per = layer_grad_error(layer, x, seed=4)
    assert err < 1e-5, per


@pytest.mark.parametrize("shape", [(4, 6, 5), (7, 3)])
def test_dense_gradients(shape):
    n_in = shape[-1]
    layer = nn.Dense(n_in, 4, _rng(5))
    layer.params["b"] = _rng(6).standard_normal(4)
    err, per = layer_grad_error(layer, _rng(7).standard_normal(shape), seed=8)
    assert err < 1e-6, per


@pytest.mark.parametrize("window,length", [(4, 24), (3, 6), (2, 2), (4, 10)])
def test_maxpool_gradients(window, length):
    # distinct values keep every window's max well separated from the runner-up
    x = _rng(9).permutation(2 * 3 * length * 2).reshape(2, 3, length, 2) * 0.01
    err, per = layer_grad_error(nn.MaxPool1D(window), x, seed=10)
    assert err < 1e-5, per


def test_relu_gradients_with_kink_avoided():
    x = _rng(11).standard_normal((3, 40))
    x[np.abs(x) < 1e-3] = 0.5  # nudge off the kink
    err, per = layer_grad_error(nn.ReLU(), x, seed=12)
    assert err < 1e-6, per


@pytest.mark.parametrize("variant", ["CDT_CNN", "REGULAR_CNN", "MLP"])
def test_whole_network_gradients(variant):
    kw = {"mlp": (12, 8, 6)} if variant == "MLP" else {}
    err, per = network_grad_error(tiny_cdt_config(variant=variant, **kw), depth=5, batch=3)
    assert err < 1e-5, max(per, key=per.get)


def test_library_grad_check_on_dense():
    layer = nn.Dense(3, 2, _rng(13))
    x = _rng(14).standard_normal((4, 3))
    r = _rng(15).standard_normal((4, 2))
    layer.forward(x)
    dx = layer.backward(r)
    analytic = {"w": layer.grads["w"], "b": layer.grads["b"], "x": dx}
    arrays = {"w": layer.params["w"], "b": layer.params["b"], "x": x}
    err, per = nn.grad_check(lambda: float(np.sum(layer.forward(x) * r)), analytic, arrays)
    assert err < 1e-6, per
    with pytest.raises(ValueError):
        nn.grad_check(lambda: 0.0, analytic, arrays, eps=0.0)


def test_relative_error_floor():
    assert nn.relative_error(np.zeros(3), np.full(3, 1e-12)) == pytest.approx(1e-6)
    assert nn.relative_error(np.array([2.0]), np.array([1.0])) == 0.5


# --- convolution -------------------------------------------------------------

def test_conv_identity_kernel():
    w = np.ones((1, 1, 1))
    x = _rng(16).standard_normal((2, 5, 24, 1))
    np.testing.assert_array_equal(F.conv1d_forward(x, w, np.zeros(1)), x)


def test_conv_output_shape():
    layer = nn.Conv1D(4, 1, 32, _rng(17))
    assert layer.forward(np.zeros((1, 5, 24, 1))).shape == (1, 5, 24, 32)


def test_conv_hand_example():
    # width 3, left pad 1: y[t] = x[t-1] + 2 x[t] + 3 x[t+1]
    w = np.array([1.0, 2.0, 3.0]).reshape(3, 1, 1)
    x = np.array([1.0, 2.0, 3.0, 4.0]).reshape(4, 1)
    y = F.conv1d_forward(x, w, np.array([0.5]))[:, 0]
    np.testing.assert_array_equal(y, [0 + 2 + 6 + 0.5, 1 + 4 + 9 + 0.5, 2 + 6 + 12 + 0.5, 3 + 8 + 0 + 0.5])
    # even width pads one fewer on the left: y[t] = x[t] + 2 x[t+1]
    w = np.array([1.0, 2.0]).reshape(2, 1, 1)
    y = F.conv1d_forward(x, w, np.zeros(1))[:, 0]
    np.testing.assert_array_equal(y, [5.0, 8.0, 11.0, 4.0])


def test_conv_rejects_channel_mismatch():
    with pytest.raises(ValueError):
        F.conv1d_forward(np.zeros((5, 24, 2)), np.zeros((3, 1, 4)), np.zeros(4))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(2, 7))
def test_conv_row_permutation_equivariance(seed, rows):
    rng = _rng(seed)
    w = rng.standard_normal((3, 2, 4))
    b = rng.standard_normal(4)
    x = rng.standard_normal((2, rows, 12, 2))
    perm = rng.permutation(rows)
    np.testing.assert_array_equal(F.conv1d_forward(x[:, perm], w, b), F.conv1d_forward(x, w, b)[:, perm])


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(-3, 3), st.floats(-3, 3))
def test_conv_is_linear_in_input(seed, a, c):
    rng = _rng(seed)
    w = rng.standard_normal((4, 1, 3))
    x = rng.standard_normal((5, 24, 1))
    y = rng.standard_normal((5, 24, 1))
    z = np.zeros(3)
    lhs = F.conv1d_forward(a * x + c * y, w, z)
    rhs = a * F.conv1d_forward(x, w, z) + c * F.conv1d_forward(y, w, z)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-12, atol=1e-12)


def test_conv_zero_upstream_and_bias_gradient():
    x = _rng(18).standard_normal((2, 3, 8, 2))
    w = _rng(19).standard_normal((3, 2, 4))
    dx, dw, db = F.conv1d_backward(np.zeros((2, 3, 8, 4)), x, w)
    assert not dx.any() and not dw.any() and not db.any()
    dy = _rng(20).standard_normal((2, 3, 8, 4))
    _, _, db = F.conv1d_backward(dy, x, w)
    np.testing.assert_allclose(db, dy.sum(axis=(0, 1, 2)), rtol=1e-13)
    with pytest.raises(ValueError):
        F.conv1d_backward(np.zeros((2, 3, 7, 4)), x, w)


def test_conv_rejects_non_finite():
    layer = nn.Conv1D(2, 1, 1, _rng(0))
    with pytest.raises(nn.NonFiniteError):
        layer.forward(np.array([[1.0], [np.nan]]))


# --- pooling -----------------------------------------------------------------

def test_maxpool_example():
    x = np.array([1.0, 3.0, 2.0, 5.0, 4.0, 6.0]).reshape(6, 1)
    y, arg = F.maxpool1d_forward(x, 3)
    np.testing.assert_array_equal(y[:, 0], [3.0, 6.0])
    np.testing.assert_array_equal(arg[:, 0], [1, 2])


def test_maxpool_ties_route_to_first_index():
    x = np.full((6, 1), 2.0)
    y, arg = F.maxpool1d_forward(x, 3)
    np.testing.assert_array_equal(arg[:, 0], [0, 0])
    dx = F.maxpool1d_backward(np.ones((2, 1)), arg, 3, 6)
    np.testing.assert_array_equal(dx[:, 0], [1, 0, 0, 1, 0, 0])


def test_maxpool_schedule_reaches_one():
    x = np.zeros((1, 5, 24, 1))
    for window, expect in [(4, 6), (3, 2), (2, 1)]:
        x, _ = F.maxpool1d_forward(x, window)
        assert x.shape[-2] == expect


def test_maxpool_partial_last_window():
    x = np.array([1.0, 2.0, 3.0, -5.0, -4.0]).reshape(5, 1)
    y, _ = F.maxpool1d_forward(x, 3)
    np.testing.assert_array_equal(y[:, 0], [3.0, -4.0])


# --- dense, activations, loss ------------------------------------------------

def test_dense_identity_and_bias():
    x = _rng(21).standard_normal((4, 3))
    np.testing.assert_array_equal(F.dense_forward(x, np.eye(3), np.zeros(3)), x)
    b = np.array([1.0, -2.0])
    np.testing.assert_array_equal(F.dense_forward(np.zeros((2, 3)), np.ones((3, 2)), b), [b, b])
    with pytest.raises(ValueError):
        F.dense_forward(np.zeros((2, 4)), np.ones((3, 2)), b)


def test_relu_values():
    np.testing.assert_array_equal(F.relu(np.array([-1.0, 0.0, 2.5])), [0.0, 0.0, 2.5])


def test_uniform_logits_loss_is_log3():
    for label in range(3):
        loss, g = F.softmax_cross_entropy(np.zeros(3), label)
        assert loss == pytest.approx(math.log(3), abs=1e-15)
        expect = np.full(3, 1 / 3)
        expect[label] -= 1
        np.testing.assert_allclose(g, expect, atol=1e-15)


def test_confident_logits_loss_and_gradient():
    z = np.array([10.0, 0.0, 0.0])
    loss, g = F.softmax_cross_entropy(z, 0)
    expect = math.log(1 + 2 * math.exp(-10))
    assert loss == pytest.approx(expect, rel=1e-12)
    assert loss == pytest.approx(9.08e-5, rel=1e-3)
    ze = z.astype(EXT)
    f = lambda: -(ze[0] - np.log(np.sum(np.exp(ze))))
    assert max_rel_err(g, central_diff(f, ze, 1e-5)) < 1e-6


def test_cross_entropy_rejects_bad_labels():
    with pytest.raises(ValueError):
        F.softmax_cross_entropy(np.zeros(3), 3)
    with pytest.raises(ValueError):
        F.softmax_cross_entropy(np.zeros((2, 3)), [0])


def test_softmax_is_shift_stable():
    p = F.softmax(np.array([1000.0, 1000.0, 1000.0]))
    np.testing.assert_allclose(p, 1 / 3, rtol=1e-15)


def test_dropout_keep_one_and_eval_are_identity():
    x = _rng(22).standard_normal((4, 5))
    rng = _rng(23)
    before = rng.bit_generator.state
    y, mask = F.dropout(x, 1.0, rng, training=True)
    assert y is x and mask is None
    y, mask = F.dropout(x, 0.7, rng, training=False)
    assert y is x and mask is None
    assert rng.bit_generator.state == before
    with pytest.raises(ValueError):
        F.dropout(x, 0.0, rng, True)


def test_dropout_training_is_inverted():
    x = np.ones((200, 200))
    y, mask = F.dropout(x, 0.7, _rng(24), training=True)
    assert set(np.unique(y)) <= {0.0, 1 / 0.7}
    assert abs(y.mean() - 1.0) < 0.02


# --- optimiser and initialiser ----------------------------------------------

def test_adam_zero_gradient_leaves_params():
    p = {"a": np.array([1.0, -2.0])}
    nn.adam_step(p, {"a": np.zeros(2)}, nn.AdamState(), lr=1e-3)
    np.testing.assert_array_equal(p["a"], [1.0, -2.0])


def test_adam_first_step_moves_by_lr():
    p = {"a": np.array([0.5])}
    nn.adam_step(p, {"a": np.array([2.0])}, nn.AdamState(), lr=1e-3)
    # bias-corrected moments: m = 2, v = 4, so the step is lr * 2 / (2 + eps)
    assert p["a"][0] - 0.5 == pytest.approx(-1e-3 * 2 / (2 + 1e-8), rel=1e-9)


def test_adam_equal_gradients_equal_updates():
    p = {"a": np.array([0.0, 0.0]), "b": np.array([0.0])}
    g = {"a": np.array([0.3, 0.3]), "b": np.array([0.3])}
    st_ = nn.AdamState()
    for _ in range(5):
        nn.adam_step(p, g, st_, lr=1e-2)
    assert p["a"][0] == p["a"][1] == p["b"][0]


def test_adam_coupled_l2():
    # with zero gradient the decay term alone drives the update
    p = {"a": np.array([3.0])}
    nn.adam_step(p, {"a": np.zeros(1)}, nn.AdamState(), lr=1e-3, l2=1e-5)
    assert p["a"][0] == pytest.approx(3.0 - 1e-3, rel=1e-6)


def test_adam_validation():
    with pytest.raises(ValueError):
        nn.adam_step({"a": np.zeros(1)}, {"a": np.zeros(1)}, nn.AdamState(), lr=0.0)
    with pytest.raises(ValueError):
        nn.adam_step({"a": np.zeros(2)}, {"a": np.zeros(1)}, nn.AdamState())


def test_fans():
    assert nn.fans((10, 4)) == (10, 4)
    assert nn.fans((4, 1, 32)) == (4, 128)
    with pytest.raises(ValueError):
        nn.fans((3,))


def test_glorot_bounds_reproducibility_and_variance():
    shape = (3, 100, 400)  # 120,000 draws
    limit = math.sqrt(6 / (300 + 1200))
    a = nn.glorot_init(shape, _rng(25))
    assert np.all(np.abs(a) <= limit)
    np.testing.assert_array_equal(a, nn.glorot_init(shape, _rng(25)))
    target = 2 / (300 + 1200)
    assert abs(a.var() / target - 1) < 0.1


# --- containers and checkpoints ---------------------------------------------

def test_sequential_names_and_load():
    seq = nn.Sequential([nn.Dense(3, 4, _rng(0)), nn.ReLU(), nn.Dense(4, 2, _rng(1))])
    assert list(seq.parameters()) == ["00_fc.w", "00_fc.b", "02_fc.w", "02_fc.b"]
    other = nn.Sequential([nn.Dense(3, 4, _rng(5)), nn.ReLU(), nn.Dense(4, 2, _rng(6))])
    other.load(seq.parameters())
    x = _rng(2).standard_normal((5, 3))
    np.testing.assert_array_equal(other.forward(x), seq.forward(x))
    bad = dict(seq.parameters())
    bad["00_fc.w"] = np.zeros((2, 2))
    with pytest.raises(ValueError):
        other.load(bad)


def test_transpose_roundtrip():
    t = nn.Transpose((0, 2, 1))
    x = _rng(3).standard_normal((2, 3, 4))
    y = t.forward(x)
    assert y.shape == (2, 4, 3)
    np.testing.assert_array_equal(t.backward(y), x)


def test_checkpoint_roundtrip_and_layout():
    params = {"00_conv.w": _rng(4).standard_normal((4, 1, 3)), "00_conv.b": np.array([1.5, -0.25, 0.0]),
              "scalar": np.array(2.0)}
    blob = nn.dump_params(params)
    assert blob[:4] == b"CDTN"
    back = nn.load_params(blob)
    assert list(back) == list(params)
    for k in params:
        np.testing.assert_array_equal(back[k], params[k])
        assert back[k].shape == np.shape(params[k])
    # data section is the trailing little-endian doubles in header order
    tail = np.frombuffer(blob[-8 * 16 :], dtype="<f8")
    np.testing.assert_array_equal(tail[:12], params["00_conv.w"].ravel())
    with pytest.raises(ValueError):
        nn.load_params(b"XXXX" + blob[4:])
    with pytest.raises(ValueError):
        nn.load_params(blob + b"\0")
