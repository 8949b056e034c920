import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hybrid_pinn.autodiff import (Jet, NumericFault, ParameterStore, Tape, grad_params, jet_add, jet_affine,
                                  jet_scale, jet_tanh)
from hybrid_pinn.network import NetworkConfig, init_xavier, jet_forward
from hybrid_pinn.physics import coordinate_jets


def fd_grad(f, theta, h=1e-6):
    g = np.zeros_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        g[i] = (f(theta + e) - f(theta - e)) / (2 * h)
    return g


def test_quadratic_single_parameter():
    store = ParameterStore([(1, 1)], np.array([3.0, 0.0]))
    tape = Tape()
    (W, b), = tape.bind(store)
    loss = tape.sum(tape.square(W))
    g = grad_params(tape, loss, store)
    assert g.tolist() == [6.0, 0.0]


def test_nonscalar_loss_rejected():
    store = ParameterStore([(2, 1)])
    tape = Tape()
    (W, _), = tape.bind(store)
    with pytest.raises(ValueError):
        grad_params(tape, W, store)


def test_unused_node_has_zero_adjoint():
    tape = Tape()
    a = tape.param(np.array([1.0, 2.0]))
    unused = tape.param(np.array([5.0]))
    loss = tape.sum(tape.square(a))
    adj = tape.backward(loss)
    assert np.all(tape.adjoint(adj, unused) == 0.0)
    assert np.allclose(tape.adjoint(adj, a), [2.0, 4.0])


def test_replay_reproduces_values():
    rng = np.random.default_rng(0)
    tape = Tape()
    x = tape.const(rng.normal(size=(5, 3)))
    W = tape.param(rng.normal(size=(4, 3)))
    b = tape.param(rng.normal(size=4))
    h = tape.tanh(tape.affine(x, W, b))
    y = tape.sin(h) * tape.cos(h) + 2.0 - h
    tape.mean(tape.square(tape.take(y, 1) / 3.0))
    before = [v.copy() for v in tape.values]
    after = tape.replay()
    assert all(np.array_equal(u, v) for u, v in zip(before, after))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_numeric_fault_reports_node():
    tape = Tape()
    a = tape.const(np.array([1.0, 2.0]))
    b = tape.const(np.array([1e308, 1.0]))
    with pytest.raises(NumericFault) as err:
        a * b * 10.0
    assert err.value.index == len(tape) and err.value.op in ("mul", "scale")


def test_linear_regression_bias_gradient():
    # zero network y = W x + b, symmetric data: dL/db = -2 mean(y), dL/dW = -2 mean(y x)
    x = np.array([[-1.0], [1.0]])
    y = np.array([3.0, 5.0])
    store = ParameterStore([(1, 1)])
    tape = Tape()
    (W, b), = tape.bind(store)
    pred = tape.take(tape.affine(tape.const(x), W, b), 0)
    loss = tape.mean(tape.square(pred - y))
    g = grad_params(tape, loss, store)
    assert g[store.index(0, 0, 0)] == pytest.approx(-2.0)
    assert g[store.index(0, 0, None)] == pytest.approx(-8.0)


def test_store_layout_and_roundtrip():
    shapes = [(3, 2), (1, 3)]
    store = ParameterStore(shapes, np.arange(13, dtype=float) / 7.0)
    assert store.total_count == 3 * 2 + 3 + 3 + 1
    assert store.layers[1][0][0, 2] == store.flat[store.index(1, 0, 2)]
    assert store.layers[0][1][2] == store.flat[store.index(0, 2)]
    back = ParameterStore.from_list(shapes, store.to_list())
    assert back.flat.tobytes() == store.flat.tobytes()
    store.flat[0] = 42.0
    assert store.layers[0][0][0, 0] == 42.0


def test_store_rejects_wrong_length():
    with pytest.raises(ValueError):
        ParameterStore([(2, 2)], np.zeros(5))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_tape_gradient_matches_fd(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(4, 2))
    shapes = [(3, 2), (2, 3)]
    theta0 = rng.normal(size=sum(o * i + o for o, i in shapes)) * 0.7

    def loss_of(theta, want_grad=False):
        store = ParameterStore(shapes, theta)
        tape = Tape()
        (W0, b0), (W1, b1) = tape.bind(store)
        h = tape.tanh(tape.affine(tape.const(x), W0, b0))
        out = tape.affine(tape.sin(h) * h, W1, b1)
        loss = tape.mean(tape.square(tape.take(out, 0) - tape.cos(tape.take(out, 1))))
        if want_grad:
            return grad_params(tape, loss, store)
        return float(loss.value)

    g = loss_of(theta0, True)
    ref = fd_grad(loss_of, theta0)
    assert np.max(np.abs(g - ref)) <= 1e-6 * max(1.0, np.max(np.abs(ref)))


def _coord(tape, x):
    return coordinate_jets(tape, x)


def test_jet_of_constant_is_zero():
    cfg = NetworkConfig(2, ["u"], [8, 8], seed=3)
    p = init_xavier(cfg)
    for W, b in p.layers:
        W[:] = 0.0
    b[:] = 0.25  # last bias
    jets = jet_forward(p, cfg, np.random.default_rng(0).normal(size=(5, 2)))
    u = jets["u"]
    assert np.all(u.value.value == 0.25)
    for k in range(2):
        assert np.all(u.grad(k).value == 0.0) and np.all(u.lap_term(k).value == 0.0)


def test_identity_then_tanh_at_origin():
    tape = Tape()
    x = np.zeros((1, 1))
    W = tape.param(np.eye(1))
    b = tape.param(np.zeros(1))
    lifted = Jet(tape.const(x), [tape.const(np.ones((1, 1)))], [None])
    y = jet_tanh(jet_affine(lifted, W, b))
    assert y.value.value.item() == 0.0
    assert y.grad(0).value.item() == 1.0
    assert y.lap_term(0).value.item() == 0.0


def test_jet_linearity():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(6, 2))
    tape = Tape()
    X, Y = _coord(tape, x)
    f = jet_tanh(X * Y)
    g = jet_tanh(X * X + Y)
    a, b = 1.7, -0.4
    lhs = jet_add(jet_scale(f, a), jet_scale(g, b))
    for k in range(2):
        for attr in ("grad", "lap_term"):
            got = getattr(lhs, attr)(k).value
            want = a * getattr(f, attr)(k).value + b * getattr(g, attr)(k).value
            assert np.allclose(got, want, rtol=0, atol=1e-14)


def test_jet_product_rule_matches_analytic():
    x = np.array([[0.3, -0.8], [1.1, 0.4]])
    tape = Tape()
    X, Y = _coord(tape, x)
    f = X * X * Y          # x^2 y
    assert np.allclose(f.grad(0).value, 2 * x[:, 0] * x[:, 1])
    assert np.allclose(f.grad(1).value, x[:, 0] ** 2)
    assert np.allclose(f.lap_term(0).value, 2 * x[:, 1])
    assert np.allclose(f.lap_term(1).value, 0.0)
