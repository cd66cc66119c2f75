import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from magdiff import diffcalc as dc
from conftest import numeric_grad, rel_err


def test_matmul_identity_and_definition():
    A = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(dc.matmul(dc.constant(np.eye(2)), dc.constant(A)).data, A)
    out = dc.matmul(dc.constant(A), dc.constant([[1.0], [1.0]]))
    assert np.array_equal(out.data, [[3.0], [7.0]])


def test_matmul_shape_error():
    with pytest.raises(dc.ShapeError):
        dc.matmul(dc.constant(np.ones((2, 3))), dc.constant(np.ones((2, 3))))


def test_matmul_gradient_matches_fd(rng):
    a0, b0 = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))

    def run(a, b):
        g = dc.Graph()
        ta, tb = g.param("a", a), g.param("b", b)
        loss = dc.sum_all(dc.matmul(ta, tb))
        return g, loss

    g, loss = run(a0, b0)
    grads = dc.backward(g, loss)
    fa = numeric_grad(lambda a: float(run(a, b0)[1].data), a0)
    fb = numeric_grad(lambda b: float(run(a0, b)[1].data), b0)
    assert rel_err(grads["a"], fa) < 1e-6
    assert rel_err(grads["b"], fb) < 1e-6


def test_softmax_uniform_and_exclusion():
    p = dc.softmax_masked(dc.constant(np.zeros((1, 4))), np.ones((1, 4), bool)).data
    assert np.allclose(p, 0.25, atol=0, rtol=1e-15)
    p = dc.softmax_masked(dc.constant([[1.0, 1.0, 1.0]]), np.array([[1, 1, 0]], bool)).data
    assert p[0, 2] == 0.0
    assert np.array_equal(p, [[0.5, 0.5, 0.0]])


def test_softmax_matches_direct_formula(rng):
    for _ in range(20):
        s = rng.normal(scale=3, size=(1, 9))
        m = rng.random((1, 9)) < 0.6
        m[0, rng.integers(9)] = True
        direct = np.exp(np.where(m, s, -np.inf))
        direct /= direct.sum()
        assert np.max(np.abs(dc.softmax_masked(dc.constant(s), m).data - direct)) < 1e-12


def test_softmax_all_masked_row_raises():
    with pytest.raises(dc.MaskError):
        dc.softmax_masked(dc.constant(np.zeros((2, 3))), np.array([[1, 0, 0], [0, 0, 0]], bool))


def test_softmax_large_scores_stay_finite():
    p = dc.softmax_masked(dc.constant([[1e4, -1e4, 3e3]]), np.array([[0, 1, 1]], bool)).data
    assert np.all(np.isfinite(p)) and p[0, 0] == 0.0 and p[0, 2] == 1.0


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (4, 6), elements=st.floats(-50, 50)),
       arrays(np.bool_, (4, 6)))
def test_softmax_rows_sum_to_one(scores, mask):
    mask[:, 0] = True
    p = dc.softmax_masked(dc.constant(scores), mask).data
    assert np.all(p[~mask] == 0.0)
    assert np.all(np.abs(p.sum(axis=1) - 1.0) <= 1e-12)


def test_softmax_gradient_matches_fd(rng):
    s0 = rng.normal(size=(3, 5))
    m = np.array([[1, 1, 0, 1, 0], [0, 1, 1, 1, 1], [1, 0, 0, 0, 0]], bool)
    w = rng.normal(size=(3, 5))

    def run(s):
        g = dc.Graph()
        ts = g.param("s", s)
        return g, dc.sum_all(dc.mul(dc.softmax_masked(ts, m), dc.constant(w)))

    g, loss = run(s0)
    assert rel_err(dc.backward(g, loss)["s"], numeric_grad(lambda s: float(run(s)[1].data), s0)) < 1e-6


def test_backward_simple_rules(rng):
    theta = rng.normal(size=(2, 3))
    g = dc.Graph()
    t = g.param("theta", theta)
    assert np.array_equal(dc.backward(g, dc.sum_all(t))["theta"], np.ones((2, 3)))
    g = dc.Graph()
    t = g.param("theta", theta)
    assert np.allclose(dc.backward(g, dc.sum_all(dc.square(t)))["theta"], 2 * theta, rtol=1e-15)


def test_backward_non_scalar_raises():
    g = dc.Graph()
    t = g.param("x", np.ones(3))
    with pytest.raises(dc.ShapeError):
        dc.backward(g, dc.square(t))


def test_backward_accumulates_shared_use():
    g = dc.Graph()
    x = g.param("x", np.array([[2.0]]))
    y = dc.mul(x, x)  # x used twice
    assert np.allclose(dc.backward(g, dc.sum_all(dc.add(y, x)))["x"], [[5.0]])


def test_broadcast_add_gradient(rng):
    a0, b0 = rng.normal(size=(4, 3)), rng.normal(size=(1, 3))

    def run(a, b):
        g = dc.Graph()
        return g, dc.sum_all(dc.square(dc.add(g.param("a", a), g.param("b", b))))

    g, loss = run(a0, b0)
    grads = dc.backward(g, loss)
    assert rel_err(grads["b"], numeric_grad(lambda b: float(run(a0, b)[1].data), b0)) < 1e-7


def test_silu_and_gather_gradients(rng):
    x0 = rng.normal(size=(5, 1))
    idx = np.array([[0, 3], [3, 3], [4, 1]])

    def run(x):
        g = dc.Graph()
        tx = g.param("x", x)
        return g, dc.sum_all(dc.square(dc.silu(dc.gather_rows(tx, idx))))

    g, loss = run(x0)
    assert rel_err(dc.backward(g, loss)["x"], numeric_grad(lambda x: float(run(x)[1].data), x0)) < 1e-7


def test_tensors_are_immutable():
    t = dc.constant(np.ones(3))
    with pytest.raises(ValueError):
        t.data[0] = 2.0


def test_unused_param_gets_zero_grad():
    g = dc.Graph()
    x = g.param("x", np.ones(2))
    g.param("unused", np.ones((2, 2)))
    grads = dc.backward(g, dc.sum_all(x))
    assert np.array_equal(grads["unused"], np.zeros((2, 2)))


# ---------------------------------------------------------------- Adam

def test_adam_zero_gradient_from_zero_state():
    p = {"w": np.array([1.0, -2.0])}
    state = dc.AdamState.zeros_like(p)
    new_p, new_s = dc.adam_step(p, {"w": np.zeros(2)}, state, lr=0.1)
    assert np.array_equal(new_p["w"], p["w"])
    assert new_s.step == 1 and np.array_equal(new_s.m["w"], np.zeros(2))


def test_adam_zero_gradient_decays_moments():
    p = {"w": np.array([1.0])}
    s = dc.AdamState(3, {"w": np.array([0.5])}, {"w": np.array([0.2])})
    _, s2 = dc.adam_step(p, {"w": np.zeros(1)}, s, lr=0.1)
    assert np.allclose(s2.m["w"], 0.9 * 0.5) and np.allclose(s2.v["w"], 0.999 * 0.2)


def test_adam_first_step_bounded(rng):
    g = rng.normal(size=10) * 10 ** rng.uniform(-6, 6, 10)
    p = {"w": np.zeros(10)}
    new_p, _ = dc.adam_step(p, {"w": g}, dc.AdamState.zeros_like(p), lr=0.01)
    # from zero state the first update is -lr * g / (|g| + eps)
    assert np.all(np.abs(new_p["w"]) <= 0.01 * (1 + 1e-12))
    assert np.all(np.sign(new_p["w"]) == -np.sign(g))


def test_adam_constant_gradient_step_approaches_lr():
    p = {"w": np.zeros(1)}
    s = dc.AdamState.zeros_like(p)
    prev = p["w"].copy()
    for _ in range(200):
        p, s = dc.adam_step(p, {"w": np.array([0.3])}, s, lr=1e-3)
        step = abs(p["w"][0] - prev[0])
        prev = p["w"].copy()
    assert abs(step - 1e-3) < 1e-3 * 1e-6


def test_adam_rejects_bad_lr():
    p = {"w": np.zeros(1)}
    with pytest.raises(ValueError):
        dc.adam_step(p, {"w": np.zeros(1)}, dc.AdamState.zeros_like(p), lr=0.0)


def test_adam_deterministic(rng):
    p = {"w": rng.normal(size=(3, 3))}
    g = {"w": rng.normal(size=(3, 3))}
    a = dc.adam_step(p, g, dc.AdamState.zeros_like(p), lr=0.01)[0]["w"]
    b = dc.adam_step(p, g, dc.AdamState.zeros_like(p), lr=0.01)[0]["w"]
    assert a.tobytes() == b.tobytes()
