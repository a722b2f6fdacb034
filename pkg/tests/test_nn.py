import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from diffkge import nn
from diffkge.nn import (LN_EPS, adam_init, adam_step, finite_diff_grad,
                        layer_norm, make_rng, mlp_backward, mlp_forward,
                        mlp_init, rel_error, sigmoid)


def small_mlp(in_dim=2, hidden=1, out_dim=2, seed=0):
    return mlp_init(in_dim, hidden, out_dim, make_rng(seed, "mlp"))


def test_zero_parameters_give_zero_output():
    p = small_mlp(3, 2, 4)
    for arr in (p.w1, p.b1, p.w2, p.b2, p.ln_b):
        arr[:] = 0.0
    # gain stays nonzero; layer-norm of a constant vector is zero anyway
    out = mlp_forward(p, np.zeros(3))
    assert np.array_equal(out, np.zeros(4))


def test_hand_evaluated_single_hidden_unit():
    # one hidden unit on a dim-2 input, evaluated step by step by hand
    p = small_mlp(2, 1, 2)
    p.w1[:] = [[1.0, 1.0]]
    p.b1[:] = [0.5]
    p.w2[:] = [[2.0], [-1.0]]
    p.b2[:] = [0.1, -0.2]
    p.ln_g[:] = [1.0, 1.0]
    p.ln_b[:] = [0.0, 0.0]
    x = np.array([0.3, -0.1])
    h = 0.3 - 0.1 + 0.5
    a = h * (1.0 / (1.0 + np.exp(-h)))
    y = np.array([2.0 * a + 0.1, -a - 0.2])
    mu = y.mean()
    var = ((y - mu) ** 2).mean()
    expect = (y - mu) / np.sqrt(var + LN_EPS)
    got = mlp_forward(p, x)
    assert np.allclose(got, expect, atol=1e-12)


def test_parameter_perturbation_matches_jacobian():
    # output_i responds to parameter nudges per the analytic Jacobian row
    rng = make_rng(7, "jacobian")
    p = mlp_init(3, 4, 2, rng)
    x = rng.standard_normal(3)
    for i in range(2):
        onehot = np.zeros(2)
        onehot[i] = 1.0
        grads, _ = mlp_backward(p, x, onehot)
        for name, arr in p.tensors().items():
            def out_i(v, name=name, arr=arr):
                return float(mlp_forward(p, x)[i])

            fd = finite_diff_grad(out_i, arr, h=1e-5)
            assert rel_error(grads[name], fd) < 1e-6, name


def test_backward_zero_out_grad():
    p = small_mlp(3, 2, 2, seed=4)
    grads, dx = mlp_backward(p, np.array([0.1, -0.2, 0.4]), np.zeros(2))
    assert np.array_equal(dx, np.zeros(3))
    for arr in grads.values():
        assert np.array_equal(arr, np.zeros_like(arr))


def test_backward_matches_finite_differences_small():
    rng = make_rng(11, "fd")
    for trial in range(5):
        dims = rng.integers(1, 5, size=3)
        p = mlp_init(int(dims[0]), int(dims[1]), int(dims[2]), rng)
        x = rng.standard_normal(int(dims[0]))
        w = rng.standard_normal(int(dims[2]))  # fixed loss direction

        def loss_of_input(v):
            return float(mlp_forward(p, v) @ w)

        grads, dx = mlp_backward(p, x, w)
        fd = finite_diff_grad(loss_of_input, x.copy())
        assert rel_error(dx, fd) < 1e-6
        for name, arr in p.tensors().items():
            def loss_of_param(v, name=name):
                return float(mlp_forward(p, x) @ w)

            fd = finite_diff_grad(loss_of_param, arr)
            assert rel_error(grads[name], fd) < 1e-6, name


def test_input_grad_hand_chain():
    # independent hand-written chain rule for a 2-2-2 instance
    rng = make_rng(3, "chain")
    p = mlp_init(2, 2, 2, rng)
    x = rng.standard_normal(2)
    out_grad = rng.standard_normal(2)

    h = p.w1 @ x + p.b1
    s = 1.0 / (1.0 + np.exp(-h))
    a = h * s
    y = p.w2 @ a + p.b2
    mu = y.mean()
    yc = y - mu
    var = (yc * yc).mean()
    inv = 1.0 / np.sqrt(var + LN_EPS)
    z = yc * inv
    dz = out_grad * p.ln_g
    dy = inv * (dz - dz.mean() - z * (dz * z).mean())
    da = p.w2.T @ dy
    dh = da * (s * (1 + h * (1 - s)))
    expect_dx = p.w1.T @ dh

    _, dx = mlp_backward(p, x, out_grad)
    assert np.allclose(dx, expect_dx, atol=1e-12)


def test_gradient_correctness_randomized_dims():
    rng = make_rng(19, "rand-dims")
    for _ in range(8):
        din, dh, dout = (int(v) for v in rng.integers(1, 9, size=3))
        p = mlp_init(din, dh, dout, rng)
        x = rng.standard_normal(din)
        w = rng.standard_normal(dout)
        grads, dx = mlp_backward(p, x, w)
        fd = finite_diff_grad(lambda v: float(mlp_forward(p, v) @ w), x.copy())
        assert rel_error(dx, fd) <= 1e-5


def test_dimension_mismatch_errors():
    p = small_mlp(3, 2, 2)
    with pytest.raises(ValueError, match="expected 3, got 4"):
        mlp_forward(p, np.zeros(4))
    with pytest.raises(ValueError, match="dimension mismatch"):
        mlp_backward(p, np.zeros(3), np.zeros(5))


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=4, max_size=32))
def test_layer_norm_mean_zero_unit_variance(vals):
    y = np.asarray(vals)
    if y.var() < 0.5:  # constant-ish vectors normalize toward zero instead
        return
    z = layer_norm(y, np.ones_like(y), np.zeros_like(y))
    assert abs(z.mean()) <= 1e-9
    assert abs(z.var() - 1.0) <= 2 * LN_EPS


def test_layer_norm_constant_vector_is_zero():
    y = np.full(6, 3.7)
    z = layer_norm(y, np.full(6, 2.0), np.zeros(6))
    assert np.allclose(z, 0.0)


def test_sigmoid_matches_definition():
    x = np.linspace(-30, 30, 101)
    assert np.allclose(sigmoid(x), 1.0 / (1.0 + np.exp(-x)), atol=1e-15)


class TestAdam:
    def test_zero_grads_leave_params_unchanged(self):
        params = {"a": np.array([1.0, -2.0]), "b": np.array([[0.5]])}
        st_ = adam_init(params, lr=0.1)
        before = {k: v.copy() for k, v in params.items()}
        adam_step(st_, params, {k: np.zeros_like(v) for k, v in params.items()})
        for k in params:
            assert np.array_equal(params[k], before[k])
        assert all(np.array_equal(m, np.zeros_like(m)) for m in st_.m.values())

    def test_first_step_closed_form(self):
        # g = 1 constantly: first update is exactly -lr / (1 + eps)
        params = {"w": np.array([0.5])}
        st_ = adam_init(params, lr=0.1)
        adam_step(st_, params, {"w": np.array([1.0])})
        assert params["w"][0] == pytest.approx(0.5 - 0.1 / (1.0 + 1e-8),
                                               abs=1e-15)
        assert st_.count == 1

    def test_determinism(self):
        rng = make_rng(5, "adam")
        g = rng.standard_normal(4)
        results = []
        for _ in range(2):
            params = {"w": np.arange(4.0)}
            st_ = adam_init(params, lr=0.01)
            for _ in range(10):
                adam_step(st_, params, {"w": g})
            results.append(params["w"].copy())
        assert np.array_equal(results[0], results[1])

    def test_shape_mismatch(self):
        params = {"w": np.zeros(3)}
        st_ = adam_init(params, lr=0.1)
        with pytest.raises(ValueError, match="shape mismatch"):
            adam_step(st_, params, {"w": np.zeros(4)})
        with pytest.raises(ValueError, match="key mismatch"):
            adam_step(st_, params, {"v": np.zeros(3)})


def test_make_rng_reproducible_and_label_dependent():
    a = make_rng(42, "x").standard_normal(5)
    b = make_rng(42, "x").standard_normal(5)
    c = make_rng(42, "y").standard_normal(5)
    d = make_rng(43, "x").standard_normal(5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert not np.array_equal(a, d)
