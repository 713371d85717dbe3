import json

import numpy as np
import pytest
from hypothesis import given, strategies as st
from numpy.testing import assert_allclose, assert_array_equal
from scipy.special import expit

from conftest import central_diff, rel_err
from implicit_manifolds.errors import InputShapeError
from implicit_manifolds.netcore import (MlpModel, forward, jvp, param_count, param_grad, silu, silu_prime,
                                        silu_second, vjp)


def random_model(rng, widths=(3, 16, 16, 2), scale=0.3):
    m = MlpModel.init(widths, rng)
    return m.with_params(m.params + scale * rng.standard_normal(m.params.size))


def dense_forward(widths, params, x):
    """Independent re-evaluation that slices params by hand."""
    h, k = np.asarray(x, dtype=np.float64), 0
    for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
        W = params[k : k + a * b].reshape(b, a)
        k += a * b
        bias = params[k : k + b]
        k += b
        h = W @ h + bias
        if i < len(widths) - 2:
            h = h * (1.0 / (1.0 + np.exp(-h)))
    return h


def test_param_count_and_init_bounds(rng):
    widths = (2, 8, 8, 1)
    m = MlpModel.init(widths, rng)
    assert m.params.size == param_count(widths) == 2 * 8 + 8 + 8 * 8 + 8 + 8 + 1
    for (a, b), (W, bias) in zip(zip(widths[:-1], widths[1:]), m.layers):
        assert np.all(np.abs(W) <= np.sqrt(6 / (a + b)))
        assert_array_equal(bias, 0.0)


def test_bad_param_length():
    with pytest.raises(ValueError):
        MlpModel((2, 3, 1), np.zeros(5))


def test_linear_layer_forward():
    m = MlpModel.linear([[2.0, 0.0], [0.0, 3.0]])
    assert_allclose(forward(m, [1.0, 1.0]), [2.0, 3.0])


def test_silu_zero_and_derivatives():
    assert silu(0.0) == 0.0
    t = np.linspace(-8, 8, 41)
    assert_allclose(silu_prime(t), expit(t) + t * expit(t) * (1 - expit(t)))
    h = 1e-5
    assert_allclose(silu_second(t), (silu_prime(t + h) - silu_prime(t - h)) / (2 * h), atol=1e-8)


def test_zero_preactivation_contributes_nothing():
    # hidden unit with zero pre-activation has SiLU output 0, so its outgoing weight is irrelevant
    m1 = MlpModel((1, 1, 1), np.array([0.0, 0.0, 5.0, 1.0]))
    m2 = MlpModel((1, 1, 1), np.array([0.0, 0.0, -7.0, 1.0]))
    assert_allclose(forward(m1, [3.0]), forward(m2, [3.0]))


def test_forward_matches_dense_oracle(rng):
    m = random_model(rng, (4, 7, 5, 3))
    for _ in range(5):
        x = rng.standard_normal(4)
        assert_allclose(forward(m, x), dense_forward(m.layer_widths, m.params, x), rtol=0, atol=1e-12)


def test_batch_matches_rows(rng):
    m = random_model(rng)
    X = rng.standard_normal((6, 3))
    assert_allclose(forward(m, X), np.stack([forward(m, x) for x in X]), rtol=0, atol=1e-14)


def test_shape_errors(rng):
    m = random_model(rng)
    with pytest.raises(InputShapeError):
        forward(m, np.zeros(4))
    with pytest.raises(InputShapeError):
        jvp(m, np.zeros(3), np.zeros(2))
    with pytest.raises(InputShapeError):
        vjp(m, np.zeros(3), np.zeros(3))
    with pytest.raises(InputShapeError):
        param_grad(m, np.zeros(3), np.zeros(1))


def test_linear_jvp_vjp():
    W = np.array([[1.0, 2.0, 0.5], [-1.0, 0.0, 3.0]])
    m = MlpModel.linear(W, [0.3, -0.2])
    u, v = np.array([0.2, -1.0, 4.0]), np.array([1.5, -2.0])
    assert_allclose(jvp(m, np.ones(3), u), W @ u)
    assert_allclose(vjp(m, np.ones(3), v), W.T @ v)
    assert_array_equal(jvp(m, np.ones(3), np.zeros(3)), 0.0)


def test_jvp_vjp_match_finite_differences(rng):
    m = random_model(rng, (3, 32, 32, 1))
    x = rng.standard_normal(3)
    J = central_diff(lambda z: forward(m, z), x)
    u = rng.standard_normal(3)
    assert rel_err(jvp(m, x, u), J @ u) < 1e-4
    assert rel_err(vjp(m, x, np.ones(1)), J[0]) < 1e-4


def test_param_grad_matches_finite_differences(rng):
    m = random_model(rng, (3, 6, 5, 2))
    x, up = rng.standard_normal(3), rng.standard_normal(2)
    g = param_grad(m, x, up)
    fd = central_diff(lambda p: up @ forward(m.with_params(p), x), m.params)[0]
    assert rel_err(g.param_grad, fd) < 1e-4
    assert_allclose(g.input_grad, vjp(m, x, up), atol=1e-14)


def test_param_grad_terminal_bias(rng):
    m = random_model(rng, (3, 4, 1))
    up = np.array([2.5])
    g = param_grad(m, rng.standard_normal(3), up)
    assert_allclose(g.param_grad[-1], up[0])


def test_param_grad_batch_is_sum(rng):
    m = random_model(rng)
    X, U = rng.standard_normal((5, 3)), rng.standard_normal((5, 2))
    total = sum(param_grad(m, x, u).param_grad for x, u in zip(X, U))
    assert_allclose(param_grad(m, X, U).param_grad, total, rtol=1e-12, atol=1e-14)


@given(st.integers(0, 2**32 - 1))
def test_adjoint_identity_and_linearity(seed):
    rng = np.random.default_rng(seed)
    m = random_model(rng, (3, 8, 8, 2))
    x = rng.standard_normal(3)
    u1, u2 = rng.standard_normal((2, 3))
    v1, v2 = rng.standard_normal((2, 2))
    a, b = rng.standard_normal(2)
    assert abs(v1 @ jvp(m, x, u1) - vjp(m, x, v1) @ u1) < 1e-10
    assert_allclose(jvp(m, x, a * u1 + b * u2), a * jvp(m, x, u1) + b * jvp(m, x, u2), atol=1e-10)
    assert_allclose(vjp(m, x, a * v1 + b * v2), a * vjp(m, x, v1) + b * vjp(m, x, v2), atol=1e-10)


def test_forward_is_pure(rng):
    m = random_model(rng)
    x = rng.standard_normal(3)
    assert_array_equal(forward(m, x), forward(m, x))


def test_params_are_immutable(rng):
    m = random_model(rng)
    with pytest.raises(ValueError):
        m.params[0] = 1.0


def test_json_round_trip_is_bit_exact(rng):
    m = random_model(rng)
    back = MlpModel.from_dict(json.loads(json.dumps(m.to_dict())))
    assert back.layer_widths == m.layer_widths
    assert_array_equal(back.params, m.params)
    assert m.to_dict()["activation"] == "silu"
