import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st
from numpy.testing import assert_allclose, assert_array_equal
from scipy.optimize import rosen, rosen_der

from implicit_manifolds.errors import ConvergenceWarning, SingularSystemError, TrainingDivergenceError
from implicit_manifolds.solvers import (AdamState, LbfgsConfig, adam_step, cg_solve, cg_solve_batch,
                                        clip_grad_norm, lbfgs_minimize, lbfgs_minimize_batch)


def test_adam_zero_gradient():
    st0 = AdamState.zeros(3, lr=0.1)
    p, st1 = adam_step(st0, np.ones(3), np.zeros(3))
    assert_array_equal(p, np.ones(3))
    assert st1.step_count == 1


def test_adam_first_step_is_signed_lr():
    g = np.array([3.0, -0.2, 1e-3])
    p, _ = adam_step(AdamState.zeros(3, lr=0.01), np.zeros(3), g)
    assert_allclose(p, -0.01 * np.sign(g), rtol=1e-4)


def test_adam_quadratic():
    # scalar reference loop written out independently
    x, m, v = 1.0, 0.0, 0.0
    for t in range(1, 101):
        g = 2 * x
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        x -= 0.1 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
    p, st = np.array([1.0]), AdamState.zeros(1, lr=0.1)
    for _ in range(100):
        p, st = adam_step(st, p, 2 * p)
    assert_allclose(p[0], x, rtol=1e-12)
    assert abs(p[0]) < 0.05


def test_adam_rejects_nonfinite():
    with pytest.raises(TrainingDivergenceError):
        adam_step(AdamState.zeros(2, lr=0.1), np.zeros(2), np.array([np.nan, 0.0]))


def test_clip_examples():
    assert_allclose(clip_grad_norm(np.array([3.0, 4.0]), 1.0), [0.6, 0.8])
    assert_array_equal(clip_grad_norm(np.array([0.1, 0.0]), 1.0), [0.1, 0.0])


@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=10), st.floats(1e-3, 10))
def test_clip_properties(g, max_norm):
    g = np.array(g)
    out = clip_grad_norm(g, max_norm)
    assert np.linalg.norm(out) <= max_norm * (1 + 1e-12) or np.allclose(out, g)
    # nonnegative multiple of the input
    k = np.argmax(np.abs(g))
    if g[k] != 0:
        c = out[k] / g[k]
        assert c >= 0
        assert_allclose(out, c * g, atol=1e-12)


def test_cg_examples():
    r = cg_solve(lambda v: v, np.array([3.0, 4.0]))
    assert_allclose(r, [3.0, 4.0])
    res = cg_solve_batch(lambda v: v, np.array([[3.0, 4.0]]))
    assert res.iterations[0] == 1
    assert_allclose(cg_solve(lambda v: np.array([2.0, 4.0]) * v, np.array([2.0, 8.0])), [1.0, 2.0])


def random_spd(rng, d):
    A = rng.standard_normal((d, d))
    return A @ A.T + d * np.eye(d)


@given(st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_cg_matches_dense_solve(d, seed):
    rng = np.random.default_rng(seed)
    A, b = random_spd(rng, d), rng.standard_normal(d)
    res = cg_solve_batch(lambda v: v @ A.T, b[None], tol=1e-10)
    ref = np.linalg.solve(A, b)
    assert np.linalg.norm(res.x[0] - ref) <= 1e-8 * np.linalg.norm(ref)
    assert res.iterations[0] <= d + 1
    assert np.linalg.norm(A @ res.x[0] - b) <= 1e-10 * np.linalg.norm(b) * 10


def test_cg_singular_and_warning():
    with pytest.raises(SingularSystemError):
        cg_solve(lambda v: np.array([1.0, 0.0]) * v, np.array([0.0, 1.0]))
    A = np.diag(np.logspace(0, 6, 8))
    with pytest.warns(ConvergenceWarning):
        cg_solve(lambda v: A @ v, np.ones(8), tol=1e-14, max_iters=2)


def test_lbfgs_config_validation():
    with pytest.raises(ValueError):
        LbfgsConfig(wolfe_c1=0.9, wolfe_c2=0.1)


def test_lbfgs_quadratic():
    a = np.array([1.0, -2.0, 3.5])
    x, val, ok = lbfgs_minimize(lambda x: ((x - a) @ (x - a), 2 * (x - a)), np.zeros(3))
    assert ok
    assert_allclose(x, a, atol=1e-10)


def test_lbfgs_rosenbrock():
    x, val, ok = lbfgs_minimize(lambda x: (rosen(x), rosen_der(x)), np.array([-1.2, 1.0]),
                                LbfgsConfig(max_iters=200))
    assert_allclose(x, [1.0, 1.0], atol=1e-5)


def test_lbfgs_ill_conditioned():
    h = np.array([1.0, 100.0])
    res = lbfgs_minimize_batch(lambda x, idx: (np.sum(h * x * x, 1), 2 * h * x), np.array([[1.0, 1.0]]),
                               LbfgsConfig(grad_tol=1e-8, max_iters=50))
    assert res.converged[0]
    assert np.max(np.abs(2 * h * res.x[0])) <= 1e-8


def test_lbfgs_monotone_and_wolfe():
    values, grads = [], []

    def f(x):
        values.append(rosen(x))
        return rosen(x), rosen_der(x)

    x, val, _ = lbfgs_minimize(f, np.array([-1.2, 1.0]), LbfgsConfig(max_iters=1))
    # one outer iteration: the accepted point satisfies the strong Wolfe conditions
    x0 = np.array([-1.2, 1.0])
    g0 = rosen_der(x0)
    d = -g0 * min(1.0, 1.0 / np.abs(g0).sum())
    t = (x - x0) @ d / (d @ d)
    assert rosen(x) <= rosen(x0) + 1e-4 * t * (g0 @ d)
    assert abs(rosen_der(x) @ d) <= 0.9 * abs(g0 @ d)


def test_lbfgs_values_decrease():
    seen = []

    def f(x):
        return rosen(x), rosen_der(x)

    x = np.array([-1.2, 1.0])
    for _ in range(15):
        x, val, _ = lbfgs_minimize(f, x, LbfgsConfig(max_iters=1))
        seen.append(val)
    assert all(b <= a for a, b in zip(seen, seen[1:]))


def test_lbfgs_nonfinite_region():
    # objective is +inf beyond x > 1: the line search must shrink back into the finite region
    def f(x):
        if x[0] > 1.0:
            return np.inf, np.array([np.nan])
        return (x[0] - 2.0) ** 2, np.array([2 * (x[0] - 2.0)])

    x, val, ok = lbfgs_minimize(f, np.array([0.0]), LbfgsConfig(max_iters=30))
    assert np.isfinite(val)
    assert x[0] <= 1.0
    assert val <= 4.0


def test_lbfgs_batch_independent_rows():
    a = np.array([[1.0, 2.0], [-3.0, 0.5], [0.0, 0.0]])

    def f(x, idx):
        d = x - a[idx]
        return np.sum(d * d, 1), 2 * d

    res = lbfgs_minimize_batch(f, np.zeros((3, 2)))
    assert_allclose(res.x, a, atol=1e-10)
