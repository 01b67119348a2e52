import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dpinn_lab.diagnostics import exp_jacobian, exp_model
from dpinn_lab.errors import DivergedTrainingError, InvalidConfigError, SingularSystemError
from dpinn_lab.optim import (
    FIRST_ORDER,
    OptimizerState,
    damped_step,
    init_state,
    step_first_order,
    step_lma,
)


def test_gd_arithmetic():
    s = init_state("gd", 1, lr=0.1)
    new, _ = step_first_order(s, np.array([1.0]), np.array([2.0]))
    assert new[0] == pytest.approx(0.8, abs=1e-15)


@pytest.mark.parametrize("tag", FIRST_ORDER)
def test_zero_gradient_leaves_params(tag):
    s = init_state(tag, 3, lr=0.5)
    theta = np.array([1.0, -2.0, 3.0])
    new, s2 = step_first_order(s, theta, np.zeros(3))
    assert np.array_equal(new, theta)
    if tag == "adam":
        assert np.all(s2.m == 0) and np.all(s2.v == 0)


def test_accumulator_shapes():
    assert init_state("adam", 7).m.shape == (7,)
    assert init_state("adam", 7).v.shape == (7,)
    assert init_state("adagrad", 7).accum.shape == (7,)


def test_state_validation():
    with pytest.raises(InvalidConfigError):
        OptimizerState(tag="sgd")
    with pytest.raises(InvalidConfigError):
        OptimizerState(tag="lma", mu=-1.0)


def test_nonfinite_gradient_diverges():
    s = init_state("adam", 2)
    with pytest.raises(DivergedTrainingError):
        step_first_order(s, np.zeros(2), np.array([np.nan, 0.0]))


def test_adam_bowl():
    s = init_state("adam", 1, lr=1e-2)
    theta = np.array([1.0])
    for _ in range(10_000):
        theta, s = step_first_order(s, theta, 2.0 * theta)
    assert abs(theta[0]) < 1e-6


def test_adam_first_step_is_lr_sized():
    # bias correction makes the first step lr * sign(g) up to delta
    s = init_state("adam", 2, lr=0.01)
    new, _ = step_first_order(s, np.zeros(2), np.array([3.0, -0.5]))
    assert np.allclose(new, [-0.01, 0.01], rtol=1e-6)


def test_adagrad_formula():
    s = init_state("adagrad", 1, lr=0.1, delta=1e-8)
    new, s = step_first_order(s, np.array([1.0]), np.array([2.0]))
    assert new[0] == pytest.approx(1.0 - 0.1 * 2.0 / np.sqrt(4.0 + 1e-8), rel=1e-15)
    new, _ = step_first_order(s, new, np.array([1.0]))
    assert s.accum[0] == 4.0


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(FIRST_ORDER), st.integers(0, 2**31), st.integers(1, 6))
def test_monotone_on_half_norm(tag, seed, n):
    # Adam and Adagrad move about lr per step, so "small" means 100 * lr below |theta|
    rng = np.random.default_rng(seed)
    theta = rng.uniform(0.5, 1.0, n) * rng.choice([-1.0, 1.0], n)
    lr = {"gd": 0.05, "adagrad": 0.01, "adam": 1e-3}[tag]
    s = init_state(tag, n, lr=lr)
    f = 0.5 * theta @ theta
    for _ in range(100):
        theta, s = step_first_order(s, theta, theta)
        f_new = 0.5 * theta @ theta
        assert f_new <= f
        f = f_new


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(FIRST_ORDER), st.integers(0, 2**31))
def test_steppers_are_pure(tag, seed):
    rng = np.random.default_rng(seed)
    theta, g = rng.normal(size=4), rng.normal(size=4)
    s = init_state(tag, 4)
    a = step_first_order(s, theta.copy(), g.copy())
    b = step_first_order(s, theta.copy(), g.copy())
    assert np.array_equal(a[0], b[0])


def test_lma_linear_one_step():
    s = OptimizerState(tag="lma", mu=1e-14)
    theta = np.array([0.0])
    new, _ = step_lma(s, theta, theta - 3.0, np.array([[1.0]]))
    assert new[0] == pytest.approx(3.0, abs=1e-12)


def test_lma_large_damping_small_step():
    rng = np.random.default_rng(0)
    J, e = rng.normal(size=(6, 3)), rng.normal(size=6)
    norms = [np.linalg.norm(damped_step(J, e, mu)) for mu in (1e2, 1e4, 1e6, 1e8)]
    assert all(b < a for a, b in zip(norms, norms[1:]))
    assert norms[-1] < 1e-6


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31))
def test_lma_zero_damping_is_gauss_newton(seed):
    rng = np.random.default_rng(seed)
    J, e = rng.normal(size=(8, 3)), rng.normal(size=8)
    gn = np.linalg.lstsq(J, e, rcond=None)[0]
    assert np.max(np.abs(damped_step(J, e, 0.0) - gn)) <= 1e-10


def test_lma_adapts_damping():
    # linear least squares: every damped step lowers the residual, so mu shrinks
    rng = np.random.default_rng(1)
    A, y = rng.normal(size=(10, 3)), rng.normal(size=10)
    fn = lambda w: A @ w - y
    s = OptimizerState(tag="lma", mu=1.0, nu=10.0)
    w = np.zeros(3)
    w2, s2 = step_lma(s, w, fn(w), A, fn)
    assert s2.mu == pytest.approx(0.1)
    assert np.linalg.norm(fn(w2)) < np.linalg.norm(fn(w))


def test_lma_singular_raises():
    s = OptimizerState(tag="lma", mu=0.0, max_escalations=0)
    with pytest.raises(SingularSystemError):
        step_lma(s, np.zeros(2), np.ones(3), np.zeros((3, 2)))
    with pytest.raises(SingularSystemError):
        damped_step(np.zeros((3, 2)), np.ones(3), 0.0)


def test_lma_shape_check():
    s = OptimizerState(tag="lma")
    with pytest.raises(ValueError):
        step_lma(s, np.zeros(2), np.ones(3), np.zeros((3, 3)))


def test_lma_exponential_fit_from_near_truth():
    truth = np.array([1.0, 2.0, 0.0])
    x = np.linspace(0, 1, 20)
    y = exp_model(truth, x)
    fn = lambda w: exp_model(w, x) - y
    w = np.array([1.1, 1.9, 0.05])
    s = OptimizerState(tag="lma")
    for k in range(50):
        w, s = step_lma(s, w, fn(w), exp_jacobian(w, x), fn)
        if np.max(np.abs(w - truth)) < 1e-10:
            break
    assert k < 49
    assert np.allclose(w, truth, atol=1e-10)
