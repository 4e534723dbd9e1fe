import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from omniloss.exceptions import NonFiniteError, ParameterError
from omniloss.optim import DECAY_PRESETS, Adam, grad_check, relative_error, truncated_sample


def test_decoupled_decay_hand_value():
    p = {"w": np.array([1.0])}
    Adam(p, lr=0.01, weight_decay=0.1).step({"w": np.array([0.0])})
    assert p["w"][0] == pytest.approx(0.999, abs=1e-15)


@pytest.mark.parametrize("g", [3.0, -0.2, 1e-3])
def test_first_step_moves_by_lr_sign(g):
    p = {"w": np.array([0.5])}
    Adam(p, lr=0.01, betas=(0.9, 0.999)).step({"w": np.array([g])})
    assert p["w"][0] == pytest.approx(0.5 - 0.01 * np.sign(g), abs=1e-7)


def test_zero_grad_no_decay_is_identity():
    p = {"w": np.array([1.5, -2.0])}
    opt = Adam(p, lr=0.1)
    for _ in range(5):
        opt.step({"w": np.zeros(2)})
    np.testing.assert_array_equal(p["w"], [1.5, -2.0])


def test_geometric_shrinkage():
    p = {"w": np.array([2.0, -1.0])}
    opt = Adam(p, lr=0.05, weight_decay=0.3)
    for _ in range(40):
        opt.step({"w": np.zeros(2)})
    np.testing.assert_allclose(p["w"], np.array([2.0, -1.0]) * (1 - 0.05 * 0.3) ** 40, rtol=1e-12)


@given(st.lists(st.floats(-10, 10), min_size=1, max_size=8), st.integers(1, 6))
@settings(max_examples=50, deadline=None)
def test_coupled_equals_decoupled_without_decay(values, steps):
    rng = np.random.default_rng(len(values) + steps)
    a = {"w": np.array(values)}
    b = {"w": np.array(values)}
    oa = Adam(a, lr=0.01, decay_mode="coupled")
    ob = Adam(b, lr=0.01, decay_mode="decoupled")
    for _ in range(steps):
        g = rng.normal(size=len(values))
        oa.step({"w": g})
        ob.step({"w": g})
    np.testing.assert_array_equal(a["w"], b["w"])


def test_coupled_decay_enters_the_moments():
    p = {"w": np.array([1.0])}
    opt = Adam(p, lr=0.01, weight_decay=0.5, decay_mode="coupled")
    opt.step({"w": np.array([0.0])})
    # the decay term alone is the gradient: first step is -lr * sign(lambda * p)
    assert p["w"][0] == pytest.approx(0.99, abs=1e-8)


def test_exclude_skips_decay():
    p = {"w": np.array([1.0]), "b": np.array([1.0])}
    Adam(p, lr=0.1, weight_decay=0.5, exclude=["b"]).step({"w": np.zeros(1), "b": np.zeros(1)})
    assert p["b"][0] == 1.0 and p["w"][0] < 1.0


def test_nonfinite_gradient_names_parameter():
    p = {"layer.W": np.zeros(2)}
    with pytest.raises(NonFiniteError) as info:
        Adam(p).step({"layer.W": np.array([0.0, np.nan])})
    assert info.value.name == "layer.W"
    np.testing.assert_array_equal(p["layer.W"], 0.0)


def test_bad_parameters():
    with pytest.raises(ParameterError):
        Adam({}, lr=0)
    with pytest.raises(ParameterError):
        Adam({}, decay_mode="both")


def test_presets():
    assert DECAY_PRESETS["no-decay"] == (0.0, 0.0)
    assert DECAY_PRESETS["small-decay"] == (5e-4, 1e-3)
    assert DECAY_PRESETS["medium-decay"] == (1e-4, 1e-3)
    assert DECAY_PRESETS["large-decay"] == (1e-5, 1e-3)


def test_grad_check_quadratic():
    A = np.array([[3.0, 1.0], [1.0, 2.0]])
    f = lambda x: 0.5 * x @ A @ x
    assert grad_check(f, lambda x: A @ x, np.array([0.7, -1.3])) <= 1e-9


def test_grad_check_detects_wrong_gradient():
    f = lambda x: float(np.sum(x**2))
    assert grad_check(f, lambda x: -2 * x, np.array([1.0, 2.0])) == pytest.approx(2.0)
    assert grad_check(f, lambda x: 0 * x, np.array([1.0, 2.0])) == pytest.approx(1.0)


def test_relative_error_floor():
    assert relative_error(0.0, 1e-12) == pytest.approx(1e-4)
    assert relative_error(2.0, 1.0) == pytest.approx(0.5)


def test_truncated_sample_wide_is_normal():
    z = truncated_sample(np.random.default_rng(0), 1, 5.0, size=10_000).ravel()
    assert stats.kstest(z, "norm").statistic < 0.02


@pytest.mark.parametrize("sigma", [0.05, 0.5, 2.0])
def test_truncated_sample_support(sigma):
    z = truncated_sample(np.random.default_rng(1), 16, sigma, size=500)
    assert z.shape == (500, 16)
    assert np.all(np.abs(z) <= sigma)


def test_truncated_sample_narrow_variance():
    z = truncated_sample(np.random.default_rng(2), 8, 0.05, size=2000)
    assert z.var() < 0.05**2
    assert z.var() == pytest.approx(0.05**2 / 3, rel=0.1)


def test_truncated_sample_deterministic():
    a = truncated_sample(np.random.default_rng(3), 4, 0.3)
    b = truncated_sample(np.random.default_rng(3), 4, 0.3)
    np.testing.assert_array_equal(a, b)
    with pytest.raises(ParameterError):
        truncated_sample(np.random.default_rng(3), 4, 0.0)
