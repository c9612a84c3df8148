import numpy as np
import pytest
from hypothesis import given, strategies as st

from qcpd.models import (
    Observation,
    QuantileLevel,
    builtin_growth,
    builtin_linear,
    check_loss,
    finite_difference_grad,
    get_model,
    psi,
    register_model,
)

finite_floats = st.floats(min_value=-1e8, max_value=1e8, allow_nan=False)
taus = st.floats(min_value=1e-6, max_value=1.0 - 1e-6)


def test_check_loss_examples():
    assert check_loss(2.0, 0.5) == 1.0
    assert check_loss(-4.0, 0.25) == 3.0
    assert check_loss(0.0, 0.9) == 0.0


def test_psi_examples():
    assert psi(1.3, 0.5) == 0.5
    assert psi(-0.2, 0.5) == -0.5
    assert psi(0.0, 0.25) == -0.75  # tie at zero takes the "<=" branch


@given(u=finite_floats, tau=taus)
def test_check_loss_is_u_times_psi(u, tau):
    assert check_loss(u, tau) == u * psi(u, tau)


@given(
    u=st.one_of(
        st.just(0.0),
        st.floats(min_value=1e-12, max_value=1e8),
        st.floats(min_value=-1e8, max_value=-1e-12),
    ),
    tau=taus,
)
def test_check_loss_nonnegative_zero_iff_origin(u, tau):
    # u * tau underflows for subnormal u, so stay in the normal range
    v = check_loss(u, tau)
    assert v >= 0.0
    assert (v == 0.0) == (u == 0.0)


@given(u=finite_floats, tau=taus)
def test_psi_two_values(u, tau):
    assert psi(u, tau) in (tau, tau - 1.0)


def test_check_loss_convex_midpoint():
    rng = np.random.default_rng(0)
    for _ in range(200):
        a, b = rng.uniform(-50, 50, size=2)
        tau = rng.uniform(0.05, 0.95)
        mid = check_loss(0.5 * (a + b), tau)
        assert mid <= 0.5 * (check_loss(a, tau) + check_loss(b, tau)) + 1e-12


def test_psi_zero_mean_at_median():
    # F(0) = tau holds for symmetric laws at tau = 0.5
    n = 10**5
    eps = np.random.default_rng(7).standard_normal(n)
    assert abs(np.mean(psi(eps, 0.5))) <= 4.0 / np.sqrt(n)


def test_vectorized_matches_scalar():
    u = np.array([-1.0, 0.0, 2.5])
    np.testing.assert_array_equal(psi(u, 0.3), [psi(x, 0.3) for x in u])
    np.testing.assert_array_equal(check_loss(u, 0.3), [check_loss(x, 0.3) for x in u])


def test_tau_validation():
    with pytest.raises(ValueError):
        check_loss(1.0, 0.0)
    with pytest.raises(ValueError):
        psi(1.0, 1.0)
    with pytest.raises(ValueError):
        QuantileLevel(-0.2)
    assert QuantileLevel(0.25).tau == 0.25


def test_builtin_linear_examples():
    m = builtin_linear(1)
    assert m.p == 2 and m.q == 1
    assert m.eval([3.0], [1.0, 1.0]) == 4.0
    np.testing.assert_array_equal(m.grad([3.0], [1.0, 1.0]), [1.0, 3.0])
    assert m.eval([0.0], [2.5, -1.0]) == 2.5


def test_builtin_linear_multivariate():
    m = builtin_linear(3)
    assert m.p == 4
    assert m.eval([1.0, 2.0, 3.0], [1.0, 1.0, 1.0, 1.0]) == 7.0


def test_builtin_growth_examples():
    m = builtin_growth()
    assert (m.p, m.q) == (2, 1)
    assert m.eval(0.0, (1.0, 1.0)) == 0.0
    np.testing.assert_array_equal(m.grad(0.0, (1.0, 2.0)), [1.0, 0.0])
    assert m.eval(1.0, (1.0, 1.0)) == pytest.approx(1.0 - np.exp(-1.0), abs=1e-12)


@pytest.mark.parametrize("factory", [lambda: builtin_linear(1), builtin_growth])
def test_gradient_matches_central_differences(factory):
    model = factory()
    fd = finite_difference_grad(model.eval_fn)
    rng = np.random.default_rng(42)
    for _ in range(100):
        beta = rng.uniform(-3.0, 3.0, size=model.p)
        X = rng.uniform(-3.0, 3.0, size=(1, model.q))
        g_an = model.grad_fn(X, beta)[0]
        g_fd = fd(X, beta)[0]
        denom = np.maximum(np.abs(g_an), 1.0)
        assert np.all(np.abs(g_an - g_fd) / denom <= 1e-5)


def test_finite_difference_fallback_builds_usable_model():
    # user model without an analytic gradient
    def eval_fn(X, beta):
        return beta[0] * np.sin(beta[1] * X[:, 0])

    fd = finite_difference_grad(eval_fn)
    X = np.array([[0.7]])
    beta = np.array([2.0, 1.5])
    expect = np.array([np.sin(1.05), 2.0 * 0.7 * np.cos(1.05)])
    assert np.allclose(fd(X, beta)[0], expect, rtol=1e-7, atol=1e-7)


def test_observation_validation():
    o = Observation(np.array([1.0, 2.0]), 3.0)
    assert o.x.shape == (2,) and o.y == 3.0
    with pytest.raises(ValueError):
        Observation(np.array([np.nan]), 1.0)
    with pytest.raises(ValueError):
        Observation(np.array([1.0]), np.inf)


def test_box_validation():
    with pytest.raises(ValueError):
        builtin_growth(box=[[1.0, -1.0], [0.0, 1.0]])
    m = builtin_growth(box=[[-2.0, 2.0], [0.0, 5.0]])
    np.testing.assert_array_equal(m.box, [[-2.0, 2.0], [0.0, 5.0]])


def test_registry():
    assert get_model("linear", q=2).p == 3
    assert get_model("growth").name == "growth"
    with pytest.raises(KeyError):
        get_model("nope")
    register_model("affine2", lambda q=1, box=None: builtin_linear(q=2, box=box))
    assert get_model("affine2").p == 3


def test_eval_dimension_check():
    m = builtin_linear(2)
    with pytest.raises(ValueError):
        m.eval([1.0], [1.0, 1.0, 1.0])
