import math

import numpy as np
import pytest

from qcpd.detector import (
    AllZeroMatrix,
    DimensionMismatch,
    HistoricalArtifacts,
    NoObservations,
    boundary_z,
    compute_jm,
    init_detector,
    inv_sqrt_psd,
    psd_rank,
    push,
    z_sup,
)
from qcpd.models import Observation, RegressionModel, builtin_growth, builtin_linear, psi


def no_intercept_model(q=1):
    return RegressionModel(
        name="noint", p=q, q=q, box=np.tile([-10.0, 10.0], (q, 1)),
        eval_fn=lambda X, b: X @ b,
        grad_fn=lambda X, b: np.array(X, dtype=float),
    )


def make_artifacts(model, beta, j_inv_sqrt, m=100, tau=0.5):
    return HistoricalArtifacts(
        beta_hat=np.asarray(beta, dtype=float),
        j_inv_sqrt=np.asarray(j_inv_sqrt, dtype=float),
        m=m, tau=tau, model=model,
    )


# ---------------------------------------------------------------------------
# compute_jm
# ---------------------------------------------------------------------------

def test_jm_constant_design():
    m = no_intercept_model()
    J = compute_jm(m, [0.3], [[1.0], [1.0]], 0.5)
    np.testing.assert_allclose(J, [[0.25]])


def test_jm_growth_at_origin():
    J = compute_jm(builtin_growth(), [1.0, 2.0], [[0.0]], 0.5)
    np.testing.assert_allclose(J, 0.25 * np.array([[1.0, 0.0], [0.0, 0.0]]))


def test_jm_matches_dense_recomputation():
    rng = np.random.default_rng(5)
    X = rng.standard_normal((200, 1))
    model = builtin_growth()
    beta = np.array([0.8, 1.2])
    J = compute_jm(model, beta, X, 0.3)
    # independent summation-order oracle
    acc = np.zeros((2, 2))
    for i in range(200):
        g = model.grad(X[i], beta)
        acc += np.outer(g, g)
    np.testing.assert_allclose(J, 0.3 * 0.7 * acc / 200, atol=1e-12)
    assert np.all(np.linalg.eigvalsh(J) >= -1e-12)


# ---------------------------------------------------------------------------
# inv_sqrt_psd
# ---------------------------------------------------------------------------

def test_inv_sqrt_identity_and_diag():
    np.testing.assert_allclose(inv_sqrt_psd(np.eye(2)), np.eye(2), atol=1e-14)
    np.testing.assert_allclose(
        inv_sqrt_psd(np.diag([4.0, 9.0])), np.diag([0.5, 1.0 / 3.0]), atol=1e-14
    )


def test_inv_sqrt_reconstruction_property():
    rng = np.random.default_rng(100)
    for _ in range(100):
        p = int(rng.integers(1, 6))
        Q, _ = np.linalg.qr(rng.standard_normal((p, p)))
        lam = rng.uniform(0.1, 10.0, size=p)
        A = (Q * lam) @ Q.T
        A = 0.5 * (A + A.T)
        R = inv_sqrt_psd(A)
        assert np.linalg.norm(R @ A @ R - np.eye(p)) < 1e-8
        assert np.allclose(R, R.T)


def test_inv_sqrt_rank_deficient_is_pseudo_inverse():
    A = np.diag([4.0, 0.0])
    R = inv_sqrt_psd(A)
    np.testing.assert_allclose(R, np.diag([0.5, 0.0]), atol=1e-14)
    # reconstruction gives the projector onto the retained eigenspace
    np.testing.assert_allclose(R @ A @ R, np.diag([1.0, 0.0]), atol=1e-12)
    assert psd_rank(A) == 1


def test_inv_sqrt_errors():
    with pytest.raises(AllZeroMatrix):
        inv_sqrt_psd(np.zeros((2, 2)))
    with pytest.raises(AllZeroMatrix):
        inv_sqrt_psd(-np.eye(2))
    with pytest.raises(ValueError):
        inv_sqrt_psd(np.array([[1.0, 0.5], [0.0, 1.0]]))


# ---------------------------------------------------------------------------
# boundary_z
# ---------------------------------------------------------------------------

def test_boundary_z_examples():
    assert boundary_z(100, 100, 0.0) == pytest.approx(20.0, abs=1e-12)
    assert boundary_z(100, 100, 0.25) == pytest.approx(20.0 * 0.5**0.25, abs=1e-12)
    assert boundary_z(400, 1, 0.0) == pytest.approx(20.05, abs=1e-12)


def test_boundary_z_positive_and_increasing_in_k():
    ks = np.arange(1, 10_001)
    for m in (10, 100, 1000):
        for gamma in (0.0, 0.15, 0.25, 0.35, 0.45, 0.49):
            z = np.sqrt(m) * (1 + ks / m) * (ks / (ks + m)) ** gamma
            # formula sanity at a few sampled points against the scalar op
            for k in (1, 7, 500, 10_000):
                assert boundary_z(m, int(k), gamma) == pytest.approx(z[k - 1])
            assert np.all(z > 0)
            assert np.all(np.diff(z) > 0)


def test_boundary_z_preconditions():
    with pytest.raises(ValueError):
        boundary_z(0, 1, 0.0)
    with pytest.raises(ValueError):
        boundary_z(10, 0, 0.0)
    with pytest.raises(ValueError):
        boundary_z(10, 1, 0.5)


# ---------------------------------------------------------------------------
# detector state machine
# ---------------------------------------------------------------------------

def test_init_detector():
    art = make_artifacts(builtin_growth(), [1.0, 1.0], np.eye(2))
    st = init_detector(art, 0.25, 2.5)
    assert st.k == 0 and st.running_max == 0.0 and st.alarm_at is None
    assert st.cum.shape == (2,)
    with pytest.raises(ValueError):
        init_detector(art, 0.25, 0.0)


def test_push_hand_example():
    # p=1, no intercept, X=1, J^{-1/2}=2, positive residual, tau=0.5, m=100
    art = make_artifacts(no_intercept_model(), [0.0], [[2.0]], m=100)
    st = init_detector(art, 0.0, 1e9)
    v = push(st, Observation(np.array([1.0]), 5.0))
    assert v.k == 1
    assert v.gamma_stat == pytest.approx(1.0 / (10.0 * 1.01), abs=1e-12)
    assert not v.alarmed


def test_push_dimension_mismatch():
    art = make_artifacts(no_intercept_model(q=2), [0.0, 0.0], np.eye(2))
    st = init_detector(art, 0.0, 1.0)
    with pytest.raises(DimensionMismatch):
        push(st, Observation(np.array([1.0]), 0.0))


def _batch_reference(art, gamma, stream):
    """From-scratch evaluation of the cumulative statistic trajectory."""
    model, beta, tau, m = art.model, art.beta_hat, art.tau, art.m
    X = np.vstack([o.x for o in stream])
    y = np.array([o.y for o in stream])
    resid = y - model.eval_fn(X, beta)
    G = model.grad_fn(X, beta)
    cum = np.cumsum(G * psi(resid, tau)[:, None], axis=0)
    S = cum @ art.j_inv_sqrt.T
    ks = np.arange(1, len(stream) + 1)
    z = np.sqrt(m) * (1 + ks / m) * (ks / (ks + m)) ** gamma
    return np.max(np.abs(S), axis=1) / z


@pytest.mark.parametrize("model_factory,tau,gamma,seed", [
    (lambda: builtin_linear(1), 0.3, 0.0, 1),
    (lambda: builtin_linear(1), 0.5, 0.25, 2),
    (builtin_growth, 0.7, 0.45, 3),
    (builtin_growth, 0.5, 0.49, 4),
])
def test_incremental_matches_batch(model_factory, tau, gamma, seed):
    rng = np.random.default_rng(seed)
    model = model_factory()
    n = int(rng.integers(100, 1000))
    beta = rng.uniform(-1.5, 1.5, size=model.p)
    A = rng.standard_normal((model.p, model.p))
    J = A @ A.T + 0.5 * np.eye(model.p)
    art = make_artifacts(model, beta, inv_sqrt_psd(J), m=137, tau=tau)
    stream = [
        Observation(rng.standard_normal(model.q), float(rng.standard_normal()))
        for _ in range(n)
    ]
    st = init_detector(art, gamma, 1e9)
    gam_inc = np.array([push(st, o).gamma_stat for o in stream])
    gam_ref = _batch_reference(art, gamma, stream)
    assert np.max(np.abs(gam_inc - gam_ref)) <= 1e-10
    assert z_sup(st) == pytest.approx(np.max(gam_ref), abs=1e-9)


def test_alarm_freeze_and_stopping_time():
    rng = np.random.default_rng(8)
    model = builtin_linear(1)
    art = make_artifacts(model, [0.0, 0.0], 2.0 * np.eye(2), m=50)
    stream = [
        Observation(rng.standard_normal(1), float(rng.standard_normal() + 1.0))
        for _ in range(400)
    ]
    threshold = 1.2
    st = init_detector(art, 0.25, threshold)
    verdicts = [push(st, o) for o in stream]
    gam = np.array([v.gamma_stat for v in verdicts])
    crossed = np.nonzero(gam >= threshold)[0]
    assert crossed.size > 0
    k_hat = int(crossed[0]) + 1
    assert st.alarm_at == k_hat  # exact batch argmin scan
    assert all(v.alarmed == (v.k >= k_hat) for v in verdicts)
    # alarms never un-freeze
    push(st, stream[0])
    assert st.alarm_at == k_hat


def test_huge_threshold_never_alarms():
    art = make_artifacts(no_intercept_model(), [0.0], [[1.0]], m=10)
    st = init_detector(art, 0.0, 1e9)
    rng = np.random.default_rng(0)
    for _ in range(100):
        v = push(st, Observation(rng.standard_normal(1), float(rng.standard_normal())))
        assert not v.alarmed
    assert st.alarm_at is None


def test_cum_bounded_by_psi_bound():
    rng = np.random.default_rng(12)
    model = builtin_linear(1)
    tau = 0.3
    art = make_artifacts(model, [0.2, -0.4], np.eye(2), m=25, tau=tau)
    st = init_detector(art, 0.15, 1e9)
    grad_max = 0.0
    for _ in range(300):
        o = Observation(rng.standard_normal(1), float(rng.standard_normal()))
        grad_max = max(grad_max, np.max(np.abs(model.grad(o.x, art.beta_hat))))
        push(st, o)
        assert np.max(np.abs(st.cum)) <= st.k * grad_max * max(tau, 1 - tau) + 1e-12


def test_zero_mean_summands_under_h0():
    # with the true parameter in place of the estimate, each summand has
    # exact mean zero at tau = 0.5 under symmetric errors
    rng = np.random.default_rng(77)
    model = builtin_growth()
    beta = np.array([1.0, 1.0])
    reps, k = 10_000, 50
    means = np.empty((reps, 2))
    for r in range(reps):
        X = rng.standard_normal((k, 1))
        eps = rng.standard_normal(k)
        G = model.grad_fn(X, beta)
        cum = np.sum(G * psi(eps, 0.5)[:, None], axis=0)
        means[r] = cum / k
    mu = means.mean(axis=0)
    se = means.std(axis=0, ddof=1) / math.sqrt(reps)
    assert np.all(np.abs(mu) <= 5.0 * se)


def test_z_sup_requires_observations():
    art = make_artifacts(no_intercept_model(), [0.0], [[1.0]])
    st = init_detector(art, 0.0, 1.0)
    with pytest.raises(NoObservations):
        z_sup(st)


def test_artifacts_validation():
    with pytest.raises(ValueError):
        make_artifacts(builtin_growth(), [1.0], np.eye(2))  # wrong beta length
    with pytest.raises(ValueError):
        make_artifacts(builtin_growth(), [1.0, 1.0], np.array([[1.0, 0.5], [0.0, 1.0]]))
    with pytest.raises(ValueError):
        make_artifacts(builtin_growth(), [1.0, 1.0], np.eye(2), m=0)
