"""Streaming CUSUM detector on the quantile-loss subgradient.

The historical fit supplies beta_hat and the normalizer J_m^{-1/2}; each
monitored observation adds grad(x; beta_hat) * psi_tau(residual) to a
running p-vector.  The normalized statistic

    Gamma(k) = || J_m^{-1/2} cum_k ||_inf / z(m, k, gamma)

is compared against a tabulated critical value; the stopping time is the
first k where it crosses.  After an alarm the state keeps updating for
diagnostics, but the recorded stopping index is frozen.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .models import Observation, RegressionModel, as_tau, psi

__all__ = [
    "AllZeroMatrix",
    "DetectorState",
    "DimensionMismatch",
    "HistoricalArtifacts",
    "NoObservations",
    "Verdict",
    "boundary_z",
    "compute_jm",
    "init_detector",
    "inv_sqrt_psd",
    "push",
    "z_sup",
]


class AllZeroMatrix(Exception):
    """J_m has no positive eigenvalue; the detector cannot be normalized."""


class DimensionMismatch(Exception):
    """Observation dimensions disagree with the model."""


class NoObservations(Exception):
    """Statistic requested before any observation was pushed."""


def as_gamma(gamma: float) -> float:
    g = float(gamma)
    if not (0.0 <= g < 0.5):
        raise ValueError(f"gamma must lie in [0, 0.5), got {g}")
    return g


def compute_jm(model: RegressionModel, beta, X_hist, tau: float) -> np.ndarray:
    """tau(1-tau) times the mean outer product of gradients over the history."""
    t = as_tau(tau)
    X = np.atleast_2d(np.asarray(X_hist, dtype=float))
    if X.shape[0] < 1:
        raise ValueError("need at least one historical covariate row")
    G = model.grad_fn(X, np.asarray(beta, dtype=float))
    return t * (1.0 - t) * (G.T @ G) / X.shape[0]


def inv_sqrt_psd(J: np.ndarray, rel_tol: float = 1e-12) -> np.ndarray:
    """Generalized inverse square root of a symmetric PSD matrix.

    Eigenvalues at or below rel_tol * lambda_max are truncated to zero and
    inverted to zero (Moore-Penrose convention), which keeps the detector
    usable on rank-deficient designs.  Raises AllZeroMatrix when no
    eigenvalue is positive.
    """
    J = np.asarray(J, dtype=float)
    scale = float(np.linalg.norm(J))
    if scale > 0.0 and float(np.max(np.abs(J - J.T))) > 1e-10 * scale:
        raise ValueError("matrix is not symmetric to 1e-10 relative tolerance")
    eigval, eigvec = np.linalg.eigh(0.5 * (J + J.T))
    lam_max = float(eigval[-1])
    if lam_max <= 0.0:
        raise AllZeroMatrix("matrix has no positive eigenvalue")
    keep = eigval > rel_tol * lam_max
    inv_sqrt = np.where(keep, 1.0 / np.sqrt(np.where(keep, eigval, 1.0)), 0.0)
    R = (eigvec * inv_sqrt) @ eigvec.T
    return 0.5 * (R + R.T)


def psd_rank(J: np.ndarray, rel_tol: float = 1e-12) -> int:
    """Number of retained eigenvalues under the inv_sqrt_psd truncation rule."""
    eigval = np.linalg.eigvalsh(0.5 * (J + J.T))
    lam_max = float(eigval[-1])
    if lam_max <= 0.0:
        return 0
    return int(np.sum(eigval > rel_tol * lam_max))


def boundary_z(m: int, k: int, gamma: float) -> float:
    """Boundary function m^{1/2} (1 + k/m) (k/(k+m))^gamma."""
    if m < 1 or k < 1:
        raise ValueError("boundary_z requires m >= 1 and k >= 1")
    g = as_gamma(gamma)
    return np.sqrt(m) * (1.0 + k / m) * (k / (k + m)) ** g


@dataclass(frozen=True)
class HistoricalArtifacts:
    """Frozen outputs of the historical fit needed by the detector."""

    beta_hat: np.ndarray
    j_inv_sqrt: np.ndarray
    m: int
    tau: float
    model: RegressionModel

    def __post_init__(self):
        beta = np.asarray(self.beta_hat, dtype=float)
        J = np.asarray(self.j_inv_sqrt, dtype=float)
        if beta.shape != (self.model.p,):
            raise ValueError("beta_hat length must equal model.p")
        if J.shape != (self.model.p, self.model.p):
            raise ValueError("j_inv_sqrt must be p x p")
        scale = float(np.linalg.norm(J))
        if scale > 0.0 and float(np.max(np.abs(J - J.T))) > 1e-10 * scale:
            raise ValueError("j_inv_sqrt must be symmetric to 1e-10")
        if self.m < 1:
            raise ValueError("m must be >= 1")
        object.__setattr__(self, "beta_hat", beta)
        object.__setattr__(self, "j_inv_sqrt", J)
        object.__setattr__(self, "tau", as_tau(self.tau))


@dataclass(frozen=True)
class Verdict:
    k: int
    gamma_stat: float
    threshold: float
    alarmed: bool


@dataclass
class DetectorState:
    """Mutable monitoring state; pushes must be serialized in stream order."""

    artifacts: HistoricalArtifacts
    gamma: float
    critical_value: float
    k: int = 0
    cum: np.ndarray = field(default=None)
    running_max: float = 0.0
    alarm_at: int | None = None


def init_detector(
    artifacts: HistoricalArtifacts, gamma: float, critical_value: float
) -> DetectorState:
    if not critical_value > 0.0:
        raise ValueError(f"critical_value must be > 0, got {critical_value}")
    return DetectorState(
        artifacts=artifacts,
        gamma=as_gamma(gamma),
        critical_value=float(critical_value),
        k=0,
        cum=np.zeros(artifacts.model.p),
        running_max=0.0,
        alarm_at=None,
    )


def push(state: DetectorState, obs: Observation) -> Verdict:
    """Consume one observation and return the verdict at the new index k.

    Updates cum, the normalized statistic, the running supremum, and the
    frozen stopping index.  Pushes after an alarm keep updating statistics.
    """
    art = state.artifacts
    x = np.asarray(obs.x, dtype=float)
    if x.shape != (art.model.q,):
        raise DimensionMismatch(
            f"observation has {x.shape[0] if x.ndim == 1 else x.shape} covariates, "
            f"model expects q={art.model.q}"
        )
    X = x.reshape(1, art.model.q)
    resid = float(obs.y - art.model.eval_fn(X, art.beta_hat)[0])
    grad = art.model.grad_fn(X, art.beta_hat)[0]

    state.k += 1
    state.cum = state.cum + grad * psi(resid, art.tau)
    S = art.j_inv_sqrt @ state.cum
    gamma_stat = float(np.max(np.abs(S))) / boundary_z(art.m, state.k, state.gamma)
    if gamma_stat > state.running_max:
        state.running_max = gamma_stat
    if state.alarm_at is None and gamma_stat >= state.critical_value:
        state.alarm_at = state.k
    return Verdict(
        k=state.k,
        gamma_stat=gamma_stat,
        threshold=state.critical_value,
        alarmed=state.alarm_at is not None,
    )


def z_sup(state: DetectorState) -> float:
    """Supremum of Gamma over the indices pushed so far."""
    if state.k < 1:
        raise NoObservations("no observations have been pushed")
    return state.running_max
