"""Regression-model abstraction and quantile check-function primitives.

A model is a pair of callables ``eval_fn(X, beta)`` / ``grad_fn(X, beta)``
operating on row-stacked covariates ``X`` of shape ``(n, q)``, together with
the parameter dimension ``p`` and a compact search box.  Two models ship
built in: ``linear`` (intercept plus one slope per covariate) and ``growth``
(saturating exponential).  User models are registered programmatically via
:func:`register_model`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = [
    "Observation",
    "QuantileLevel",
    "RegressionModel",
    "builtin_growth",
    "builtin_linear",
    "check_loss",
    "finite_difference_grad",
    "get_model",
    "psi",
    "register_model",
]

DEFAULT_BOX_HALFWIDTH = 10.0


@dataclass(frozen=True)
class QuantileLevel:
    """Quantile index tau, strictly inside (0, 1)."""

    tau: float

    def __post_init__(self):
        if not (0.0 < self.tau < 1.0):
            raise ValueError(f"tau must lie strictly in (0, 1), got {self.tau}")


def as_tau(tau: float | QuantileLevel) -> float:
    """Normalize a quantile level (float or QuantileLevel) to a checked float."""
    t = tau.tau if isinstance(tau, QuantileLevel) else float(tau)
    if not (0.0 < t < 1.0):
        raise ValueError(f"tau must lie strictly in (0, 1), got {t}")
    return t


@dataclass(frozen=True)
class Observation:
    """One data point: covariate vector x (length q) and scalar response y."""

    x: np.ndarray
    y: float

    def __post_init__(self):
        x = np.atleast_1d(np.asarray(self.x, dtype=float))
        if x.ndim != 1 or not np.all(np.isfinite(x)):
            raise ValueError("covariates must be a finite 1-D vector")
        if not np.isfinite(self.y):
            raise ValueError("response must be finite")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", float(self.y))


@dataclass(frozen=True)
class RegressionModel:
    """Parametric regression function with its parameter gradient.

    ``eval_fn(X, beta)`` maps row-stacked covariates ``(n, q)`` and a
    parameter vector ``(p,)`` to fitted values ``(n,)``; ``grad_fn`` returns
    the ``(n, p)`` matrix of parameter derivatives at the same points.
    ``box`` is the compact search region, one ``[lo, hi]`` row per parameter.
    Instances are immutable and safe to share across threads.
    """

    name: str
    p: int
    q: int
    box: np.ndarray
    eval_fn: Callable[[np.ndarray, np.ndarray], np.ndarray] = field(repr=False)
    grad_fn: Callable[[np.ndarray, np.ndarray], np.ndarray] = field(repr=False)

    def __post_init__(self):
        if self.p < 1 or self.q < 1:
            raise ValueError("model dimensions p, q must be >= 1")
        box = np.asarray(self.box, dtype=float)
        if box.shape != (self.p, 2):
            raise ValueError(f"box must have shape ({self.p}, 2), got {box.shape}")
        if not np.all(box[:, 0] <= box[:, 1]):
            raise ValueError("box must satisfy lo <= hi per coordinate")
        object.__setattr__(self, "box", box)

    # Convenience single-point accessors; the *_fn callables stay vectorized.
    def eval(self, x, beta) -> float:
        return float(self.eval_fn(self._row(x), np.asarray(beta, dtype=float))[0])

    def grad(self, x, beta) -> np.ndarray:
        return np.asarray(
            self.grad_fn(self._row(x), np.asarray(beta, dtype=float))[0], dtype=float
        )

    def _row(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if x.shape != (self.q,):
            raise ValueError(f"covariate vector must have length q={self.q}")
        return x.reshape(1, self.q)


def check_loss(u, tau: float | QuantileLevel):
    """Quantile check loss u * (tau - 1{u <= 0}); vectorized over u."""
    t = as_tau(tau)
    u = np.asarray(u, dtype=float)
    out = u * (t - (u <= 0.0)) + 0.0  # + 0.0 turns -0.0 into +0.0
    return float(out) if out.ndim == 0 else out


def psi(u, tau: float | QuantileLevel):
    """Check-loss subgradient tau - 1{u <= 0}; the u = 0 tie takes tau - 1."""
    t = as_tau(tau)
    u = np.asarray(u, dtype=float)
    out = t - (u <= 0.0)
    return float(out) if out.ndim == 0 else out


def _default_box(p: int) -> np.ndarray:
    w = DEFAULT_BOX_HALFWIDTH
    return np.tile([-w, w], (p, 1))


def _as_box(box, p: int) -> np.ndarray:
    return _default_box(p) if box is None else np.asarray(box, dtype=float)


def _linear_eval(X, beta):
    return beta[0] + X @ beta[1:]


def _linear_grad(X, beta):
    return np.hstack([np.ones((X.shape[0], 1)), X])


def builtin_linear(q: int = 1, box=None) -> RegressionModel:
    """Linear model with intercept: g(x; beta) = beta_1 + beta_2 x_1 + ...

    p = q + 1.  A pure x'beta form without intercept is obtained by passing
    a constant covariate column instead.
    """
    if q < 1:
        raise ValueError("q must be >= 1")
    return RegressionModel(
        name="linear", p=q + 1, q=q, box=_as_box(box, q + 1),
        eval_fn=_linear_eval, grad_fn=_linear_grad,
    )


def _growth_eval(X, beta):
    return beta[0] - np.exp(-beta[1] * X[:, 0])


def _growth_grad(X, beta):
    x = X[:, 0]
    e = np.exp(-beta[1] * x)
    return np.column_stack([np.ones_like(x), x * e])


def builtin_growth(box=None) -> RegressionModel:
    """Growth model g(x; b) = b1 - exp(-b2 x), p = 2, q = 1."""
    return RegressionModel(
        name="growth", p=2, q=1, box=_as_box(box, 2),
        eval_fn=_growth_eval, grad_fn=_growth_grad,
    )


def finite_difference_grad(eval_fn) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    """Central-difference gradient fallback for models without an analytic one.

    Step per coordinate: h_j = 1e-6 * (1 + |beta_j|).
    """

    def grad_fn(X, beta):
        beta = np.asarray(beta, dtype=float)
        n, p = X.shape[0], beta.size
        out = np.empty((n, p))
        for j in range(p):
            h = 1e-6 * (1.0 + abs(beta[j]))
            bp, bm = beta.copy(), beta.copy()
            bp[j] += h
            bm[j] -= h
            out[:, j] = (eval_fn(X, bp) - eval_fn(X, bm)) / (2.0 * h)
        return out

    return grad_fn


# ---------------------------------------------------------------------------
# Registry: name-based lookup for config/CLI use
# ---------------------------------------------------------------------------

_REGISTRY: dict[str, Callable[..., RegressionModel]] = {}


def register_model(name: str, factory: Callable[..., RegressionModel]) -> None:
    """Register a model factory callable ``factory(q=..., box=...)`` under a name."""
    _REGISTRY[name] = factory


def get_model(name: str, q: int = 1, box=None) -> RegressionModel:
    """Build a registered model by name ("linear" | "growth" | user-registered)."""
    if name not in _REGISTRY:
        known = ", ".join(sorted(_REGISTRY))
        raise KeyError(f"unknown model {name!r}; known models: {known}")
    return _REGISTRY[name](q=q, box=box)


register_model("linear", lambda q=1, box=None: builtin_linear(q=q, box=box))
register_model("growth", lambda q=1, box=None: builtin_growth(box=box))
