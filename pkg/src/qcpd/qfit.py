"""Historical quantile fit: minimize the summed check loss over the search box.

The objective sum_i rho_tau(y_i - g(x_i; beta)) is piecewise smooth with
kinks wherever a residual crosses zero, so the minimizer is found with a
derivative-free Nelder-Mead simplex plus multi-start: one start at the box
center, the remaining starts uniform in the box from a seeded generator.
Box handling is projection: the objective is always evaluated at the
clamped point, and the returned parameter vector is clamped as well.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .models import Observation, RegressionModel, as_tau, check_loss

__all__ = [
    "FitConfig",
    "FitResult",
    "InsufficientData",
    "NonFiniteObjective",
    "fit_quantile",
    "objective_at",
]


class InsufficientData(Exception):
    """Fewer historical rows than parameters allow (m <= p)."""


class NonFiniteObjective(Exception):
    """Model evaluation overflowed inside the box; carries the offending beta."""

    def __init__(self, message: str, beta=None):
        super().__init__(message)
        self.beta = None if beta is None else np.asarray(beta, dtype=float)


@dataclass(frozen=True)
class FitConfig:
    """Optimizer knobs.

    xtol / max_iter default to box-scaled values at fit time when left None:
    xtol = 1e-8 * ||hi - lo||, max_iter = 2000 * p iterations.
    """

    restarts: int = 8
    max_iter: int | None = None
    xtol: float | None = None
    ftol: float = 1e-10
    seed: int = 0

    def __post_init__(self):
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if self.max_iter is not None and self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.xtol is not None and not self.xtol > 0.0:
            raise ValueError("xtol must be > 0")
        if not self.ftol > 0.0:
            raise ValueError("ftol must be > 0")


@dataclass(frozen=True)
class FitResult:
    beta_hat: np.ndarray
    objective: float
    converged: bool
    starts_used: int


def stack_data(data) -> tuple[np.ndarray, np.ndarray]:
    """Row-stack a list of Observation (or an (X, y) pair) into arrays."""
    if isinstance(data, tuple) and len(data) == 2:
        X, y = data
        return np.atleast_2d(np.asarray(X, dtype=float)), np.asarray(y, dtype=float)
    X = np.vstack([np.asarray(o.x, dtype=float) for o in data])
    y = np.array([o.y for o in data], dtype=float)
    return X, y


def objective_at(
    model: RegressionModel, data, tau: float, beta: np.ndarray
) -> float:
    """Sum of check losses at a fixed parameter vector."""
    t = as_tau(tau)
    X, y = stack_data(data)
    beta = np.asarray(beta, dtype=float)
    with np.errstate(over="ignore", invalid="ignore"):
        resid = y - model.eval_fn(X, beta)
    if not np.all(np.isfinite(resid)):
        raise NonFiniteObjective(
            f"model evaluation is non-finite at beta={beta.tolist()}", beta=beta
        )
    return float(np.sum(check_loss(resid, t)))


def _nelder_mead(f, x0, step, xtol, ftol, max_iter):
    """Minimize f from x0; returns (x_best, f_best, hit_tolerance).

    Standard reflexion/expansion/contraction/shrink coefficients (1, 2, 1/2,
    1/2).  Stops when the simplex diameter (max coordinate spread from the
    best vertex) falls below xtol OR the objective spread falls below ftol,
    or after max_iter iterations.  All comparisons and sorts are stable, so
    the trajectory is deterministic.
    """
    n = x0.size
    sim = np.empty((n + 1, n))
    sim[0] = x0
    for i in range(n):
        v = x0.copy()
        v[i] += step[i]
        sim[i + 1] = v
    fv = np.array([f(v) for v in sim])

    converged = False
    for _ in range(max_iter):
        order = np.argsort(fv, kind="stable")
        sim, fv = sim[order], fv[order]
        with np.errstate(invalid="ignore"):  # inf - inf when nothing is finite yet
            small = np.max(np.abs(sim[1:] - sim[0])) <= xtol or fv[-1] - fv[0] <= ftol
        if small:
            converged = True
            break
        centroid = sim[:-1].mean(axis=0)
        xr = centroid + (centroid - sim[-1])
        fr = f(xr)
        if fr < fv[0]:
            xe = centroid + 2.0 * (centroid - sim[-1])
            fe = f(xe)
            sim[-1], fv[-1] = (xe, fe) if fe < fr else (xr, fr)
        elif fr < fv[-2]:
            sim[-1], fv[-1] = xr, fr
        else:
            if fr < fv[-1]:  # outside contraction
                xc = centroid + 0.5 * (centroid - sim[-1])
                fc = f(xc)
                if fc <= fr:
                    sim[-1], fv[-1] = xc, fc
                else:
                    _shrink(sim, fv, f)
            else:  # inside contraction
                xc = centroid - 0.5 * (centroid - sim[-1])
                fc = f(xc)
                if fc < fv[-1]:
                    sim[-1], fv[-1] = xc, fc
                else:
                    _shrink(sim, fv, f)
    order = np.argsort(fv, kind="stable")
    return sim[order][0], float(fv[order][0]), converged


def _shrink(sim, fv, f):
    for i in range(1, sim.shape[0]):
        sim[i] = sim[0] + 0.5 * (sim[i] - sim[0])
        fv[i] = f(sim[i])


def fit_quantile(
    model: RegressionModel, data, tau: float, cfg: FitConfig = FitConfig()
) -> FitResult:
    """Compute the historical quantile estimator over the model's box.

    Runs cfg.restarts Nelder-Mead starts and returns the best vertex by
    objective value, ties broken by lowest start index.  Raises
    InsufficientData when m <= p and NonFiniteObjective when no start ever
    found a finite objective inside the box.
    """
    t = as_tau(tau)
    X, y = stack_data(data)
    m = y.size
    if m <= model.p:
        raise InsufficientData(f"need at least p+1={model.p + 1} rows, got m={m}")

    lo, hi = model.box[:, 0], model.box[:, 1]
    xtol = cfg.xtol if cfg.xtol is not None else 1e-8 * float(np.linalg.norm(hi - lo))
    max_iter = cfg.max_iter if cfg.max_iter is not None else 2000 * model.p

    def objective(beta):
        b = np.clip(beta, lo, hi)
        with np.errstate(over="ignore", invalid="ignore"):
            resid = y - model.eval_fn(X, b)
            val = np.sum(resid * (t - (resid <= 0.0)))
        return float(val) if np.isfinite(val) else np.inf

    width = hi - lo
    step = np.where(width > 0.0, 0.05 * width, 1e-3)
    rng = np.random.default_rng(cfg.seed)
    starts = [0.5 * (lo + hi)]
    starts += [rng.uniform(lo, hi) for _ in range(cfg.restarts - 1)]

    best = None
    for idx, x0 in enumerate(starts):
        xb, fb, conv = _nelder_mead(objective, np.asarray(x0, dtype=float),
                                    step, xtol, cfg.ftol, max_iter)
        if best is None or fb < best[1]:
            best = (xb, fb, conv, idx)
    beta_hat, f_best, conv, _ = best
    if not np.isfinite(f_best):
        raise NonFiniteObjective(
            f"objective non-finite at every start; last beta={beta_hat.tolist()}",
            beta=beta_hat,
        )
    return FitResult(
        beta_hat=np.clip(beta_hat, lo, hi),
        objective=f_best,
        converged=conv,
        starts_used=len(starts),
    )
