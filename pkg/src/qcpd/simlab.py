"""Monte-Carlo replication harness: sizes, powers, and stopping-time stats.

A Scenario is the full generative description of one experiment cell: the
model, pre- and post-change parameters, change location, horizon, error
law, and the (gamma, alpha, procedure) of the detector.  Replication r of
a scenario draws its covariates and errors from counter-based substreams
keyed on (design_seed, r) and (noise_seed, r), so any subset of
replications reproduces identically and scenarios sharing seeds are
pathwise paired.

Shipped presets mirror the standard study layouts (linear and growth
models, normal and Cauchy errors, open- and closed-end monitoring); they
live in presets.json next to this module and users may point the runner at
an edited copy.
"""

from __future__ import annotations

import csv
import json
import math
import statistics
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .critvals import CriticalValueTable, MissingCriticalValue, Procedure
from .detector import HistoricalArtifacts, compute_jm, init_detector, inv_sqrt_psd, push, z_sup
from .models import Observation, RegressionModel, as_tau, get_model
from .qfit import FitConfig, fit_quantile, stack_data

__all__ = [
    "AggregateReport",
    "ErrorLaw",
    "MissingCriticalValue",
    "ReplicationSummary",
    "Scenario",
    "generate_stream",
    "load_presets",
    "preset_scenarios",
    "report_csv",
    "run_experiment",
    "run_replication",
]

CSV_HEADER = [
    "scenario", "procedure", "gamma", "alpha", "error_law", "beta1", "k0",
    "n_reps", "rate", "khat_median", "khat_min", "khat_max",
]


@dataclass(frozen=True)
class ErrorLaw:
    """Error distribution: normal(mean, sd) or cauchy(location, scale)."""

    kind: str
    loc: float
    scale: float

    def __post_init__(self):
        if self.kind not in ("normal", "cauchy"):
            raise ValueError(f"unknown error law {self.kind!r}")
        if not self.scale > 0.0:
            raise ValueError("scale must be > 0")

    @classmethod
    def normal(cls, mean: float = 0.0, sd: float = 1.0) -> "ErrorLaw":
        return cls("normal", float(mean), float(sd))

    @classmethod
    def cauchy(cls, location: float = 0.0, scale: float = 1.0) -> "ErrorLaw":
        return cls("cauchy", float(location), float(scale))

    @classmethod
    def parse(cls, label: str) -> "ErrorLaw":
        """Parse "normal(0,1)" / "cauchy(0,2)" style labels."""
        s = label.strip().lower()
        for kind in ("normal", "cauchy"):
            if s.startswith(kind + "(") and s.endswith(")"):
                parts = s[len(kind) + 1 : -1].split(",")
                if len(parts) == 2:
                    return cls(kind, float(parts[0]), float(parts[1]))
        raise ValueError(f"cannot parse error law {label!r}")

    def label(self) -> str:
        return f"{self.kind}({self.loc:g},{self.scale:g})"

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.kind == "normal":
            return self.loc + self.scale * rng.standard_normal(n)
        return self.loc + self.scale * rng.standard_cauchy(n)

    def cdf_at_zero(self) -> float:
        z = -self.loc / self.scale
        if self.kind == "normal":
            return 0.5 * (1.0 + math.erf(z / math.sqrt(2.0)))
        return 0.5 + math.atan(z) / math.pi


def _rep_rng(seed: int, rep: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=[int(seed), int(rep)]))


@dataclass(frozen=True)
class Scenario:
    """Generative description of one simulation experiment cell."""

    name: str
    model: RegressionModel
    beta0: np.ndarray
    beta1: np.ndarray
    k0: int
    m: int
    T_m: int
    tau: float
    gamma: float
    alpha: float
    proc: Procedure
    error: ErrorLaw
    design_seed: int
    noise_seed: int
    fit: FitConfig = field(default_factory=FitConfig)

    def __post_init__(self):
        beta0 = np.asarray(self.beta0, dtype=float)
        beta1 = np.asarray(self.beta1, dtype=float)
        if beta0.shape != (self.model.p,) or beta1.shape != (self.model.p,):
            raise ValueError("beta0/beta1 length must equal model.p")
        if not (0 <= self.k0 <= self.T_m):
            raise ValueError("k0 must satisfy 0 <= k0 <= T_m")
        if self.m < self.model.p + 1:
            raise ValueError("m must be >= p+1")
        object.__setattr__(self, "beta0", beta0)
        object.__setattr__(self, "beta1", beta1)
        object.__setattr__(self, "tau", as_tau(self.tau))
        f0 = self.error.cdf_at_zero()
        if abs(f0 - self.tau) > 1e-9:
            warnings.warn(
                f"error law {self.error.label()} has F(0)={f0:.4g} != tau={self.tau:g}; "
                "sizes and powers are calibrated only when F(0) = tau",
                stacklevel=2,
            )


@dataclass(frozen=True)
class ReplicationSummary:
    rejected: bool
    k_hat: int | None
    z_sup: float


@dataclass(frozen=True)
class AggregateReport:
    """Rejection rate plus stopping-time statistics over one scenario.

    Stopping-time stats are over alarmed replications only; khat_max is the
    Inf sentinel whenever at least one replication never alarmed (all three
    are Inf when none did).
    """

    n_reps: int
    rate: float
    khat_median: float
    khat_min: float
    khat_max: float


def generate_stream(
    s: Scenario, rep_index: int
) -> tuple[list[Observation], list[Observation]]:
    """Draw one replication: m historical and T_m monitoring observations.

    Covariates are i.i.d. standard normal per coordinate; responses follow
    beta0 through observation m + k0 and beta1 afterwards.
    """
    n = s.m + s.T_m
    X = _rep_rng(s.design_seed, rep_index).standard_normal((n, s.model.q))
    eps = s.error.sample(_rep_rng(s.noise_seed, rep_index), n)
    n_pre = s.m + s.k0
    y = np.empty(n)
    y[:n_pre] = s.model.eval_fn(X[:n_pre], s.beta0) + eps[:n_pre]
    if n_pre < n:
        y[n_pre:] = s.model.eval_fn(X[n_pre:], s.beta1) + eps[n_pre:]
    obs = [Observation(X[i], y[i]) for i in range(n)]
    return obs[: s.m], obs[s.m :]


def run_replication(
    s: Scenario, table: CriticalValueTable, rep_index: int
) -> ReplicationSummary:
    """Fit on the historical block, stream the monitoring block, report."""
    hist, mon = generate_stream(s, rep_index)
    fit = fit_quantile(s.model, hist, s.tau, s.fit)
    X_hist, _ = stack_data(hist)
    jm = compute_jm(s.model, fit.beta_hat, X_hist, s.tau)
    artifacts = HistoricalArtifacts(
        beta_hat=fit.beta_hat,
        j_inv_sqrt=inv_sqrt_psd(jm),
        m=s.m,
        tau=s.tau,
        model=s.model,
    )
    c = table.get(s.gamma, s.alpha, s.proc)
    state = init_detector(artifacts, s.gamma, c)
    for obs in mon:
        push(state, obs)
    return ReplicationSummary(
        rejected=state.alarm_at is not None,
        k_hat=state.alarm_at,
        z_sup=z_sup(state),
    )


def _run_rep_block(args) -> list[ReplicationSummary]:
    s, table, reps = args
    return [run_replication(s, table, r) for r in reps]


def run_experiment(
    s: Scenario, n_reps: int, table: CriticalValueTable, threads: int = 1
) -> AggregateReport:
    """Run n_reps independent replications and aggregate.

    threads > 1 distributes whole replications over worker processes; the
    per-replication substreams make the result identical to a serial run.
    """
    if n_reps < 1:
        raise ValueError("n_reps must be >= 1")
    if threads > 1:
        chunk = max(1, math.ceil(n_reps / threads))
        blocks = [
            (s, table, range(start, min(start + chunk, n_reps)))
            for start in range(0, n_reps, chunk)
        ]
        with ProcessPoolExecutor(max_workers=threads) as pool:
            summaries = [r for block in pool.map(_run_rep_block, blocks) for r in block]
    else:
        summaries = _run_rep_block((s, table, range(n_reps)))

    alarmed = [r.k_hat for r in summaries if r.k_hat is not None]
    rate = len(alarmed) / n_reps
    if alarmed:
        khat_median = float(statistics.median_low(alarmed))
        khat_min = float(min(alarmed))
        khat_max = float(max(alarmed)) if len(alarmed) == n_reps else math.inf
    else:
        khat_median = khat_min = khat_max = math.inf
    return AggregateReport(
        n_reps=n_reps,
        rate=rate,
        khat_median=khat_median,
        khat_min=khat_min,
        khat_max=khat_max,
    )


# ---------------------------------------------------------------------------
# CSV report
# ---------------------------------------------------------------------------

def _fmt_stat(v: float) -> str:
    if math.isinf(v):
        return "Inf"
    return str(int(v)) if float(v).is_integer() else repr(v)


def report_csv(items, path) -> None:
    """Write one CSV row per (scenario, report) pair; fixed header."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for s, rep in items:
            w.writerow([
                s.name,
                s.proc.kind,
                f"{s.gamma:g}",
                f"{s.alpha:g}",
                s.error.label(),
                ";".join(f"{b:g}" for b in s.beta1),
                s.k0,
                rep.n_reps,
                repr(rep.rate),
                _fmt_stat(rep.khat_median),
                _fmt_stat(rep.khat_min),
                _fmt_stat(rep.khat_max),
            ])


# ---------------------------------------------------------------------------
# Presets
# ---------------------------------------------------------------------------

PRESETS_SCHEMA = "qcpd-presets-1"


def load_presets(path=None) -> dict:
    """Read preset definitions; defaults to the copy shipped in the package."""
    if path is None:
        text = resources.files("qcpd").joinpath("presets.json").read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    doc = json.loads(text)
    if doc.get("schema") != PRESETS_SCHEMA:
        raise ValueError(f"expected schema {PRESETS_SCHEMA!r}, got {doc.get('schema')!r}")
    return doc["presets"]


def preset_scenarios(name: str, defn: dict) -> list[Scenario]:
    """Expand one preset definition into concrete scenarios.

    The expansion order is cases x errors x gammas x alphas, which fixes the
    row order of the CSV report.  A case with "beta1": null is the no-change
    configuration (beta1 = beta0, k0 = T_m).
    """
    model = get_model(defn["model"], q=defn.get("q", 1), box=defn.get("box"))
    proc = (
        Procedure.closed_end(defn["horizon_ratio"])
        if defn["proc"] in ("closed", "closed_end")
        else Procedure.open_end()
    )
    beta0 = [float(b) for b in defn["beta0"]]
    T_m = int(defn["T_m"])
    fit_cfg = FitConfig(**defn["fit"]) if "fit" in defn else FitConfig()
    out = []
    for case in defn["cases"]:
        h0 = case.get("beta1") is None
        beta1 = beta0 if h0 else [float(b) for b in case["beta1"]]
        k0 = T_m if h0 else int(case["k0"])
        for err_label in case["errors"]:
            for gamma in defn["gammas"]:
                for alpha in defn["alphas"]:
                    out.append(Scenario(
                        name=name,
                        model=model,
                        beta0=beta0,
                        beta1=beta1,
                        k0=k0,
                        m=int(defn["m"]),
                        T_m=T_m,
                        tau=float(defn.get("tau", 0.5)),
                        gamma=float(gamma),
                        alpha=float(alpha),
                        proc=proc,
                        error=ErrorLaw.parse(err_label),
                        design_seed=int(defn["design_seed"]),
                        noise_seed=int(defn["noise_seed"]),
                        fit=fit_cfg,
                    ))
    return out
