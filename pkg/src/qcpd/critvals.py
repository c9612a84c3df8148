"""Monte-Carlo critical values for the normalized Wiener-process supremum.

The limit statistic is sup over t in (0, u) of ||W(t)||_inf / t^gamma for a
p-dimensional standard Wiener process, with u = 1 for open-end monitoring
and u = T/(1+T) for closed-end monitoring at horizon ratio T.  Paths are
simulated on a uniform grid of grid_n points (t = 0 excluded, which handles
the t^gamma singularity); finite grids bias the supremum slightly downward,
so grid_n is exposed and defaults to 10^4.

Replication r draws from its own counter-based Philox stream keyed on
(seed, r), so serial and threaded runs produce bit-identical tables.  All
(gamma, procedure, alpha) cells of one table share the same underlying
paths: alpha cells are order statistics of one sample, and the closed-end
functional is pathwise dominated by the open-end one.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

__all__ = [
    "CriticalValueTable",
    "FormatError",
    "MissingCriticalValue",
    "Procedure",
    "build_table",
    "critical_value",
    "format_table",
    "load_table",
    "save_table",
    "simulate_sup",
]

SCHEMA = "qcpd-critvals-1"

DEFAULT_GAMMAS = (0.0, 0.15, 0.25, 0.35, 0.45, 0.49)
DEFAULT_ALPHAS = (0.01, 0.025, 0.05, 0.10, 0.25)
DEFAULT_REPS = 50_000
DEFAULT_GRID_N = 10_000


class FormatError(Exception):
    """Table file does not match the qcpd-critvals-1 schema."""


class MissingCriticalValue(KeyError):
    """Requested (gamma, alpha, procedure) cell is absent from the table."""


@dataclass(frozen=True)
class Procedure:
    """Monitoring horizon type: open-end (T_m infinite) or closed-end."""

    kind: str
    horizon_ratio: float | None = None

    def __post_init__(self):
        if self.kind not in ("open_end", "closed_end"):
            raise ValueError(f"unknown procedure kind {self.kind!r}")
        if self.kind == "closed_end":
            T = self.horizon_ratio
            if T is None or not (math.isfinite(T) and T > 0.0):
                raise ValueError("closed_end requires finite horizon_ratio > 0")
        else:
            object.__setattr__(self, "horizon_ratio", None)

    @classmethod
    def open_end(cls) -> "Procedure":
        return cls("open_end")

    @classmethod
    def closed_end(cls, horizon_ratio: float) -> "Procedure":
        return cls("closed_end", float(horizon_ratio))

    @property
    def upper(self) -> float:
        """Upper end of the time interval carrying the supremum."""
        if self.kind == "open_end":
            return 1.0
        T = self.horizon_ratio
        return T / (1.0 + T)


def _rep_rng(seed: int, rep: int) -> np.random.Generator:
    # One counter-based substream per replication: thread-count independent.
    return np.random.Generator(np.random.Philox(key=[int(seed), int(rep)]))


def _coord_max_cumsum(p: int, grid_n: int, rng: np.random.Generator) -> np.ndarray:
    """Max over coordinates of |cumsum| of p x grid_n standard normals."""
    xi = rng.standard_normal((p, grid_n))
    return np.max(np.abs(np.cumsum(xi, axis=1)), axis=0)


def _t_pow(gamma: float, upper: float, grid_n: int) -> np.ndarray:
    h = upper / grid_n
    t = np.arange(1, grid_n + 1, dtype=float) * h
    return t**gamma


def _sup_from_coord_max(A, gamma, upper, grid_n, t_pow=None) -> float:
    h = upper / grid_n
    if t_pow is None:
        t_pow = _t_pow(gamma, upper, grid_n)
    return float(np.max((math.sqrt(h) * A) / t_pow))


def simulate_sup(
    p: int, gamma: float, upper: float, grid_n: int, rng: np.random.Generator
) -> float:
    """One draw of max_j ||W(t_j)||_inf / t_j^gamma on the uniform grid.

    The p Brownian paths are cumulative sums of N(0, upper/grid_n)
    increments evaluated at t_j = j * upper / grid_n, j = 1..grid_n.
    """
    if grid_n < 2:
        raise ValueError("grid_n must be >= 2")
    if not (0.0 < upper <= 1.0):
        raise ValueError("upper must lie in (0, 1]")
    if not (0.0 <= gamma < 0.5):
        raise ValueError("gamma must lie in [0, 0.5)")
    A = _coord_max_cumsum(p, grid_n, rng)
    return _sup_from_coord_max(A, gamma, upper, grid_n)


@dataclass(frozen=True)
class CriticalValueTable:
    """Empirical quantiles c_alpha(gamma), keyed by (gamma, alpha, procedure)."""

    p: int
    reps: int
    grid_n: int
    seed: int
    entries: dict

    def get(self, gamma: float, alpha: float, proc: Procedure) -> float:
        key = (float(gamma), float(alpha), proc)
        try:
            return self.entries[key]
        except KeyError:
            raise MissingCriticalValue(
                f"no critical value for gamma={gamma}, alpha={alpha}, "
                f"procedure={proc.kind}"
                + (f" (T={proc.horizon_ratio})" if proc.horizon_ratio else "")
            ) from None


def _quantile_rank(reps: int, alpha: float) -> int:
    """Conservative order-statistic rank ceil(reps * (1 - alpha)), 1-based.

    The small guard keeps binary rounding of (1 - alpha) from bumping an
    exactly attainable rank to the next one up.
    """
    r = reps * (1.0 - alpha)
    rank = math.ceil(r - 1e-9 * max(1.0, abs(r)))
    return min(max(rank, 1), reps)


def build_table(
    p: int,
    gammas,
    alphas,
    procs,
    reps: int = DEFAULT_REPS,
    grid_n: int = DEFAULT_GRID_N,
    seed: int = 0,
    threads: int = 1,
) -> CriticalValueTable:
    """Tabulate critical values for every (gamma, alpha, procedure) cell.

    One path per replication is shared by all cells; each (gamma, proc)
    pair gets a sample of reps supremum draws, and alphas are read off the
    sorted sample.
    """
    if reps < 100:
        raise ValueError("reps must be >= 100")
    gammas = [float(g) for g in gammas]
    alphas = [float(a) for a in alphas]
    procs = list(procs)
    combos = [(g, pr) for pr in procs for g in gammas]
    powers = [_t_pow(g, pr.upper, grid_n) for g, pr in combos]

    sups = np.empty((len(combos), reps))

    def run_block(block: range) -> None:
        for r in block:
            A = _coord_max_cumsum(p, grid_n, _rep_rng(seed, r))
            for c, (g, pr) in enumerate(combos):
                sups[c, r] = _sup_from_coord_max(A, g, pr.upper, grid_n, powers[c])

    if threads > 1:
        blocks = [range(s, min(s + 256, reps)) for s in range(0, reps, 256)]
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run_block, blocks))
    else:
        run_block(range(reps))

    entries = {}
    for c, (g, pr) in enumerate(combos):
        ordered = np.sort(sups[c])
        for a in alphas:
            entries[(g, a, pr)] = float(ordered[_quantile_rank(reps, a) - 1])
    return CriticalValueTable(p=p, reps=reps, grid_n=grid_n, seed=seed, entries=entries)


def critical_value(
    p: int,
    gamma: float,
    alpha: float,
    proc: Procedure,
    reps: int = DEFAULT_REPS,
    grid_n: int = DEFAULT_GRID_N,
    seed: int = 0,
    threads: int = 1,
) -> float:
    """Single-cell convenience wrapper around build_table."""
    table = build_table(p, [gamma], [alpha], [proc], reps, grid_n, seed, threads)
    return table.get(gamma, alpha, proc)


# ---------------------------------------------------------------------------
# Persistence (JSON, schema qcpd-critvals-1)
# ---------------------------------------------------------------------------

def save_table(table: CriticalValueTable, path) -> None:
    entries = []
    for (g, a, pr), v in sorted(
        table.entries.items(),
        key=lambda kv: (kv[0][2].kind, kv[0][2].horizon_ratio or 0.0, kv[0][0], kv[0][1]),
    ):
        row = {"gamma": g, "alpha": a, "procedure": pr.kind, "value": v}
        if pr.kind == "closed_end":
            row["horizon_ratio"] = pr.horizon_ratio
        entries.append(row)
    doc = {
        "schema": SCHEMA,
        "p": table.p,
        "reps": table.reps,
        "grid_n": table.grid_n,
        "seed": table.seed,
        "entries": entries,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def load_table(path) -> CriticalValueTable:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"not valid JSON: {exc}") from None
    if not isinstance(doc, dict) or doc.get("schema") != SCHEMA:
        raise FormatError(f"expected schema {SCHEMA!r}, got {doc.get('schema')!r}"
                          if isinstance(doc, dict) else "expected a JSON object")
    try:
        entries = {}
        for row in doc["entries"]:
            if row["procedure"] == "closed_end":
                pr = Procedure.closed_end(row["horizon_ratio"])
            else:
                pr = Procedure.open_end()
            entries[(float(row["gamma"]), float(row["alpha"]), pr)] = float(row["value"])
        return CriticalValueTable(
            p=int(doc["p"]),
            reps=int(doc["reps"]),
            grid_n=int(doc["grid_n"]),
            seed=int(doc["seed"]),
            entries=entries,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed table document: {exc}") from None


def format_table(table: CriticalValueTable, proc: Procedure) -> str:
    """Aligned text rendering, gammas down the rows and alphas across."""
    cells = {
        (g, a): v for (g, a, pr), v in table.entries.items() if pr == proc
    }
    gammas = sorted({g for g, _ in cells})
    alphas = sorted({a for _, a in cells})
    title = f"p={table.p}  reps={table.reps}  grid_n={table.grid_n}  {proc.kind}"
    if proc.kind == "closed_end":
        title += f" (T={proc.horizon_ratio:g})"
    head = "gamma \\ alpha" + "".join(f"{a:>10g}" for a in alphas)
    lines = [title, head, "-" * len(head)]
    for g in gammas:
        lines.append(
            f"{g:<13g}" + "".join(f"{cells[(g, a)]:>10.4f}" for a in alphas)
        )
    return "\n".join(lines)
