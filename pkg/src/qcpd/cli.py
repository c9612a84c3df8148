"""Command-line front end: crit, fit, detect, and sim subcommands.

Every subcommand is a thin wrapper over the library with fixed exit codes:
0 success / stream ended without alarm, 2 alarm fired, 64 usage error,
65 data error, 70 fit failure, 74 I/O error.  Detection thresholds always
come from a table file produced by `crit`; nothing is simulated inline.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import critvals, simlab
from .detector import HistoricalArtifacts, compute_jm, init_detector, inv_sqrt_psd, psd_rank, push
from .models import Observation, get_model
from .qfit import FitConfig, InsufficientData, NonFiniteObjective, fit_quantile
from .simlab import MissingCriticalValue

EX_OK = 0
EX_ALARM = 2
EX_USAGE = 64
EX_DATA = 65
EX_SOFTWARE = 70
EX_IO = 74

FIT_SCHEMA = "qcpd-fit-1"

LOW_REPS_WARN = 10_000


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EX_USAGE, f"{self.prog}: error: {message}\n")


def _float_list(text: str) -> list[float]:
    try:
        return [float(tok) for tok in text.split(",") if tok.strip() != ""]
    except ValueError:
        raise UsageError(f"expected a comma-separated float list, got {text!r}")


def _parse_box(text: str | None, p: int) -> np.ndarray | None:
    """Parse "lo:hi,lo:hi,..." (one pair per parameter, or one pair for all)."""
    if text is None:
        return None
    pairs = []
    for tok in text.split(","):
        parts = tok.split(":")
        if len(parts) != 2:
            raise UsageError(f"bad box component {tok!r}; expected lo:hi")
        try:
            lo, hi = float(parts[0]), float(parts[1])
        except ValueError:
            raise UsageError(f"bad box component {tok!r}; expected lo:hi")
        pairs.append([lo, hi])
    if len(pairs) == 1:
        pairs = pairs * p
    if len(pairs) != p:
        raise UsageError(f"box has {len(pairs)} pairs, model needs {p}")
    return np.asarray(pairs)


def _procedure(proc: str, horizon_ratio: float | None) -> critvals.Procedure:
    if proc == "closed":
        if horizon_ratio is None:
            raise UsageError("--proc closed requires --horizon-ratio")
        return critvals.Procedure.closed_end(horizon_ratio)
    return critvals.Procedure.open_end()


# ---------------------------------------------------------------------------
# crit
# ---------------------------------------------------------------------------

def _cmd_crit(args) -> int:
    proc = _procedure(args.proc, args.horizon_ratio)
    if args.reps < LOW_REPS_WARN:
        print(
            f"warning: {args.reps} replications give noisy critical values; "
            f"use >= {LOW_REPS_WARN} for production tables",
            file=sys.stderr,
        )
    table = critvals.build_table(
        p=args.p,
        gammas=_float_list(args.gamma_list),
        alphas=_float_list(args.alpha_list),
        procs=[proc],
        reps=args.reps,
        grid_n=args.grid_n,
        seed=args.seed,
        threads=args.threads,
    )
    critvals.save_table(table, args.out)
    print(critvals.format_table(table, proc))
    return EX_OK


# ---------------------------------------------------------------------------
# fit
# ---------------------------------------------------------------------------

def _read_xy_csv(path) -> tuple[np.ndarray, np.ndarray]:
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip() != ""]
    if not lines:
        raise DataError(f"{path}: empty data file")
    header = [h.strip() for h in lines[0].split(",")]
    q = len(header) - 1
    if q < 1 or header != [f"x{i}" for i in range(1, q + 1)] + ["y"]:
        raise DataError(f"{path}: header must be x1,...,xq,y; got {lines[0]!r}")
    rows = []
    for ln_no, ln in enumerate(lines[1:], start=2):
        toks = ln.split(",")
        if len(toks) != q + 1:
            raise DataError(f"{path}:{ln_no}: expected {q + 1} fields, got {len(toks)}")
        try:
            rows.append([float(t) for t in toks])
        except ValueError:
            raise DataError(f"{path}:{ln_no}: non-numeric field")
    data = np.asarray(rows)
    return data[:, :q], data[:, q]


def _cmd_fit(args) -> int:
    X, y = _read_xy_csv(args.data)
    q = X.shape[1]
    try:
        model = get_model(args.model, q=q, box=None)
    except KeyError as exc:
        raise UsageError(str(exc))
    box = _parse_box(args.box, model.p)
    if box is not None:
        model = get_model(args.model, q=q, box=box)
    cfg = FitConfig(seed=args.seed, restarts=args.restarts)
    try:
        fit = fit_quantile(model, (X, y), args.tau, cfg)
    except (InsufficientData, NonFiniteObjective) as exc:
        print(f"fit failed: {exc}", file=sys.stderr)
        return EX_SOFTWARE
    jm = compute_jm(model, fit.beta_hat, X, args.tau)
    j_inv_sqrt = inv_sqrt_psd(jm)
    rank = psd_rank(jm)
    doc = {
        "schema": FIT_SCHEMA,
        "model": model.name,
        "p": model.p,
        "q": model.q,
        "m": int(y.size),
        "tau": args.tau,
        "box": model.box.tolist(),
        "beta_hat": fit.beta_hat.tolist(),
        "objective": fit.objective,
        "converged": fit.converged,
        "j_m": jm.tolist(),
        "j_m_inv_sqrt": j_inv_sqrt.tolist(),
        "jm_rank": rank,
        "rank_deficient": rank < model.p,
    }
    with open(args.out, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
    print(f"beta_hat={fit.beta_hat.tolist()} objective={fit.objective!r} "
          f"m={y.size} rank={rank}/{model.p}")
    return EX_OK


# ---------------------------------------------------------------------------
# detect
# ---------------------------------------------------------------------------

def _load_fit(path) -> dict:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: not valid JSON: {exc}")
    if not isinstance(doc, dict) or doc.get("schema") != FIT_SCHEMA:
        raise DataError(f"{path}: expected schema {FIT_SCHEMA!r}")
    return doc


def _cmd_detect(args) -> int:
    fit_doc = _load_fit(args.fit)
    try:
        table = critvals.load_table(args.crit)
    except critvals.FormatError as exc:
        raise DataError(f"{args.crit}: {exc}")
    if table.p != fit_doc["p"]:
        raise DataError(
            f"fit has p={fit_doc['p']} but table has p={table.p}; "
            "critical values are dimension-specific"
        )
    m = int(fit_doc["m"])
    if args.proc == "closed":
        if args.horizon is None:
            raise UsageError("--proc closed requires --horizon")
        proc = critvals.Procedure.closed_end(args.horizon / m)
    else:
        proc = critvals.Procedure.open_end()
    try:
        threshold = table.get(args.gamma, args.alpha, proc)
    except MissingCriticalValue as exc:
        raise DataError(str(exc.args[0]))

    model = get_model(fit_doc["model"], q=int(fit_doc["q"]), box=fit_doc["box"])
    artifacts = HistoricalArtifacts(
        beta_hat=np.asarray(fit_doc["beta_hat"]),
        j_inv_sqrt=np.asarray(fit_doc["j_m_inv_sqrt"]),
        m=m,
        tau=float(fit_doc["tau"]),
        model=model,
    )
    state = init_detector(artifacts, args.gamma, threshold)

    q = model.q
    for ln_no, line in enumerate(sys.stdin, start=1):
        line = line.strip()
        if line == "":
            continue
        toks = line.split(",")
        if len(toks) != q + 1:
            raise DataError(f"stdin:{ln_no}: expected {q + 1} fields, got {len(toks)}")
        try:
            vals = [float(t) for t in toks]
        except ValueError:
            raise DataError(f"stdin:{ln_no}: non-numeric field")
        verdict = push(state, Observation(np.asarray(vals[:q]), vals[q]))
        print(f"{verdict.k},{verdict.gamma_stat!r},{verdict.threshold!r},"
              f"{int(verdict.alarmed)}")
        if verdict.alarmed:
            print(f"ALARM k_hat={state.alarm_at}")
            return EX_ALARM
        if args.proc == "closed" and verdict.k >= args.horizon:
            print(f"horizon exhausted at k={verdict.k}, no alarm", file=sys.stderr)
            return EX_OK
    return EX_OK


# ---------------------------------------------------------------------------
# sim
# ---------------------------------------------------------------------------

def _cmd_sim(args) -> int:
    if args.preset is not None:
        presets = simlab.load_presets()
        if args.preset not in presets:
            raise UsageError(
                f"unknown preset {args.preset!r}; known: {', '.join(sorted(presets))}"
            )
        name, defn = args.preset, presets[args.preset]
    else:
        with open(args.scenario) as fh:
            try:
                defn = json.load(fh)
            except json.JSONDecodeError as exc:
                raise DataError(f"{args.scenario}: not valid JSON: {exc}")
        name = defn.get("name", "scenario")
    if args.seed is not None:
        defn = dict(defn, design_seed=args.seed, noise_seed=args.seed + 1)
    try:
        table = critvals.load_table(args.crit)
    except critvals.FormatError as exc:
        raise DataError(f"{args.crit}: {exc}")

    scenarios = simlab.preset_scenarios(name, defn)
    rows = []
    for s in scenarios:
        try:
            report = simlab.run_experiment(s, args.reps, table, threads=args.threads)
        except MissingCriticalValue as exc:
            raise DataError(str(exc.args[0]))
        rows.append((s, report))
        print(f"{s.name} proc={s.proc.kind} gamma={s.gamma:g} alpha={s.alpha:g} "
              f"error={s.error.label()} beta1={s.beta1.tolist()} k0={s.k0}: "
              f"rate={report.rate:.4g}")
    simlab.report_csv(rows, args.out)
    print(f"wrote {args.out} ({len(rows)} rows)")
    return EX_OK


# ---------------------------------------------------------------------------
# Parser and entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="qcpd", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    c = sub.add_parser("crit", parents=[], help="tabulate Monte-Carlo critical values")
    c.add_argument("--p", type=int, default=2)
    c.add_argument("--gamma-list", default="0,0.15,0.25,0.35,0.45,0.49")
    c.add_argument("--alpha-list", default="0.01,0.025,0.05,0.10,0.25")
    c.add_argument("--proc", choices=["open", "closed"], default="open")
    c.add_argument("--horizon-ratio", type=float, default=None)
    c.add_argument("--reps", type=int, default=critvals.DEFAULT_REPS)
    c.add_argument("--grid-n", type=int, default=critvals.DEFAULT_GRID_N)
    c.add_argument("--seed", type=int, default=42)
    c.add_argument("--threads", type=int, default=1)
    c.add_argument("--out", default="critvals.json")

    f = sub.add_parser("fit", help="fit the historical quantile model")
    f.add_argument("--model", required=True)
    f.add_argument("--tau", type=float, default=0.5)
    f.add_argument("--box", default=None)
    f.add_argument("--data", required=True)
    f.add_argument("--restarts", type=int, default=8)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--out", default="fit.json")

    d = sub.add_parser("detect", help="stream observations from stdin")
    d.add_argument("--fit", required=True)
    d.add_argument("--crit", required=True)
    d.add_argument("--gamma", type=float, required=True)
    d.add_argument("--alpha", type=float, required=True)
    d.add_argument("--proc", choices=["open", "closed"], default="open")
    d.add_argument("--horizon", type=int, default=None)

    m = sub.add_parser("sim", help="run a simulation experiment")
    g = m.add_mutually_exclusive_group(required=True)
    g.add_argument("--preset")
    g.add_argument("--scenario")
    m.add_argument("--reps", type=int, default=500)
    m.add_argument("--crit", required=True)
    m.add_argument("--seed", type=int, default=None)
    m.add_argument("--threads", type=int, default=1)
    m.add_argument("--out", default="report.csv")
    return parser


_DISPATCH = {"crit": _cmd_crit, "fit": _cmd_fit, "detect": _cmd_detect, "sim": _cmd_sim}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _DISPATCH[args.command](args)
    except UsageError as exc:
        print(f"qcpd {args.command}: {exc}", file=sys.stderr)
        return EX_USAGE
    except DataError as exc:
        print(f"qcpd {args.command}: {exc}", file=sys.stderr)
        return EX_DATA
    except FileNotFoundError as exc:
        print(f"qcpd {args.command}: {exc}", file=sys.stderr)
        return EX_DATA if args.command in ("fit", "detect", "sim") else EX_IO
    except OSError as exc:
        print(f"qcpd {args.command}: {exc}", file=sys.stderr)
        return EX_IO


if __name__ == "__main__":
    sys.exit(main())
