"""Command-line entry point: ``sns simulate | verify | noise-stats | spectra | galerkin | report``.

Exit codes: 0 success, 1 usage/config error or failed verification,
2 explosion suspected, 3 non-finite state, 4 corrupt or missing run directory.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .galerkin import convergence_audit, run_level
from .monitor import (
    EnergyAudit,
    crossings_table,
    fit_energy_constants,
    fit_interval_constant,
    growth_envelope,
    interval_violations,
    with_slack,
)
from .noise import OuEnsemble, assemble_X, evolve_ou, renorm_constant, zeroth_chaos_mean
from .operator import OperatorHandle, top_eigenvalue
from .solver import (
    STATUS_EXPLOSION,
    STATUS_NAN,
    TRAJECTORY_COLUMNS,
    ConfigError,
    LedgerEntry,
    config_echo,
    load_config,
    run,
)
from .spectral_core import FourierGrid, write_snapshot
from .verification import MIN_SAMPLES, SUITES, chaos_samples, read_energy_csv

EXIT_OK, EXIT_USAGE, EXIT_EXPLOSION, EXIT_NAN, EXIT_CORRUPT = 0, 1, 2, 3, 4

ENERGY_COLUMNS = ("t", "lam", "term1", "term2", "term3", "term4", "h1_part", "qform", "r_term",
                  "fd_derivative", "residual", "lap_split_residual", "potential_term",
                  "norm_wL", "low_norm", "N_kappa")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _cell(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_cell(v) for v in r])


def read_csv(path: Path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [{k: float(v) for k, v in r.items()} for r in csv.DictReader(fh)]


def sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _floats(text: str) -> list[float]:
    return [float(s) for s in text.split(",") if s.strip()]


def _ints(text: str) -> list[int]:
    return [int(s) for s in text.split(",") if s.strip()]


# -- simulate -------------------------------------------------------------------

def cmd_simulate(args) -> int:
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    out = Path(args.out_dir or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    snap_dir = out / "snapshots"
    snap_dir.mkdir(exist_ok=True)
    for old in snap_dir.glob("*.snsf"):
        old.unlink()
    started = time.time()
    hooks = [EnergyAudit(cfg.audit_every)] if cfg.audit_every else []
    try:
        rec = run(cfg, hooks=hooks)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    files = []

    def emit(name, header, rows):
        write_csv(out / name, header, rows)
        files.append(name)

    emit("trajectory.csv", TRAJECTORY_COLUMNS, ([r[c] for c in TRAJECTORY_COLUMNS] for r in rec.rows))
    emit("norms.csv", ("t", "norm_w_L2", "segment"), rec.norms)
    emit("ledger.csv", ("i", "T", "norm"), ((e.i, e.T, e.norm) for e in rec.ledger))
    if cfg.audit_every:
        emit("energy_terms.csv", ENERGY_COLUMNS,
             ([getattr(r, c) for c in ENERGY_COLUMNS] for r in rec.audit))
    for step, _, fields in rec.snapshots:
        for name, field in fields.items():
            rel = f"snapshots/step_{step:08d}_{name}.snsf"
            write_snapshot(out / rel, field)
            files.append(rel)
    finished = time.time()
    manifest = {
        "version": __version__,
        "seed": cfg.seed,
        "config": config_echo(cfg),
        "status": rec.status,
        "message": rec.message,
        "started": started,
        "finished": finished,
        "wall_seconds": finished - started,
        "files": {name: sha256(out / name) for name in files},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                                       encoding="utf-8")
    print(f"{rec.status} t={rec.final.t!r} steps={rec.final.step} out={out}")
    if rec.status == STATUS_EXPLOSION:
        print(rec.message, file=sys.stderr)
        return EXIT_EXPLOSION
    if rec.status == STATUS_NAN:
        print(rec.message, file=sys.stderr)
        return EXIT_NAN
    return EXIT_OK


# -- verify ---------------------------------------------------------------------

def cmd_verify(args) -> int:
    from . import verification as v

    if args.suite not in SUITES:
        print(f"unknown suite {args.suite!r}; choose from {', '.join(SUITES)}", file=sys.stderr)
        return EXIT_USAGE
    if args.suite == "noise":
        if args.samples < MIN_SAMPLES:
            print(f"warning: {args.samples} samples is UNDERPOWERED (need {MIN_SAMPLES}); "
                  "statistical checks skipped", file=sys.stderr)
        checks = v.suite_noise(samples=args.samples, seed=args.seed)
    elif args.suite == "energy":
        checks = v.suite_energy(args.run_dir, seed=args.seed)
    elif args.suite == "galerkin":
        checks = v.suite_galerkin(seed=args.seed)
    elif args.suite == "operator":
        checks = v.suite_operator(seed=args.seed)
    else:
        checks = v.suite_paracalc(seed=args.seed)
    for c in checks:
        print(json.dumps(c.as_dict(), sort_keys=True))
    return EXIT_OK if all(c.passed for c in checks) else EXIT_USAGE


# -- statistics commands ----------------------------------------------------------

def cmd_noise_stats(args) -> int:
    if args.samples < MIN_SAMPLES:
        print(f"warning: {args.samples} samples is UNDERPOWERED", file=sys.stderr)
    g = FourierGrid(args.n)
    rows = []
    for lam in _floats(args.lambdas):
        r, diag, off = chaos_samples(lam, args.t, args.n, args.samples, args.seed)
        s = max(args.samples, 2)
        rows.append((lam, args.t, r, diag.mean(), diag.std(ddof=1) / math.sqrt(s), off.mean(),
                     off.std(ddof=1) / math.sqrt(s), zeroth_chaos_mean(lam, args.t, g) - r,
                     args.samples))
    write_csv(Path(args.out), ("lambda", "t", "r_lambda", "mc_diag_mean", "mc_diag_stderr",
                               "mc_offdiag_mean", "mc_offdiag_stderr", "exact_diag_mean",
                               "samples"), rows)
    return EXIT_OK


def cmd_spectra(args) -> int:
    g = FourierGrid(args.n)
    rows = []
    for seed in _ints(args.seeds):
        X = assemble_X(evolve_ou(OuEnsemble.start(g, seed), args.t))
        for lam in _floats(args.lambdas):
            r = renorm_constant(lam, args.t, g)
            val, _, its = top_eigenvalue(OperatorHandle(lam, X, r))
            rows.append((lam, seed, args.t, val, r, its))
    write_csv(Path(args.out), ("lambda", "seed", "t", "top_eig", "r_lambda", "iterations"), rows)
    return EXIT_OK


def cmd_galerkin(args) -> int:
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    recs = [run_level(cfg, lv) for lv in _floats(args.levels)]
    audit = convergence_audit(recs, kappa=cfg.kappa)
    write_csv(Path(args.out), ("n", "sup_norm", "h1_integral", "distance_to_double", "dt_norm"),
              ((a.level, a.sup_norm, a.h1_integral, a.distance_to_double, a.dt_norm)
               for a in audit.levels))
    if not audit.monotone:
        print("warning: level distances are not decreasing", file=sys.stderr)
    return EXIT_OK


# -- report ---------------------------------------------------------------------------

class CorruptRun(Exception):
    pass


def load_manifest(run_dir: Path) -> dict:
    mpath = run_dir / "manifest.json"
    if not run_dir.is_dir() or not mpath.is_file():
        raise CorruptRun(f"{run_dir}: no manifest.json")
    try:
        manifest = json.loads(mpath.read_text(encoding="utf-8"))
        files = manifest["files"]
    except (ValueError, KeyError) as exc:
        raise CorruptRun(f"{mpath}: unreadable manifest ({exc})") from None
    if "trajectory.csv" not in files:
        raise CorruptRun(f"{mpath}: no trajectory listed")
    for name, digest in sorted(files.items()):
        p = run_dir / name
        if not p.is_file():
            raise CorruptRun(f"{p}: missing")
        if sha256(p) != digest:
            raise CorruptRun(f"{p}: digest mismatch")
    return manifest


def cmd_report(args) -> int:
    from .report import plot_crossings, plot_energy, plot_trajectory

    run_dir = Path(args.run_dir)
    try:
        manifest = load_manifest(run_dir)
    except CorruptRun as exc:
        print(f"corrupt run: {exc}", file=sys.stderr)
        return EXIT_CORRUPT
    rows = read_csv(run_dir / "trajectory.csv")
    norms = [(r["t"], r["norm_w_L2"], int(r["segment"])) for r in read_csv(run_dir / "norms.csv")]
    ledger = [LedgerEntry(int(r["i"]), r["T"], r["norm"]) for r in read_csv(run_dir / "ledger.csv")]
    out = run_dir / "report"
    out.mkdir(exist_ok=True)

    t = [n[0] for n in norms]
    growth = growth_envelope(t, [n[1] for n in norms], 0.5 * t[-1] if t else 0.0)
    C = fit_interval_constant(norms, ledger)
    table = crossings_table(ledger, C)
    write_csv(out / "crossings.csv", ("i", "T_i", "lower_bound", "observed_gap"),
              ((c.i, c.T, c.lower_bound, c.observed_gap) for c in table))
    plot_trajectory(rows, out / "trajectory.png", growth.c)
    plot_crossings(table, out / "crossings.png")

    lines = [f"run: {run_dir.name}", f"seed: {manifest.get('seed')}",
             f"status: {manifest.get('status')}", f"steps recorded: {len(norms)}",
             "", "crossings (i, T_i, lower_bound, observed_gap):"]
    lines += [f"  {c.i} {c.T!r} {c.lower_bound!r} {c.observed_gap!r}" for c in table]
    lines += ["", "fitted constants:", f"  envelope c = {growth.c!r}"
              + (" (degenerate: norm never exceeds e)" if growth.degenerate else ""),
              f"  interval C = {C!r}"]
    verdicts = [("envelope", growth.violations == 0, f"{growth.violations} out-of-window violations"),
                ("intervals", interval_violations(table) == 0,
                 f"{interval_violations(table)} gaps below bound")]
    epath = run_dir / "energy_terms.csv"
    if (epath.name in manifest["files"]) and epath.is_file():
        reports = read_energy_csv(epath)
        if len(reports) >= 2:
            fit = fit_energy_constants(reports)
            reports = with_slack(reports, fit)
            worst = max(abs(r.residual) / r.magnitude for r in reports if r.magnitude > 0)
            lines += [f"  energy C = {fit.C!r}", f"  energy k = {fit.k}"]
            verdicts += [("energy residual", worst <= 0.05, f"max relative residual {worst!r}"),
                         ("energy inequality", fit.violations == 0,
                          f"{fit.violations} of {fit.validated} validation steps violated")]
            plot_energy(reports, out / "energy.png")
        write_csv(out / "energy_report.csv",
                  ("t", "term1", "term2", "term3", "term4", "qform", "r_term", "residual", "slack"),
                  ((r.t, r.term1, r.term2, r.term3, r.term4, r.qform, r.r_term, r.residual,
                    r.bound_slack) for r in reports))
    lines += ["", "checks:"]
    lines += [f"  {name}: {'PASS' if ok else 'FAIL'} ({why})" for name, ok, why in verdicts]
    text = "\n".join(lines) + "\n"
    (out / "summary.txt").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


# -- entry point ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="sns", description="Stochastic Navier-Stokes simulation and verification lab")
    p.add_argument("--version", action="version", version=f"sns {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="run the solver from a key=value config")
    s.add_argument("--config", required=True)
    s.add_argument("--out-dir", default=None, help="override out_dir from the config")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("verify", help="run an invariant battery, JSON lines on stdout")
    s.add_argument("suite")
    s.add_argument("--samples", type=int, default=1000)
    s.add_argument("--run-dir", default=None, help="stored run for the energy suite")
    s.add_argument("--seed", type=int, default=7)
    s.set_defaults(func=cmd_verify)

    s = sub.add_parser("noise-stats", help="Monte-Carlo chaos statistics of the enhanced product")
    s.add_argument("--n", type=int, default=64)
    s.add_argument("--lambdas", default="8,27")
    s.add_argument("--t", type=float, default=1.0)
    s.add_argument("--samples", type=int, default=1000)
    s.add_argument("--seed", type=int, default=7)
    s.add_argument("--out", default="noise_stats.csv")
    s.set_defaults(func=cmd_noise_stats)

    s = sub.add_parser("spectra", help="top eigenvalue of the renormalised operator")
    s.add_argument("--n", type=int, default=32)
    s.add_argument("--lambdas", default="8,27")
    s.add_argument("--seeds", default="7")
    s.add_argument("--t", type=float, default=1.0)
    s.add_argument("--out", default="spectra.csv")
    s.set_defaults(func=cmd_spectra)

    s = sub.add_parser("galerkin", help="coupled mollification levels")
    s.add_argument("--config", required=True)
    s.add_argument("--levels", default="8,16,32,64")
    s.add_argument("--out", default="levels.csv")
    s.set_defaults(func=cmd_galerkin)

    s = sub.add_parser("report", help="summarise a run directory")
    s.add_argument("run_dir")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
