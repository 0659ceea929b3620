"""Mollified approximation levels ``X^n = L_n X`` on one coupled noise path."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .noise import OuEnsemble, assemble_X, evolve_ou
from .paracalc import lowpass
from .solver import RunRecord, SolverConfig, run
from .spectral_core import FourierGrid, sobolev_norm


@dataclass
class LevelRecord:
    level: float
    record: RunRecord

    @property
    def times(self) -> np.ndarray:
        return np.array([t for t, _ in self.record.fields])

    def uniform_bound(self) -> tuple[float, float]:
        """``(sup_t ||w^L_t||^2, int ||w^L||_{H^1}^2 dt)`` from the trajectory rows."""
        rows = self.record.rows
        t = np.array([r["t"] for r in rows])
        low = np.array([r["norm_wL_L2"] for r in rows]) ** 2
        h1 = np.array([r["norm_wL_H1"] for r in rows]) ** 2
        integral = float(np.sum(0.5 * (h1[1:] + h1[:-1]) * np.diff(t))) if t.size > 1 else 0.0
        return float(low.max()), integral


def run_level(config: SolverConfig, level: float, hooks=()) -> LevelRecord:
    """Run the solver with the dynamics seen through ``L_level``; ``level = 0`` is unmollified."""
    if level < 0:
        raise ValueError("level must be nonnegative")
    cfg = replace(config, level=float(level))
    return LevelRecord(float(level), run(cfg, hooks=hooks, keep_fields=True))


def mollified_noise(X, level: float):
    """``X^n = L_n X``."""
    return lowpass(X, level)


def _l2t(times: np.ndarray, values: np.ndarray) -> float:
    if times.size < 2:
        return 0.0
    sq = values**2
    return math.sqrt(float(np.sum(0.5 * (sq[1:] + sq[:-1]) * np.diff(times))))


def level_distance(a: LevelRecord, b: LevelRecord, beta: float = 0.5) -> float:
    """``||w^a - w^b||`` in ``L^2_t H^beta`` over the shared output times."""
    ta, tb = a.times, b.times
    m = min(ta.size, tb.size)
    if m == 0 or not np.allclose(ta[:m], tb[:m], rtol=0, atol=1e-12):
        raise ValueError("levels do not share output times")
    vals = np.array([sobolev_norm(a.record.fields[k][1] - b.record.fields[k][1], beta)
                     for k in range(m)])
    return _l2t(ta[:m], vals)


def time_derivative_norm(rec: LevelRecord, kappa: float) -> float:
    """Discrete ``||d_t w||`` in ``L^2_t H^{-2-kappa}``."""
    f = rec.record.fields
    if len(f) < 2:
        return 0.0
    acc = 0.0
    for (t0, w0), (t1, w1) in zip(f, f[1:]):
        acc += sobolev_norm((w1 - w0) * (1.0 / (t1 - t0)), -2.0 - kappa) ** 2 * (t1 - t0)
    return math.sqrt(acc)


@dataclass(frozen=True)
class LevelAudit:
    level: float
    sup_norm: float
    h1_integral: float
    distance_to_double: float
    dt_norm: float


@dataclass(frozen=True)
class ConvergenceAudit:
    levels: tuple
    monotone: bool
    dt_norm_ratio: float

    @property
    def distances(self) -> list:
        return [a.distance_to_double for a in self.levels]


def convergence_audit(records: list, beta: float = 0.5, kappa: float = 0.1) -> ConvergenceAudit:
    """Distances between consecutive doubled levels, uniform bounds and time-derivative sizes."""
    if len(records) < 3:
        raise ValueError("need at least three coupled levels")
    recs = sorted(records, key=lambda r: r.level)
    by_level = {r.level: r for r in recs}
    rows = []
    for r in recs:
        sup_n, integral = r.uniform_bound()
        dbl = by_level.get(2 * r.level)
        dist = level_distance(r, dbl, beta) if dbl is not None else math.nan
        rows.append(LevelAudit(r.level, sup_n, integral, dist, time_derivative_norm(r, kappa)))
    d = [a.distance_to_double for a in rows if math.isfinite(a.distance_to_double)]
    monotone = all(x > y for x, y in zip(d, d[1:]))
    dn = [a.dt_norm for a in rows]
    ratio = max(dn) / min(dn) if min(dn) > 0 else math.inf
    return ConvergenceAudit(tuple(rows), monotone, ratio)


def coupled_noise_norms(config: SolverConfig, level: float) -> tuple[float, float]:
    """``(||X^n||, ||X||)`` at the first noise step, for the contraction check."""
    g = FourierGrid(config.n, config.dealias)
    ens = evolve_ou(OuEnsemble.start(g, config.seed, config.noise_amplitude), config.dt)
    X = assemble_X(ens)
    return mollified_noise(X, level).norm(), X.norm()
