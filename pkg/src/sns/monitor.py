"""Energy bookkeeping for the low part ``w^L``, fitted bounds and trajectory audits."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import stats

from .noise import renorm_constant
from .operator import OperatorHandle, quadratic_form
from .paracalc import (
    DEFAULT_CUTOFF,
    CutoffPair,
    besov_norm,
    heat_commutator,
    highpass,
    lowpass,
    para_gt,
)
from .solver import split_high_low
from .spectral_core import (
    SpectralVectorField,
    divergence,
    laplacian,
    sobolev_norm,
    sym_gradient,
    sym_tensor,
    matvec,
)


@dataclass(frozen=True)
class Slice:
    """Fields at one time: ``w``, the (possibly mollified) ``X``, ``Y`` and ``Q``."""

    t: float
    w: SpectralVectorField
    X: SpectralVectorField
    Y: SpectralVectorField
    Q: SpectralVectorField


@dataclass(frozen=True)
class EnergyReport:
    t: float
    lam: float
    term1: float
    term2: float
    term3: float
    term4: float
    h1_part: float
    qform: float
    r_term: float
    fd_derivative: float
    residual: float
    lap_split_residual: float
    potential_term: float
    norm_wL: float
    low_norm: float
    N_kappa: float = 1.0
    bound_slack: float = math.nan

    @property
    def total(self) -> float:
        return self.term1 + self.term2 + self.term3 + self.term4

    @property
    def magnitude(self) -> float:
        return abs(self.term1) + abs(self.term2) + abs(self.term3) + abs(self.term4)

    @property
    def lap_split_rhs(self) -> float:
        """``-||w^L||_{H^1}^2 + 2 <w^L, A w^L> + 2 r ||w^L||^2``."""
        return 2.0 * self.h1_part + 2.0 * self.qform + 2.0 * self.r_term

    @property
    def pairing_residual(self) -> float:
        """Relative gap between ``term1`` and ``-2||grad w^L||^2 + <w^L, 2 grad_sym L X w^L>``."""
        rhs = 4.0 * self.h1_part + self.potential_term
        return abs(self.term1 - rhs) / max(abs(self.term1), abs(rhs), 1e-300)


@dataclass(frozen=True)
class HlNorm:
    lam: float
    value: float
    low: float
    high: float


def _mid(a, b):
    return (a + b) * 0.5


def energy_terms(s0: Slice, s1: Slice, lam: float, r: float, kappa: float = 0.1,
                 cutoff: CutoffPair = DEFAULT_CUTOFF, N_kappa: float = 1.0) -> EnergyReport:
    """Four-term decomposition of ``d/dt ||w^L||^2`` over one step.

    Every factor is the midpoint average of the two slices; the commutator
    uses their difference quotient in time.
    """
    delta = s1.t - s0.t
    if not delta > 0:
        raise ValueError("slices must be ordered in time")
    sp0 = split_high_low(s0.w, s0.Q, lam, cutoff)
    sp1 = split_high_low(s1.w, s1.Q, lam, cutoff)
    fd = (sp1.w_low.norm() ** 2 - sp0.w_low.norm() ** 2) / delta
    w, X, Y = _mid(s0.w, s1.w), _mid(s0.X, s1.X), _mid(s0.Y, s1.Y)
    wl, wh = _mid(sp0.w_low, sp1.w_low), _mid(sp0.w_high, sp1.w_high)
    lx, hx = lowpass(X, lam, cutoff), highpass(X, lam, cutoff)

    def pair(m):
        return 2.0 * wl.inner(divergence(m))

    lap = 2.0 * wl.inner(laplacian(wl))
    t1 = lap + pair(sym_tensor(lx, wl) * 2.0)
    t2 = pair(sym_tensor(hx, wl) * 2.0 - para_gt(hx, wl) * 2.0)
    t3 = pair(sym_tensor(X, wh) * 2.0 - para_gt(hx, wh) * 2.0)
    com = heat_commutator(s0.w, s1.w, sp0.Q_high, sp1.Q_high, delta)
    t4 = pair(sym_tensor(w, w) + sym_tensor(Y, w) * 2.0 - com + sym_tensor(Y, Y))

    h1 = sobolev_norm(wl, 1.0) ** 2
    handle = OperatorHandle(lam, X, r, cutoff)
    qf = quadratic_form(handle, wl, tol=1e-8)
    nl2 = wl.norm() ** 2
    pot = wl.inner(matvec(sym_gradient(lx) * 2.0, wl))
    rhs = -h1 + 2.0 * qf + 2.0 * r * nl2
    scale = max(abs(t1), abs(rhs), 1e-300)
    return EnergyReport(
        t=0.5 * (s0.t + s1.t), lam=lam, term1=t1, term2=t2, term3=t3, term4=t4,
        h1_part=-0.5 * h1, qform=qf, r_term=r * nl2, fd_derivative=fd,
        residual=fd - (t1 + t2 + t3 + t4), lap_split_residual=abs(t1 - rhs) / scale,
        potential_term=pot, norm_wL=math.sqrt(nl2),
        low_norm=sobolev_norm(wl, 1.0 - 1.5 * kappa), N_kappa=N_kappa)


class EnergyAudit:
    """Solver hook producing an ``EnergyReport`` every ``every`` steps.

    Steps across a jump of the cutoff level are skipped since ``w^L`` is
    discontinuous there.
    """

    def __init__(self, every: int = 1):
        if every < 1:
            raise ValueError("audit cadence must be >= 1")
        self.every = every

    def __call__(self, stepper, prev, new):
        if new.step % self.every or prev.lam != new.lam:
            return None
        cfg = stepper.config
        s0 = Slice(prev.t, prev.w, stepper.X(prev.ens), prev.Y, stepper.Q(prev.ens))
        s1 = Slice(new.t, new.w, stepper.X(new.ens), new.Y, stepper.Q(new.ens))
        tm = 0.5 * (prev.t + new.t)
        r = renorm_constant(new.lam, tm, stepper.grid, stepper.cutoff, cfg.r_form,
                            cfg.level or None)
        return energy_terms(s0, s1, new.lam, r, cfg.kappa, stepper.cutoff,
                            new.magnitudes.N_kappa)


# -- energy inequality ----------------------------------------------------------

def _base(rep: EnergyReport) -> float:
    return rep.lap_split_rhs


def _gauge(rep: EnergyReport) -> float:
    s = rep.low_norm
    return rep.lam ** (1.0 / 3.0) * s + s + s * s


@dataclass(frozen=True)
class EnergyFit:
    C: float
    k: int
    violations: int
    validated: int


def check_energy_inequality(rep: EnergyReport, N_kappa: float, C: float, k: int) -> float:
    """Slack ``RHS - LHS`` of the differential energy bound (negative means violated)."""
    rhs = _base(rep) + C * N_kappa**k * _gauge(rep)
    return rhs - rep.fd_derivative


def fit_energy_constants(reports: list, ks=(1, 2, 3), factor: float = 1.1) -> EnergyFit:
    """Fit ``C`` on the first half, validate on the second; smallest clean ``k`` wins."""
    if len(reports) < 2:
        raise ValueError("need at least two energy reports")
    half = len(reports) // 2
    train, test = reports[:half], reports[half:]
    best = None
    for k in ks:
        ratios = [(r.fd_derivative - _base(r)) / (r.N_kappa**k * _gauge(r))
                  for r in train if _gauge(r) > 0]
        C = max(0.0, factor * max(ratios, default=0.0))
        bad = sum(check_energy_inequality(r, r.N_kappa, C, k) < 0 for r in test)
        fit = EnergyFit(C, k, int(bad), len(test))
        if bad == 0:
            return fit
        if best is None or bad < best.violations:
            best = fit
    return best


def with_slack(reports: list, fit: EnergyFit) -> list:
    return [replace(r, bound_slack=check_energy_inequality(r, r.N_kappa, fit.C, fit.k))
            for r in reports]


# -- stopping-time intervals ------------------------------------------------------

def interval_lower_bound(i: int, C: float) -> float:
    """``log((i^2 + 2i - C) / (i^2 + C)) / (C (1 + log(1 + i)))``, clamped at 0."""
    if i < 1 or not C > 0:
        raise ValueError("need i >= 1 and C > 0")
    num = i * i + 2 * i - C
    if num <= 0:
        return 0.0
    val = math.log(num / (i * i + C)) / (C * (1.0 + math.log1p(i)))
    return max(val, 0.0)


def interval_bound_sum(M: int, C: float) -> float:
    """``sum_{1 <= i <= M}`` of the bound, vectorised."""
    i = np.arange(1, M + 1, dtype=float)
    num = i * i + 2 * i - C
    with np.errstate(divide="ignore", invalid="ignore"):
        val = np.log(num / (i * i + C)) / (C * (1.0 + np.log1p(i)))
    return float(np.sum(np.where(num > 0, np.maximum(val, 0.0), 0.0)))


def fit_interval_constant(norms: list, ledger) -> float:
    """Smallest ``C >= 1`` under which the per-segment growth argument holds on this path.

    ``norms`` holds ``(t, ||w_t||, segment)`` per step.
    """
    C = 1.0
    for (t0, n0, _), (t1, n1, seg) in zip(norms, norms[1:]):
        if t1 <= t0:
            continue
        rate = (math.log(n1 * n1 + 1.0) - math.log(n0 * n0 + 1.0)) / (t1 - t0)
        C = max(C, rate / (1.0 + math.log1p(max(seg, 1))))
    for e in ledger:
        C = max(C, e.norm**2 - e.i**2 + 1.0)
    return C


@dataclass(frozen=True)
class Crossing:
    i: int
    T: float
    lower_bound: float
    observed_gap: float


def crossings_table(ledger, C: float) -> list[Crossing]:
    """One row per recorded level; the gap is ``T_{i+1} - T_i`` (nan for the last)."""
    rows = []
    for k, e in enumerate(ledger):
        gap = ledger[k + 1].T - e.T if k + 1 < len(ledger) else math.nan
        lb = interval_lower_bound(e.i, C) if e.i >= 1 else 0.0
        rows.append(Crossing(e.i, e.T, lb, gap))
    return rows


def interval_violations(table: list[Crossing], atol: float = 1e-12) -> int:
    return sum(1 for c in table if math.isfinite(c.observed_gap)
               and c.observed_gap < c.lower_bound - atol)


# -- growth envelope ----------------------------------------------------------------

@dataclass(frozen=True)
class GrowthFit:
    c: float
    violations: int
    degenerate: bool
    window_end: float


def envelope_violations(t, norms, c: float, t_from: float = 0.0, margin: float = 0.0) -> int:
    t, v = np.asarray(t, float), np.asarray(norms, float)
    sel = t > t_from
    with np.errstate(over="ignore"):
        env = np.exp(np.exp(c * t[sel]))
    return int(np.sum(v[sel] > env + margin))


def growth_envelope(t, norms, window_end: float, margin: float = 1e-9) -> GrowthFit:
    """Fit ``c`` in ``||w_t|| <= exp(exp(c t))`` on ``(0, window_end]``; count later violations."""
    t, v = np.asarray(t, float), np.asarray(norms, float)
    if t.size == 0:
        raise ValueError("empty trajectory")
    sel = (t > 0) & (t <= window_end)
    vals = np.log(np.log(np.maximum(v[sel], math.e))) / t[sel]
    c = float(max(vals.max(initial=0.0), 0.0))
    return GrowthFit(c, envelope_violations(t, v, c, window_end, margin), c == 0.0, window_end)


# -- fractional energy and HL norm -----------------------------------------------------

def fractional_energy(w: SpectralVectorField, eps: float, kappa: float | None = None) -> float:
    """``||w||_{H^eps}^2``."""
    if eps < 0 or (kappa is not None and eps >= kappa):
        raise ValueError("eps must lie in [0, kappa)")
    return sobolev_norm(w, eps) ** 2


def fractional_energy_rate(w0: SpectralVectorField, w1: SpectralVectorField, delta: float,
                           eps: float) -> float:
    return (fractional_energy(w1, eps) - fractional_energy(w0, eps)) / delta


def trend_pvalue(t, values) -> tuple[float, float]:
    """Least-squares slope and its two-sided p-value."""
    res = stats.linregress(np.asarray(t, float), np.asarray(values, float))
    return float(res.slope), float(res.pvalue)


def growth_trend(t, values, tail: float = 0.25, alpha: float = 0.05) -> tuple[float, float, bool]:
    """Slope test on the final ``tail`` fraction; only a significant increase is flagged.

    Samples along a path are strongly autocorrelated, so a two-sided test
    rejects for any drift; decay is not a growth trend.
    """
    t, v = np.asarray(t, float), np.asarray(values, float)
    sel = t >= t[-1] - tail * (t[-1] - t[0])
    slope, p = trend_pvalue(t[sel], v[sel])
    return slope, p, bool(slope > 0 and p < alpha)


def hl_norm(w: SpectralVectorField, lam: float, kappa: float, Q: SpectralVectorField,
            cutoff: CutoffPair = DEFAULT_CUTOFF) -> HlNorm:
    """``||w^L||_{H^1} + ||w^H||_{B^{1-3 kappa}_{4, inf}}`` at level ``lam``."""
    sp = split_high_low(w, Q, lam, cutoff)
    low = sobolev_norm(sp.w_low, 1.0)
    high = besov_norm(sp.w_high, 1.0 - 3.0 * kappa, 4, math.inf)
    return HlNorm(lam, low + high, low, high)
