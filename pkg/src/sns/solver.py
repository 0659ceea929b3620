"""Time integration of Q, Y and w with the stopping-time ledger.

``X`` and ``Q`` advance by exact Gaussian recursions on a fine noise grid.
``Y`` and ``w`` use exponential Euler on the mild form: the heat part is
integrated exactly and every quadratic product is dealiased.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .noise import (
    NoiseMagnitudes,
    NoiseStream,
    OuEnsemble,
    ZetaSpec,
    assemble_Q,
    assemble_X,
    build_objects,
    evolve_ou,
    sample_zeta,
    update_magnitudes,
)
from .paracalc import DEFAULT_CUTOFF, CutoffPair, highpass, para_lt
from .spectral_core import (
    FourierGrid,
    SpectralVectorField,
    divergence,
    leray_project,
    read_snapshot,
    sobolev_norm,
)

STATUS_OK = "OK"
STATUS_EXPLOSION = "EXPLOSION_SUSPECTED"
STATUS_NAN = "NUMERIC_NAN"
KAPPA_MAX = 0.25
# more levels than this crossed in a single step is treated as blow-up
MAX_LEVEL_JUMP = 10_000


class ConfigError(ValueError):
    """Invalid configuration; the message names the file and line."""


# -- configuration ------------------------------------------------------------

@dataclass(frozen=True)
class SolverConfig:
    n: int
    seed: int
    dt: float = 5e-4
    t_end: float = 2.0
    kappa: float = 0.1
    a: float = 3.0
    zeta_mode: str = "spectral"
    zeta_sigma: float = 1.0
    zeta_theta: float = 0.5
    zeta_path: str = ""
    ceiling: float = 1e6
    out_dir: str = "run"
    dealias: bool = True
    output_every: int = 10
    snapshot_every: int = 0
    audit_every: int = 0
    noise_substeps: int = 1
    noise_amplitude: float = 1.0
    u0_mode: str = "random"
    u0_norm: float = 0.5
    u0_path: str = ""
    level: float = 0.0
    r_form: str = "l2"
    magnitudes: bool = True

    def __post_init__(self):
        problems = validate_config(self)
        if problems:
            key, msg = problems[0]
            raise ConfigError(f"{key}: {msg}")

    @property
    def steps(self) -> int:
        return int(round(self.t_end / self.dt))

    @property
    def zeta_spec(self) -> ZetaSpec:
        if self.zeta_mode == "deterministic":
            return ZetaSpec("deterministic", path=read_snapshot(self.zeta_path, self.dealias))
        return ZetaSpec(self.zeta_mode, self.zeta_sigma, self.zeta_theta)


# config-file key -> attribute
CONFIG_KEYS = {
    "n": "n", "seed": "seed", "dt": "dt", "t_end": "t_end", "kappa": "kappa", "a": "a",
    "zeta.mode": "zeta_mode", "zeta.sigma": "zeta_sigma", "zeta.theta": "zeta_theta",
    "zeta.path": "zeta_path", "ceiling": "ceiling", "out_dir": "out_dir", "dealias": "dealias",
    "output_every": "output_every", "snapshot_every": "snapshot_every",
    "audit_every": "audit_every", "noise.substeps": "noise_substeps",
    "noise.amplitude": "noise_amplitude", "u0.mode": "u0_mode", "u0.norm": "u0_norm",
    "u0.path": "u0_path", "galerkin.level": "level", "renorm.form": "r_form",
    "magnitudes": "magnitudes",
}
_ATTR_TO_KEY = {v: k for k, v in CONFIG_KEYS.items()}
_REQUIRED = ("n", "seed")


def validate_config(c: SolverConfig) -> list[tuple[str, str]]:
    out = []

    def bad(attr, msg):
        out.append((_ATTR_TO_KEY[attr], msg))

    if c.n < 8 or c.n % 2:
        bad("n", f"must be an even integer >= 8, got {c.n}")
    if c.seed < 0:
        bad("seed", "must be nonnegative")
    if not c.dt > 0:
        bad("dt", f"must be positive, got {c.dt}")
    if not c.t_end >= 0:
        bad("t_end", f"must be nonnegative, got {c.t_end}")
    if not 0 < c.kappa < KAPPA_MAX:
        bad("kappa", f"must lie in (0, {KAPPA_MAX}), got {c.kappa}")
    if not 2 < c.a <= 3:
        bad("a", f"must lie in (2, 3], got {c.a}")
    if c.zeta_mode not in ("off", "spectral", "deterministic"):
        bad("zeta_mode", f"must be off, spectral or deterministic, got {c.zeta_mode!r}")
    if c.zeta_sigma < 0 or c.zeta_theta < 0:
        bad("zeta_sigma", "sigma and theta must be nonnegative")
    if c.zeta_mode == "deterministic" and not c.zeta_path:
        bad("zeta_path", "deterministic zeta needs zeta.path")
    if not c.ceiling > 0:
        bad("ceiling", "must be positive")
    if c.output_every < 1:
        bad("output_every", "must be >= 1")
    if c.snapshot_every < 0:
        bad("snapshot_every", "must be >= 0")
    if c.audit_every < 0:
        bad("audit_every", "must be >= 0")
    if c.noise_substeps < 1:
        bad("noise_substeps", "must be >= 1")
    if c.noise_amplitude < 0:
        bad("noise_amplitude", "must be nonnegative")
    if c.u0_mode not in ("zero", "shear", "random", "file"):
        bad("u0_mode", f"must be zero, shear, random or file, got {c.u0_mode!r}")
    if c.u0_mode == "file" and not c.u0_path:
        bad("u0_path", "u0.mode=file needs u0.path")
    if c.u0_norm < 0:
        bad("u0_norm", "must be nonnegative")
    if c.level < 0:
        bad("level", "must be nonnegative (0 disables mollification)")
    if c.r_form not in ("l", "l2"):
        bad("r_form", f"must be l or l2, got {c.r_form!r}")
    return out


def _convert(attr: str, raw: str):
    kind = {f.name: f.type for f in fields(SolverConfig)}[attr]
    if kind == "bool":
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    return raw


def parse_config_text(text: str, source: str = "<config>") -> SolverConfig:
    """Parse flat ``key = value`` lines; ``#`` starts a comment."""
    values: dict[str, object] = {}
    lines: dict[str, int] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {body!r}")
        key, raw = (s.strip() for s in body.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in lines:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r} (first set on line {lines[key]})")
        attr = CONFIG_KEYS[key]
        try:
            values[attr] = _convert(attr, raw)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key!r}: {exc}") from None
        lines[key] = lineno
    for key in _REQUIRED:
        if key not in lines:
            raise ConfigError(f"{source}: missing required key {key!r}")
    cfg = SolverConfig.__new__(SolverConfig)
    merged = {f.name: f.default for f in fields(SolverConfig) if f.name not in values}
    merged.update(values)
    for k, v in merged.items():
        object.__setattr__(cfg, k, v)
    problems = validate_config(cfg)
    if problems:
        key, msg = problems[0]
        where = f"{source}:{lines[key]}" if key in lines else f"{source}: (default)"
        raise ConfigError(f"{where}: {key}: {msg}")
    return cfg


def load_config(path: str | Path) -> SolverConfig:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror or exc})") from None
    return parse_config_text(text, str(path))


def config_echo(c: SolverConfig) -> list[str]:
    return [f"{_ATTR_TO_KEY[f.name]}={getattr(c, f.name)!r}" if isinstance(getattr(c, f.name), str)
            else f"{_ATTR_TO_KEY[f.name]}={getattr(c, f.name)}" for f in fields(SolverConfig)]


# -- state --------------------------------------------------------------------

@dataclass(frozen=True)
class LedgerEntry:
    i: int
    T: float
    norm: float


@dataclass(frozen=True)
class SolverState:
    t: float
    step: int
    w: SpectralVectorField
    Y: SpectralVectorField
    ens: OuEnsemble
    segment: int
    lam: float
    ledger: tuple
    magnitudes: NoiseMagnitudes
    u0_norm: float


@dataclass(frozen=True)
class HighLowSplit:
    w_high: SpectralVectorField
    w_low: SpectralVectorField
    lam: float
    Q_high: SpectralVectorField


def lambda_for_segment(i: int, u0_norm: float, a: float) -> float:
    """``(1 + max(i, ceil ||u0||))^a``; at ``t = 0`` this is ``(1 + ceil ||u0||)^a``."""
    return float((1 + max(int(i), int(math.ceil(u0_norm)))) ** a)


def initial_ledger(u0_norm: float) -> tuple:
    """``T_i = 0`` for every ``i <= i0 = floor ||u0||``."""
    i0 = int(math.floor(u0_norm))
    return tuple(LedgerEntry(i, 0.0, u0_norm) for i in range(i0 + 1))


def update_ledger(state: SolverState, a: float) -> SolverState:
    """Record every level ``i + 1 <= ||w_t||`` crossed since the last call."""
    norm = state.w.norm()
    seg, ledger = state.segment, state.ledger
    while norm >= seg + 1:
        seg += 1
        ledger = ledger + (LedgerEntry(seg, state.t, norm),)
    if seg == state.segment:
        return state
    return replace(state, segment=seg, ledger=ledger,
                   lam=lambda_for_segment(seg, state.u0_norm, a))


def split_high_low(w: SpectralVectorField, Q: SpectralVectorField, lam: float,
                   cutoff: CutoffPair = DEFAULT_CUTOFF) -> HighLowSplit:
    """``w_high = P div(w <| H_lambda Q)``, ``w_low = w - w_high``."""
    qh = highpass(Q, lam, cutoff)
    high = leray_project(divergence(para_lt(w, qh)))
    return HighLowSplit(high, w - high, lam, qh)


def initial_field(config: SolverConfig, grid: FourierGrid) -> SpectralVectorField:
    mode = config.u0_mode
    if mode == "zero":
        return SpectralVectorField.zeros(grid)
    if mode == "file":
        u = read_snapshot(config.u0_path, config.dealias)
        if u.grid.n != grid.n:
            raise ConfigError(f"u0.path: snapshot grid {u.grid.n} differs from n={grid.n}")
        u = leray_project(SpectralVectorField(grid, u.coeffs))
    elif mode == "shear":
        c = np.zeros((2, grid.n, grid.n), complex)
        c[0, 0, 1] = -0.5j
        c[0, 0, grid.n - 1] = 0.5j
        u = SpectralVectorField(grid, c, True)
    else:
        stream = NoiseStream(config.seed)
        i1, i2 = np.nonzero(grid.representative)
        k1, k2 = grid.k1[i1, i2], grid.k2[i1, i2]
        z = stream.complex_normals(0, 7, NoiseStream.mode_counter(k1, k2))[0]
        ksq = k1**2 + k2**2
        amp = np.where(ksq <= 16, np.exp(-ksq / 8.0), 0.0) * z
        full = np.zeros((grid.n, grid.n), complex)
        full[i1, i2] = amp
        full[(-k1.astype(int)) % grid.n, (-k2.astype(int)) % grid.n] = np.conj(amp)
        u = SpectralVectorField(grid, full[None] * grid.perp, True)
    nrm = u.norm()
    if nrm == 0 or mode == "file":
        return u
    return u * (config.u0_norm / nrm)


# -- stepping -----------------------------------------------------------------

def _phi1(z: np.ndarray) -> np.ndarray:
    out = np.ones_like(z)
    nz = z != 0
    out[nz] = np.expm1(z[nz]) / z[nz]
    return out


class Stepper:
    """Precomputed factors and the exponential-Euler update for one config."""

    def __init__(self, config: SolverConfig, cutoff: CutoffPair = DEFAULT_CUTOFF):
        self.config = config
        self.cutoff = cutoff
        self.grid = g = FourierGrid(config.n, config.dealias)
        self.dt = dt = config.dt
        self.m = m = config.noise_substeps
        self.h0 = h0 = dt / m
        a = np.where(g.mask, g.ksq, 0.0)
        self.decay = np.exp(-a * dt)
        self.phi = dt * _phi1(-a * dt)
        self.rng = NoiseStream(config.seed)
        self.zeta = config.zeta_spec
        x = 2.0 * a * h0
        self.zscale = np.sqrt(np.where(x > 0, -np.expm1(-x) / np.where(x > 0, x, 1.0), 1.0))
        self.zdecay = [np.exp(-a * h0 * (m - 1 - s)) for s in range(m)]
        if config.level > 0:
            self.mollifier = cutoff.l(g.kabs / config.level)
        else:
            self.mollifier = np.ones_like(g.kabs)
        if self.zeta.mode == "deterministic":
            z = SpectralVectorField(g, self.zeta.path.coeffs)
            self.zeta_forcing = self.phi * leray_project(z).coeffs
        else:
            self.zeta_forcing = None

    # fields seen by the dynamics (mollified for Galerkin levels)
    def X(self, ens: OuEnsemble) -> SpectralVectorField:
        return SpectralVectorField(self.grid, self.mollifier * assemble_X(ens).coeffs, True)

    def Q(self, ens: OuEnsemble) -> SpectralVectorField:
        return SpectralVectorField(self.grid, self.mollifier * assemble_Q(ens).coeffs, True)

    def initial_state(self) -> SolverState:
        cfg, g = self.config, self.grid
        w0 = initial_field(cfg, g)
        w0 = SpectralVectorField(g, self.mollifier * w0.coeffs, True)
        u0n = w0.norm()
        if not (math.isfinite(u0n) and u0n <= cfg.ceiling):
            raise ConfigError(f"u0: initial norm {u0n:.6g} is not finite or exceeds the ceiling")
        ens = OuEnsemble.start(g, cfg.seed, cfg.noise_amplitude)
        ledger = initial_ledger(u0n)
        seg = ledger[-1].i
        mag = NoiseMagnitudes(kappa=cfg.kappa)
        return SolverState(0.0, 0, w0, SpectralVectorField.zeros(g), ens, seg,
                           lambda_for_segment(seg, u0n, cfg.a), ledger, mag, u0n)

    def _rhs(self, w: np.ndarray, X: np.ndarray, Y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Projected nonlinearities for w and Y, as coefficient arrays."""
        g = self.grid
        pw, px, py = g.to_physical(np.stack([w, X, Y]))
        d = 2.0 * (px + py)
        t = np.empty((2, 3) + pw.shape[1:])
        for e, (i, j) in enumerate(((0, 0), (0, 1), (1, 1))):
            t[0, e] = pw[i] * pw[j] + 0.5 * (d[i] * pw[j] + pw[i] * d[j]) + py[i] * py[j]
            t[1, e] = px[i] * py[j] + py[i] * px[j] + px[i] * px[j]
        c = g.from_physical(t, keep_mean=True)
        ik1, ik2 = 1j * g.k1, 1j * g.k2
        div0 = ik1 * c[:, 0] + ik2 * c[:, 1]
        div1 = ik1 * c[:, 1] + ik2 * c[:, 2]
        amp = g.perp[0] * div0 + g.perp[1] * div1
        return g.perp * amp[0], g.perp * amp[1]

    def advance(self, state: SolverState) -> SolverState:
        """One step of length ``dt`` (no ledger update)."""
        g = self.grid
        X = self.X(state.ens).coeffs
        nw, ny = self._rhs(state.w.coeffs, X, state.Y.coeffs)
        w1 = self.decay * state.w.coeffs + self.phi * nw
        y1 = self.decay * state.Y.coeffs + self.phi * ny
        ens = state.ens
        for s in range(self.m):
            if self.zeta.mode == "spectral":
                z = sample_zeta(self.zeta, self.h0, self.rng, ens.counter, g)
                y1 = y1 + self.zdecay[s] * self.zscale * z.coeffs
            ens = evolve_ou(ens, self.h0, self.rng)
        if self.zeta_forcing is not None:
            y1 = y1 + self.zeta_forcing
        step = state.step + 1
        return replace(state, t=step * self.dt, step=step,
                       w=leray_project(SpectralVectorField(g, w1)),
                       Y=leray_project(SpectralVectorField(g, y1)), ens=ens)

    def levels(self, state: SolverState) -> list[float]:
        """Cutoff levels instantiated so far."""
        first = state.ledger[0].i if state.ledger else 0
        i0 = int(math.floor(state.u0_norm))
        lv = {lambda_for_segment(i, state.u0_norm, self.config.a)
              for i in range(min(first, i0), state.segment + 1)}
        return sorted(lv)

    def objects(self, state: SolverState, levels=None):
        lv = self.levels(state) if levels is None else levels
        return build_objects(self.X(state.ens), self.Q(state.ens), state.t, lv, self.cutoff,
                             self.config.r_form, mollify=self.config.level or None)

    def observe(self, state: SolverState) -> tuple[SolverState, dict]:
        """Trajectory row at ``state``; refreshes the noise magnitudes."""
        sp = split_high_low(state.w, self.Q(state.ens), state.lam, self.cutoff)
        mag = state.magnitudes
        if self.config.magnitudes:
            mag = update_magnitudes(mag, self.objects(state), state.Y)
            state = replace(state, magnitudes=mag)
        row = {
            "t": state.t,
            "norm_w_L2": state.w.norm(),
            "norm_wL_L2": sp.w_low.norm(),
            "norm_wL_H1": sobolev_norm(sp.w_low, 1.0),
            "norm_wH": sp.w_high.norm(),
            "lambda": state.lam,
            "segment": state.segment,
            "N_kappa": mag.N_kappa,
        }
        return state, row


TRAJECTORY_COLUMNS = ("t", "norm_w_L2", "norm_wL_L2", "norm_wL_H1", "norm_wH",
                      "lambda", "segment", "N_kappa")


@dataclass
class RunRecord:
    config: SolverConfig
    status: str = STATUS_OK
    message: str = ""
    rows: list = field(default_factory=list)
    norms: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    fields: list = field(default_factory=list)
    audit: list = field(default_factory=list)
    final: SolverState | None = None

    @property
    def ledger(self) -> tuple:
        return self.final.ledger if self.final else ()


def _snapshot(stepper: Stepper, state: SolverState) -> tuple:
    return (state.step, state.t, {"w": state.w, "Y": state.Y,
                                  "X": stepper.X(state.ens), "Q": stepper.Q(state.ens)})


def run(config: SolverConfig, hooks=(), keep_fields: bool = False,
        cutoff: CutoffPair = DEFAULT_CUTOFF) -> RunRecord:
    """Advance ``(X, Q, Y, w)`` to ``t_end`` and collect the outputs.

    Each hook is called as ``hook(stepper, previous_state, new_state)`` after
    every accepted step; returned dicts are appended to ``record.audit``.
    """
    stepper = Stepper(config, cutoff)
    rec = RunRecord(config)
    state = stepper.initial_state()
    state, row = stepper.observe(state)
    rec.rows.append(row)
    rec.norms.append((state.t, state.w.norm(), state.segment))
    rec.snapshots.append(_snapshot(stepper, state))
    if keep_fields:
        rec.fields.append((state.t, state.w))
    total = config.steps
    for _ in range(total):
        # overflow is reported through the status, not as warnings
        with np.errstate(over="ignore", invalid="ignore"):
            new = stepper.advance(state)
            nrm = new.w.norm()
        if not (math.isfinite(nrm) and np.all(np.isfinite(new.Y.coeffs))):
            rec.status, rec.message = STATUS_NAN, f"non-finite state at t={new.t:.6g}"
            state = new
            break
        if nrm > config.ceiling or nrm - state.segment > MAX_LEVEL_JUMP:
            state = new
            rec.norms.append((state.t, nrm, state.segment))
            rec.status = STATUS_EXPLOSION
            if nrm > config.ceiling:
                rec.message = f"||w|| = {nrm:.6g} exceeded ceiling {config.ceiling:g} at t={state.t:.6g}"
            else:
                rec.message = f"||w|| = {nrm:.6g} jumped past {MAX_LEVEL_JUMP} levels at t={state.t:.6g}"
            break
        new = update_ledger(new, config.a)
        for hook in hooks:
            out = hook(stepper, state, new)
            if out is not None:
                rec.audit.append(out)
        state = new
        rec.norms.append((state.t, nrm, state.segment))
        last = state.step == total
        if state.step % config.output_every == 0 or last:
            state, row = stepper.observe(state)
            rec.rows.append(row)
            if keep_fields:
                rec.fields.append((state.t, state.w))
        if config.snapshot_every and state.step % config.snapshot_every == 0 and not last:
            rec.snapshots.append(_snapshot(stepper, state))
    if rec.status == STATUS_EXPLOSION:
        state, row = stepper.observe(state)
        rec.rows.append(row)
    if state.step > 0:
        rec.snapshots.append(_snapshot(stepper, state))
    rec.final = state
    return rec
