"""Exact-in-law stochastic objects: X, Q, P^lambda, enhanced products and zeta.

Randomness comes from a counter-based Threefry-2x32-20 generator keyed by the
run seed. The counter encodes ``(fine step, slot, wavevector)``, so every draw
is reproducible regardless of iteration order or worker count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .paracalc import DEFAULT_CUTOFF, CutoffPair, holder_norm, lowpass, resonant
from .spectral_core import (
    FourierGrid,
    SpectralMatrixField,
    SpectralVectorField,
    leray_project,
    sym_gradient,
)

# -- Threefry 2x32-20 ---------------------------------------------------------

_ROT = (13, 15, 26, 6, 17, 29, 16, 24)
_PARITY = np.uint32(0x1BD11BDA)
_M32 = 0xFFFFFFFF


def _rotl(x: np.ndarray, r: int) -> np.ndarray:
    return (x << np.uint32(r)) | (x >> np.uint32(32 - r))


def threefry2x32(key, ctr0, ctr1, rounds: int = 20) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised Threefry-2x32 block function.

    Args:
        key: Pair of 32-bit key words (scalars or broadcastable arrays).
        ctr0, ctr1: Counter words, broadcast together.
        rounds: Number of rounds (20 for the standard generator).
    """
    k0 = np.asarray(key[0], dtype=np.uint32)
    k1 = np.asarray(key[1], dtype=np.uint32)
    ks = (k0, k1, k0 ^ k1 ^ _PARITY)
    x0 = np.asarray(ctr0, dtype=np.uint32) + ks[0]
    x1 = np.asarray(ctr1, dtype=np.uint32) + ks[1]
    x0, x1 = np.broadcast_arrays(x0, x1)
    x0, x1 = x0.copy(), x1.copy()
    with np.errstate(over="ignore"):
        for r in range(rounds):
            x0 = x0 + x1
            x1 = _rotl(x1, _ROT[r % 8]) ^ x0
            if r % 4 == 3:
                s = r // 4 + 1
                x0 = x0 + ks[s % 3]
                x1 = x1 + ks[(s + 1) % 3] + np.uint32(s)
    return x0, x1


def seed_key(seed: int) -> tuple[int, int]:
    """Split a nonnegative integer seed into two 32-bit key words."""
    seed = int(seed)
    if seed < 0:
        raise ValueError("seed must be nonnegative")
    return seed & _M32, (seed >> 32) & _M32


def _uniform(bits: np.ndarray) -> np.ndarray:
    return (bits.astype(np.float64) + 0.5) * (1.0 / 4294967296.0)


class NoiseStream:
    """Gaussian draws addressed by ``(step, slot, wavevector)``.

    Slots 0 and 1 drive X and Q, slots 2 and 3 drive zeta, slot 7 is used for
    the random initial condition.
    """

    SLOTS = 8

    def __init__(self, seed):
        seeds = np.atleast_1d(np.asarray(seed, dtype=np.uint64))
        self.seeds = seeds
        self.key = ((seeds & np.uint64(_M32)).astype(np.uint32)[:, None],
                    (seeds >> np.uint64(32)).astype(np.uint32)[:, None])

    @property
    def paths(self) -> int:
        return self.seeds.size

    @staticmethod
    def mode_counter(k1: np.ndarray, k2: np.ndarray) -> np.ndarray:
        return (((k1.astype(np.int64) + 32768) << 16) | (k2.astype(np.int64) + 32768)).astype(np.uint32)

    def normals(self, step: int, slot: int, c1: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Two independent standard normal arrays of shape ``(paths, len(c1))``."""
        if not 0 <= slot < self.SLOTS:
            raise ValueError(f"slot {slot} out of range")
        c0 = np.uint32((step * self.SLOTS + slot) & _M32)
        b0, b1 = threefry2x32(self.key, c0, c1[None, :])
        u0, u1 = _uniform(b0), _uniform(b1)
        rad = np.sqrt(-2.0 * np.log(u0))
        ang = 2.0 * np.pi * u1
        return rad * np.cos(ang), rad * np.sin(ang)

    def complex_normals(self, step: int, slot: int, c1: np.ndarray) -> np.ndarray:
        """Complex normals with ``E|Z|^2 = 1``."""
        a, b = self.normals(step, slot, c1)
        return (a + 1j * b) * math.sqrt(0.5)


# -- exact OU / heat transition ------------------------------------------------

def _jm(m: int, x: np.ndarray) -> np.ndarray:
    """``J_m(x) = int_0^1 s^m exp(-x s) ds`` for ``m`` in 0, 1, 2."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    small = x < 1.0
    xs = x[small]
    term = np.ones_like(xs)
    acc = np.zeros_like(xs)
    for j in range(30):
        acc += term / (m + j + 1)
        term = term * (-xs) / (j + 1)
    out[small] = acc
    xl = x[~small]
    e = np.exp(-xl)
    if m == 0:
        out[~small] = -np.expm1(-xl) / xl
    elif m == 1:
        out[~small] = (1.0 - e * (1.0 + xl)) / xl**2
    else:
        out[~small] = (2.0 - e * (xl**2 + 2.0 * xl + 2.0)) / xl**3
    return out


def transition_covariance(a: np.ndarray, h: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Covariance of ``(int e^{-a u} dW, int u e^{-a u} dW)`` over ``u in [0, h]``."""
    x = 2.0 * a * h
    return h * _jm(0, x), h**2 * _jm(1, x), h**3 * _jm(2, x)


@dataclass(frozen=True)
class OuEnsemble:
    """Per-mode OU amplitudes ``F`` and their heat integrals ``q`` (Q along k^perp).

    Arrays have shape ``(paths, n, n)``; ``counter`` is the number of fine
    steps consumed so far.
    """

    grid: FourierGrid
    F: np.ndarray
    q: np.ndarray
    t: float
    counter: int
    seeds: tuple
    amplitude: float = 1.0

    @classmethod
    def start(cls, grid: FourierGrid, seed, amplitude: float = 1.0) -> "OuEnsemble":
        seeds = tuple(int(s) for s in np.atleast_1d(seed))
        shape = (len(seeds), grid.n, grid.n)
        return cls(grid, np.zeros(shape, complex), np.zeros(shape, complex), 0.0, 0, seeds,
                   float(amplitude))

    @property
    def paths(self) -> int:
        return len(self.seeds)


_GRID_CACHE: dict = {}


def _rep_data(grid: FourierGrid):
    hit = _GRID_CACHE.get(("rep", grid))
    if hit is None:
        i1, i2 = np.nonzero(grid.representative)
        k1 = grid.k1[i1, i2].astype(int)
        k2 = grid.k2[i1, i2].astype(int)
        j1, j2 = (-k1) % grid.n, (-k2) % grid.n
        hit = (i1, i2, j1, j2, NoiseStream.mode_counter(k1, k2), grid.ksq[i1, i2])
        _GRID_CACHE[("rep", grid)] = hit
    return hit


def _hermitian_fill(grid: FourierGrid, vals: np.ndarray) -> np.ndarray:
    """Place representative-mode values and their conjugate partners."""
    i1, i2, j1, j2, _, _ = _rep_data(grid)
    lead = vals.shape[:-1]
    out = np.zeros(lead + (grid.n, grid.n), complex)
    out[..., i1, i2] = vals
    out[..., j1, j2] = np.conj(vals)
    return out


def _transition_factors(grid: FourierGrid, delta: float):
    hit = _GRID_CACHE.get(("chol", grid, delta))
    if hit is None:
        a = _rep_data(grid)[5]
        v11, v12, v22 = transition_covariance(a, delta)
        l11 = np.sqrt(v11)
        l21 = v12 / l11
        hit = (np.exp(-a * delta), l11, l21, np.sqrt(np.maximum(v22 - l21**2, 0.0)))
        _GRID_CACHE[("chol", grid, delta)] = hit
    return hit


def evolve_ou(ens: OuEnsemble, delta: float, rng: NoiseStream | None = None) -> OuEnsemble:
    """Advance ``(F, q)`` by the exact Gaussian transition over ``delta``.

    ``F <- e^{-a h} F + G1`` and ``q <- e^{-a h}(q + 2 h F) + 2 G2`` with
    ``a = |k|^2``; ``(G1, G2)`` is the exact joint increment. Hermitian
    partners share one draw.
    """
    if not delta > 0:
        raise ValueError(f"time step must be positive, got {delta}")
    grid = ens.grid
    rng = rng if rng is not None else NoiseStream(ens.seeds)
    i1, i2, _, _, c1, _ = _rep_data(grid)
    decay, l11, l21, l22 = _transition_factors(grid, float(delta))
    z1 = rng.complex_normals(ens.counter, 0, c1)
    z2 = rng.complex_normals(ens.counter, 1, c1)
    amp = ens.amplitude
    g1 = amp * (l11 * z1)
    g2 = amp * (l21 * z1 + l22 * z2)
    f_old = ens.F[..., i1, i2]
    q_old = ens.q[..., i1, i2]
    f_new = decay * f_old + g1
    q_new = decay * (q_old + 2.0 * delta * f_old) + 2.0 * g2
    return replace(ens, F=_hermitian_fill(grid, f_new), q=_hermitian_fill(grid, q_new),
                   t=ens.t + delta, counter=ens.counter + 1)


def assemble_X(ens: OuEnsemble, path: int = 0) -> SpectralVectorField:
    """``X_hat(k) = F(k) k^perp / |k|``."""
    return SpectralVectorField(ens.grid, ens.F[path][None] * ens.grid.perp, True)


def assemble_Q(ens: OuEnsemble, path: int = 0) -> SpectralVectorField:
    return SpectralVectorField(ens.grid, ens.q[path][None] * ens.grid.perp, True)


# -- renormalisation ----------------------------------------------------------

def renorm_constant(lam: float, t: float, grid: FourierGrid,
                    cutoff: CutoffPair = DEFAULT_CUTOFF, form: str = "l2",
                    mollify: float | None = None) -> float:
    """``r_lambda(t) = 1/4 sum_k w(|k|/lambda) (1 - e^{-2|k|^2 t}) / (|k|^2/2 + 1)``.

    ``form="l2"`` uses ``w = l^2``, ``form="l"`` uses ``w = l``. A mollification
    level ``n`` multiplies the weight by ``l(|k|/n)`` (or its square).
    """
    if lam < 1:
        raise ValueError(f"cutoff level must be >= 1, got {lam}")
    ksq = grid.ksq[grid.mask]
    lv = cutoff.l(np.sqrt(ksq) / lam)
    if form == "l2":
        weight = lv * lv
    elif form == "l":
        weight = lv
    else:
        raise ValueError(f"unknown renormalisation form {form!r}")
    if mollify is not None:
        ln = cutoff.l(np.sqrt(ksq) / mollify)
        weight = weight * (ln * ln if form == "l2" else ln)
    terms = weight * (-np.expm1(-2.0 * ksq * t)) / (ksq / 2.0 + 1.0)
    return 0.25 * float(np.sum(terms))


def renorm_constant_n(lam: float, n: float, t: float, grid: FourierGrid,
                      cutoff: CutoffPair = DEFAULT_CUTOFF) -> float:
    """``r^n_lambda(t) = 1/4 sum_k l(|k|/lambda) l(|k|/n) (1 - e^{-2|k|^2 t}) / (|k|^2/2 + 1)``."""
    if lam < 1 or n < 1:
        raise ValueError("levels must be >= 1")
    ksq = grid.ksq[grid.mask]
    kabs = np.sqrt(ksq)
    weight = cutoff.l(kabs / lam) * cutoff.l(kabs / n)
    terms = weight * (-np.expm1(-2.0 * ksq * t)) / (ksq / 2.0 + 1.0)
    return 0.25 * float(np.sum(terms))


def resolvent_symbol(grid: FourierGrid) -> np.ndarray:
    """``(|k|^2/2 + 1)^{-1}``."""
    return 1.0 / (grid.ksq / 2.0 + 1.0)


def build_P_lambda(X: SpectralVectorField, lam: float,
                   cutoff: CutoffPair = DEFAULT_CUTOFF) -> SpectralMatrixField:
    """``P^lambda = (-Delta/2 + 1)^{-1} 2 grad_sym L_lambda X``."""
    g = sym_gradient(lowpass(X, lam, cutoff))
    return SpectralMatrixField(X.grid, 2.0 * resolvent_symbol(X.grid) * g.coeffs, True)


def potential(X: SpectralVectorField, lam: float,
              cutoff: CutoffPair = DEFAULT_CUTOFF) -> SpectralMatrixField:
    """``2 grad_sym L_lambda X``."""
    return sym_gradient(lowpass(X, lam, cutoff)) * 2.0


def enhanced_product(X: SpectralVectorField, lam: float, t: float, r: float,
                     cutoff: CutoffPair = DEFAULT_CUTOFF) -> SpectralMatrixField:
    """``(2 grad_sym L_lambda X) (.) P^lambda - r Id``."""
    res = resonant(potential(X, lam, cutoff), build_P_lambda(X, lam, cutoff))
    return res - SpectralMatrixField.identity(X.grid, r)


def zeroth_chaos_mean(lam: float, t: float, grid: FourierGrid,
                      cutoff: CutoffPair = DEFAULT_CUTOFF, amplitude: float = 1.0) -> float:
    """Exact mean of a diagonal entry of ``(2 grad_sym L X) (.) P^lambda``.

    Uses ``E|F|^2 = (1 - e^{-2|k|^2 t}) / (2|k|^2)`` and the identity
    ``sum_j |k_i e_j + k_j e_i|^2 = |k|^2`` for ``e`` orthogonal to ``k``.
    """
    ksq = grid.ksq[grid.mask]
    lv = cutoff.l(np.sqrt(ksq) / lam)
    var = amplitude**2 * (-np.expm1(-2.0 * ksq * t)) / (2.0 * ksq)
    return float(np.sum(lv * lv * ksq * var / (ksq / 2.0 + 1.0)))


# -- perturbation zeta -----------------------------------------------------------

@dataclass(frozen=True)
class ZetaSpec:
    """Perturbation model: ``off``, ``spectral`` (sigma, theta) or ``deterministic``."""

    mode: str = "spectral"
    sigma: float = 1.0
    theta: float = 0.5
    path: SpectralVectorField | None = None

    def __post_init__(self):
        if self.mode not in ("off", "spectral", "deterministic"):
            raise ValueError(f"invalid zeta mode {self.mode!r}")
        if self.mode == "spectral" and (self.sigma < 0 or self.theta < 0):
            raise ValueError("zeta sigma and theta must be nonnegative")
        if self.mode == "deterministic" and self.path is None:
            raise ValueError("deterministic zeta needs a field")


def sample_zeta(spec: ZetaSpec, delta: float, rng: NoiseStream, step: int,
                grid: FourierGrid, path: int = 0) -> SpectralVectorField:
    """Increment of zeta over one step of length ``delta``.

    Spectral mode draws per-mode Gaussians with standard deviation
    ``sigma |k|^{-theta} sqrt(delta)`` per component and projects them.
    """
    if not delta > 0:
        raise ValueError(f"time step must be positive, got {delta}")
    if spec.mode == "off":
        return SpectralVectorField.zeros(grid)
    if spec.mode == "deterministic":
        return leray_project(spec.path) * delta
    _, _, _, _, c1, a = _rep_data(grid)
    std = spec.sigma * a ** (-0.5 * spec.theta) * math.sqrt(delta)
    z0 = rng.complex_normals(step, 2, c1)[path] * std
    z1 = rng.complex_normals(step, 3, c1)[path] * std
    coeffs = np.stack([_hermitian_fill(grid, z0), _hermitian_fill(grid, z1)])
    return leray_project(SpectralVectorField(grid, coeffs))


# -- objects and magnitudes -----------------------------------------------------

@dataclass(frozen=True)
class StochasticObjects:
    t: float
    X: SpectralVectorField
    Q: SpectralVectorField
    P_by_level: dict = field(default_factory=dict)
    r_by_level: dict = field(default_factory=dict)
    enhanced_by_level: dict = field(default_factory=dict)


def build_objects(X: SpectralVectorField, Q: SpectralVectorField, t: float, levels,
                  cutoff: CutoffPair = DEFAULT_CUTOFF, form: str = "l2",
                  mollify: float | None = None) -> StochasticObjects:
    """Assemble ``P^lambda``, ``r_lambda`` and enhanced products for each level."""
    P, R, E = {}, {}, {}
    for lam in levels:
        r = renorm_constant(lam, t, X.grid, cutoff, form, mollify)
        P[lam] = build_P_lambda(X, lam, cutoff)
        R[lam] = r
        E[lam] = resonant(potential(X, lam, cutoff), P[lam]) - SpectralMatrixField.identity(X.grid, r)
    return StochasticObjects(t, X, Q, P, R, E)


@dataclass(frozen=True)
class NoiseMagnitudes:
    """Running suprema ``L_t`` and ``N_t``; ``enhanced_sup`` is the enhanced-noise part."""

    t: float = 0.0
    L_kappa: float = 1.0
    N_kappa: float = 1.0
    kappa: float = 0.1
    level_set: tuple = ()
    enhanced_sup: float = 0.0


def update_magnitudes(mag: NoiseMagnitudes, objects: StochasticObjects,
                      Y: SpectralVectorField) -> NoiseMagnitudes:
    if mag.kappa <= 0:
        raise ValueError("kappa must be positive")
    k = mag.kappa
    inst = holder_norm(objects.X, -k) + holder_norm(Y, 2 * k)
    L = max(mag.L_kappa, 1.0 + inst)
    esup = mag.enhanced_sup
    for e in objects.enhanced_by_level.values():
        esup = max(esup, holder_norm(e, -k))
    levels = tuple(sorted(set(mag.level_set) | set(objects.enhanced_by_level)))
    return NoiseMagnitudes(objects.t, L, max(mag.N_kappa, L + esup), k, levels, esup)
