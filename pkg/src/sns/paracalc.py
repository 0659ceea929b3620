"""Littlewood-Paley calculus on the truncated lattice.

Dyadic blocks come from a C-infinity bump ``chi`` equal to 1 on ``[0, 3/4]``
and 0 beyond ``4/3``: ``rho_{-1} = chi`` and ``rho_j(r) = chi(r/2^{j+1}) - chi(r/2^j)``.
Paraproducts are summed block by block on the product grid, so the
trichotomy ``phi * psi = lt + resonant + gt`` is exact.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .spectral_core import (
    FourierGrid,
    SpectralMatrixField,
    SpectralVectorField,
    fourier_multiplier,
    partial,
    physical_norms,
)

_CHI_LO, _CHI_HI = 0.75, 4.0 / 3.0


def _psi(x: np.ndarray) -> np.ndarray:
    out = np.zeros_like(x, dtype=float)
    pos = x > 0
    out[pos] = np.exp(-1.0 / x[pos])
    return out


def chi(r) -> np.ndarray:
    """Smooth radial bump: 1 for r <= 3/4, 0 for r >= 4/3."""
    r = np.asarray(r, dtype=float)
    a = _psi(_CHI_HI - r)
    b = _psi(r - _CHI_LO)
    out = np.where(r <= _CHI_LO, 1.0, 0.0)
    mid = (r > _CHI_LO) & (r < _CHI_HI)
    out = np.where(mid, a / np.where(mid, a + b, 1.0), out)
    return out


def smoothstep_h(r) -> np.ndarray:
    """High-pass profile: 0 for r <= 1/2, 1 for r >= 1, quintic in between."""
    s = np.clip((np.asarray(r, dtype=float) - 0.5) * 2.0, 0.0, 1.0)
    return s**3 * (10.0 - 15.0 * s + 6.0 * s**2)


def smoothstep_l(r) -> np.ndarray:
    """Low-pass profile ``1 - h``."""
    return 1.0 - smoothstep_h(r)


@dataclass(frozen=True)
class CutoffPair:
    """Smooth cutoff profiles ``h`` and ``l = 1 - h``."""

    def h(self, r) -> np.ndarray:
        return smoothstep_h(r)

    def l(self, r) -> np.ndarray:
        return smoothstep_l(r)


DEFAULT_CUTOFF = CutoffPair()


class DyadicPartition:
    """Radial dyadic partition of unity adapted to a grid.

    ``J_max`` is the smallest index whose partial sum equals 1 on every
    retained wavevector, so the blocks sum to the identity on the grid.
    """

    def __init__(self, grid: FourierGrid):
        self.grid = grid
        j = -1
        while _CHI_LO * 2.0 ** (j + 1) < grid.kmax:
            j += 1
        self.J_max = j
        self._profiles = np.stack([self.rho(i, grid.kabs) for i in self.indices])
        # S_{j-1} = sum_{i <= j-2} Delta_i, written as chi(r / 2^{j-1})
        self._low = np.stack([self.low_profile(i, grid.kabs) for i in self.indices])

    @property
    def indices(self) -> range:
        return range(-1, self.J_max + 1)

    @staticmethod
    def rho(j: int, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        if j == -1:
            return chi(r)
        return chi(r / 2.0 ** (j + 1)) - chi(r / 2.0**j)

    @staticmethod
    def low_profile(j: int, r) -> np.ndarray:
        """Symbol of ``S_{j-1}``; zero for ``j <= 0``."""
        if j <= 0:
            return np.zeros_like(np.asarray(r, dtype=float))
        return chi(np.asarray(r, dtype=float) / 2.0 ** (j - 1))

    def profile(self, j: int) -> np.ndarray:
        self._check_index(j)
        return self._profiles[j + 1]

    def _check_index(self, j: int) -> None:
        if j < -1 or j > self.J_max:
            raise IndexError(f"block index {j} outside [-1, {self.J_max}]")

    def unity_residual(self) -> float:
        total = np.sum(self._profiles, axis=0)
        return float(np.max(np.abs(1.0 - total[self.grid.mask])))

    def export_csv(self, path: str | Path, samples: int = 400) -> None:
        """Write ``|k|`` against every ``rho_j`` and the cutoff pair."""
        r = np.linspace(0.0, self.grid.kmax * 1.05, samples)
        cols = [self.rho(j, r) for j in self.indices]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["k"] + [f"rho_{j}" for j in self.indices] + ["h", "l"])
            h = smoothstep_h(r / max(1.0, self.grid.kmax / 2))
            for i in range(samples):
                w.writerow([_fmt(r[i])] + [_fmt(c[i]) for c in cols] + [_fmt(h[i]), _fmt(1 - h[i])])


def _fmt(x: float) -> str:
    return repr(float(x))


_PARTITIONS: dict[FourierGrid, DyadicPartition] = {}


def partition_for(grid: FourierGrid) -> DyadicPartition:
    part = _PARTITIONS.get(grid)
    if part is None:
        part = _PARTITIONS[grid] = DyadicPartition(grid)
    return part


def paley_block(phi, j: int):
    """``Delta_j phi``."""
    part = partition_for(phi.grid)
    return fourier_multiplier(phi, part.profile(j))


# -- cutoffs ------------------------------------------------------------------

def lowpass(phi, lam: float, cutoff: CutoffPair = DEFAULT_CUTOFF):
    """``L_lambda phi``: multiplier ``l(|k| / lambda)``."""
    if lam < 1:
        raise ValueError(f"cutoff level must be >= 1, got {lam}")
    return fourier_multiplier(phi, cutoff.l(phi.grid.kabs / lam))


def highpass(phi, lam: float, cutoff: CutoffPair = DEFAULT_CUTOFF):
    """``H_lambda phi``: multiplier ``h(|k| / lambda)``."""
    if lam < 1:
        raise ValueError(f"cutoff level must be >= 1, got {lam}")
    return fourier_multiplier(phi, cutoff.h(phi.grid.kabs / lam))


# -- Besov norms --------------------------------------------------------------

def _lp(values: np.ndarray, ncomp: int, p: float) -> float:
    mag = physical_norms(values, ncomp)
    if math.isinf(p):
        return float(np.max(mag))
    return float(np.mean(mag**p) ** (1.0 / p))


def block_lp_norms(phi, p: float) -> np.ndarray:
    """``||Delta_j phi||_{L^p}`` for every block, on the product grid."""
    part = partition_for(phi.grid)
    ncomp = phi.coeffs.ndim - 2
    stacked = part._profiles[(slice(None),) + (None,) * ncomp] * phi.coeffs[None]
    vals = phi.grid.to_physical(stacked)
    return np.array([_lp(v, ncomp, p) for v in vals])


def besov_norm(phi, alpha: float, p: float = 2, q: float = 2) -> float:
    """``(sum_j 2^{j alpha q} ||Delta_j phi||_{L^p}^q)^{1/q}``; ``q = inf`` takes the sup."""
    if p not in (1, 2, 4, math.inf) or q not in (2, math.inf):
        raise ValueError(f"unsupported Besov indices p={p}, q={q}")
    part = partition_for(phi.grid)
    norms = block_lp_norms(phi, p)
    weights = 2.0 ** (alpha * np.array(list(part.indices), dtype=float))
    terms = weights * norms
    if math.isinf(q):
        return float(np.max(terms))
    return float(np.sum(terms**q) ** (1.0 / q))


def holder_norm(phi, alpha: float) -> float:
    """``C^alpha = B^alpha_{inf, inf}``."""
    return besov_norm(phi, alpha, math.inf, math.inf)


# -- paraproducts -------------------------------------------------------------

def _kind(phi) -> str:
    if isinstance(phi, SpectralVectorField):
        return "v"
    if isinstance(phi, SpectralMatrixField):
        return "m"
    raise TypeError(f"unsupported operand {type(phi).__name__}")


def _contract(kinds: str, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if kinds == "vv":
        return 0.5 * (a[:, None] * b[None, :] + b[:, None] * a[None, :])
    if kinds == "vm":
        return np.einsum("j...,ji...->i...", a, b)
    if kinds == "mv":
        return np.einsum("ij...,j...->i...", a, b)
    return np.einsum("ik...,kj...->ij...", a, b)


def _wrap(grid: FourierGrid, kinds: str, values: np.ndarray):
    if kinds in ("vv", "mm"):
        return SpectralMatrixField.from_physical(grid, values, symmetric=(kinds == "vv"))
    return SpectralVectorField.from_physical(grid, values)


def _block_values(phi, profiles: np.ndarray) -> np.ndarray:
    ncomp = phi.coeffs.ndim - 2
    stacked = profiles[(slice(None),) + (None,) * ncomp] * phi.coeffs[None]
    return phi.grid.to_physical(stacked)


def _check_pair(phi, psi) -> str:
    kinds = _kind(phi) + _kind(psi)
    if phi.grid != psi.grid:
        raise ValueError("grid mismatch")
    return kinds


def para_lt_values(phi, psi) -> np.ndarray:
    kinds = _check_pair(phi, psi)
    part = partition_for(phi.grid)
    low = _block_values(phi, part._low)
    high = _block_values(psi, part._profiles)
    out = 0.0
    for j in range(1, len(part.indices)):
        out = out + _contract(kinds, low[j], high[j])
    return out


def para_lt(phi, psi):
    """``phi <| psi = sum_j (S_{j-1} phi) (Delta_j psi)`` with contraction by operand types.

    vector/vector gives the symmetric tensor, vector/matrix gives
    ``sum_j phi_j M_{ji}``, matrix/vector gives ``M v`` and matrix/matrix the
    matrix product.
    """
    kinds = _check_pair(phi, psi)
    return _wrap(phi.grid, kinds, para_lt_values(phi, psi))


def para_gt(phi, psi):
    """``phi |> psi = sum_j (Delta_j phi) (S_{j-1} psi)``."""
    kinds = _check_pair(phi, psi)
    part = partition_for(phi.grid)
    high = _block_values(phi, part._profiles)
    low = _block_values(psi, part._low)
    out = 0.0
    for j in range(1, len(part.indices)):
        out = out + _contract(kinds, high[j], low[j])
    return _wrap(phi.grid, kinds, out)


def resonant_values(phi, psi) -> np.ndarray:
    kinds = _check_pair(phi, psi)
    part = partition_for(phi.grid)
    a = _block_values(phi, part._profiles)
    b = _block_values(psi, part._profiles)
    nb = len(part.indices)
    out = 0.0
    for i in range(nb):
        near = b[max(0, i - 1):i + 2].sum(axis=0)
        out = out + _contract(kinds, a[i], near)
    return out


def resonant(phi, psi):
    """``phi (.) psi = sum_{|i-j| <= 1} (Delta_i phi)(Delta_j psi)``."""
    kinds = _check_pair(phi, psi)
    return _wrap(phi.grid, kinds, resonant_values(phi, psi))


def full_product(phi, psi):
    """Pointwise product with the same contraction rule as the paraproducts."""
    kinds = _check_pair(phi, psi)
    return _wrap(phi.grid, kinds, _contract(kinds, phi.to_physical(), psi.to_physical()))


# -- commutator ---------------------------------------------------------------

def _heat_parts(f0, f1, g0, g1, delta):
    if delta <= 0:
        raise ValueError(f"time step must be positive, got {delta}")
    fbar = 0.5 * (f0 + f1)
    gbar = 0.5 * (g0 + g1)
    return fbar, gbar, (f1 - f0) * (1.0 / delta), (g1 - g0) * (1.0 / delta)


def _lap(phi):
    return fourier_multiplier(phi, phi.grid.laplacian_symbol)


def heat_commutator(f0, f1, g0, g1, delta: float):
    """``C(f, g) = ((d_t - Delta) f) <| g - 2 sum_m (d_m f) <| (d_m g)``.

    ``d_t f`` is the difference quotient of the two slices and every other
    factor is the midpoint average, which makes this equal to the defining
    expression ``(d_t - Delta)(f <| g) - f <| (d_t - Delta) g`` exactly.
    """
    fbar, gbar, dtf, _ = _heat_parts(f0, f1, g0, g1, delta)
    head = para_lt(dtf - _lap(fbar), gbar)
    tail = para_lt(partial(fbar, 0), partial(gbar, 0)) + para_lt(partial(fbar, 1), partial(gbar, 1))
    return head - 2.0 * tail


def heat_commutator_defining(f0, f1, g0, g1, delta: float):
    """The defining expression with the same discrete time derivative."""
    fbar, gbar, _, dtg = _heat_parts(f0, f1, g0, g1, delta)
    dt_prod = (para_lt(f1, g1) - para_lt(f0, g0)) * (1.0 / delta)
    return dt_prod - _lap(para_lt(fbar, gbar)) - para_lt(fbar, dtg - _lap(gbar))


def heat_commutator_stated(f0, f1, g0, g1, delta: float):
    """Variant with ``+1`` on the gradient term, kept for comparison."""
    fbar, gbar, dtf, _ = _heat_parts(f0, f1, g0, g1, delta)
    head = para_lt(dtf - _lap(fbar), gbar)
    tail = para_lt(partial(fbar, 0), partial(gbar, 0)) + para_lt(partial(fbar, 1), partial(gbar, 1))
    return head + tail
