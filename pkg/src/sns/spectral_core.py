"""Fourier representation of mean-free periodic fields on the 2D torus.

Coefficients are stored on the full ``n x n`` FFT lattice in numpy's FFT order.
They are normalised so that ``u(x) = sum_k u_hat(k) exp(i k.x)``. With this
convention ``||u||^2 = sum_k |u_hat(k)|^2`` is the spatial mean of ``|u|^2``.
The Laplacian symbol is ``-|k|^2`` for integer wavevectors.

The retained lattice is ``{|k_1|, |k_2| < n/2} \\ {0}``. The Nyquist row and
column are kept at zero so that the pairing ``k <-> -k`` is total.
"""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np
import scipy.fft as sfft

SNSF_MAGIC = b"SNSF"
SNSF_VERSION = 1
_HEADER = struct.Struct("<4sIII")


class HermitianError(ValueError):
    """Raised when coefficients do not describe a real-valued field."""


class SnapshotError(ValueError):
    """Raised for malformed snapshot files."""


def fft_workers() -> int:
    """Worker count for FFTs, capped by the ``SNS_THREADS`` variable."""
    raw = os.environ.get("SNS_THREADS", "")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


class FourierGrid:
    """Truncated wavevector lattice with padded-product machinery.

    Args:
        n: Modes per axis (even, at least 4).
        dealias: If True, products are formed on a ``3n/2`` grid, which
            makes every quadratic product exact on the retained modes.
    """

    def __init__(self, n: int, dealias: bool = True):
        if int(n) != n or n < 4 or n % 2:
            raise ValueError(f"grid size must be an even integer >= 4, got {n}")
        self.n = int(n)
        self.dealias = bool(dealias)
        freq = np.fft.fftfreq(self.n, 1.0 / self.n)
        self.k1, self.k2 = np.meshgrid(freq, freq, indexing="ij")
        self.ksq = self.k1**2 + self.k2**2
        self.kabs = np.sqrt(self.ksq)
        half = self.n // 2
        self.mask = (np.abs(self.k1) < half) & (np.abs(self.k2) < half) & (self.ksq > 0)
        # matrix-valued products keep their spatial mean
        self.mask0 = self.mask | (self.ksq == 0)
        self.laplacian_symbol = np.where(self.mask, -self.ksq, 0.0)
        self.kvec = np.stack([self.k1, self.k2])
        inv = np.zeros_like(self.kabs)
        inv[self.mask] = 1.0 / self.kabs[self.mask]
        # k^perp / |k| with orientation flipped on the negative half-plane so
        # that the unit vector is identical for k and -k
        rep = (self.k1 > 0) | ((self.k1 == 0) & (self.k2 > 0))
        sign = np.where(rep, 1.0, -1.0)
        self.perp = np.stack([self.k2, -self.k1]) * (sign * inv)
        self.representative = rep & self.mask
        self.kmin = 1.0
        self.kmax = float(np.max(self.kabs[self.mask]))
        self.m = 3 * self.n // 2 if self.dealias else self.n
        self._build_maps()

    def __eq__(self, other) -> bool:
        return isinstance(other, FourierGrid) and other.n == self.n and other.dealias == self.dealias

    def __hash__(self) -> int:
        return hash((self.n, self.dealias))

    def __repr__(self) -> str:
        return f"FourierGrid(n={self.n}, dealias={self.dealias})"

    @property
    def radius(self) -> float:
        """Largest retained |k|."""
        return self.kmax

    def _build_maps(self) -> None:
        n, m = self.n, self.m
        i1, i2 = np.nonzero(self.mask0)
        kk1 = self.k1[i1, i2].astype(int)
        kk2 = self.k2[i1, i2].astype(int)
        self._flat = i1 * n + i2
        # forward gather from the half spectrum of an m x m real transform
        neg = kk2 < 0
        self._rows = np.where(neg, -kk1, kk1) % m
        self._cols = np.abs(kk2)
        self._conj = neg
        # inverse scatter into the half spectrum (k2 >= 0 only)
        keep = kk2 >= 0
        self._inv_flat = self._flat[keep]
        self._inv_rows = kk1[keep] % m
        self._inv_cols = kk2[keep]

    def to_physical(self, coeffs: np.ndarray) -> np.ndarray:
        """Real values on the product grid (``m x m``) for any leading shape."""
        lead = coeffs.shape[:-2]
        flat = coeffs.reshape(lead + (-1,))
        half = np.zeros(lead + (self.m, self.m // 2 + 1), dtype=complex)
        half[..., self._inv_rows, self._inv_cols] = flat[..., self._inv_flat]
        return sfft.irfft2(half, s=(self.m, self.m), norm="forward", workers=fft_workers())

    def from_physical(self, values: np.ndarray, keep_mean: bool = False) -> np.ndarray:
        """Truncated coefficients of real values sampled on the product grid."""
        if values.shape[-2:] != (self.m, self.m):
            raise ValueError("values must live on the product grid")
        lead = values.shape[:-2]
        half = sfft.rfft2(values, norm="forward", workers=fft_workers())
        picked = half[..., self._rows, self._cols]
        picked = np.where(self._conj, np.conj(picked), picked)
        out = np.zeros(lead + (self.n * self.n,), dtype=complex)
        out[..., self._flat] = picked
        out = out.reshape(lead + (self.n, self.n))
        if not keep_mean:
            out[..., 0, 0] = 0.0
        return out

    def physical_points(self) -> tuple[np.ndarray, np.ndarray]:
        """Coordinates of the product grid on ``[0, 2 pi)^2``."""
        x = 2 * np.pi * np.arange(self.m) / self.m
        return np.meshgrid(x, x, indexing="ij")


def _freeze(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


class SpectralVectorField:
    """Immutable mean-free vector field stored as coefficients ``(2, n, n)``."""

    __slots__ = ("grid", "coeffs", "divergence_free")

    def __init__(self, grid: FourierGrid, coeffs: np.ndarray, divergence_free: bool = False):
        coeffs = np.asarray(coeffs, dtype=complex)
        if coeffs.shape != (2, grid.n, grid.n):
            raise ValueError(f"expected shape (2, {grid.n}, {grid.n}), got {coeffs.shape}")
        self.grid = grid
        self.coeffs = _freeze(np.where(grid.mask, coeffs, 0.0))
        self.divergence_free = bool(divergence_free)

    @classmethod
    def zeros(cls, grid: FourierGrid) -> "SpectralVectorField":
        return cls(grid, np.zeros((2, grid.n, grid.n), complex), True)

    @classmethod
    def from_physical(cls, grid: FourierGrid, values: np.ndarray) -> "SpectralVectorField":
        """Build from samples on the product grid, shape ``(2, m, m)``."""
        return cls(grid, grid.from_physical(np.asarray(values, float)))

    def to_physical(self) -> np.ndarray:
        return self.grid.to_physical(self.coeffs)

    def _check(self, other) -> None:
        if not isinstance(other, SpectralVectorField):
            raise TypeError("expected a SpectralVectorField")
        if other.grid != self.grid:
            raise ValueError("grid mismatch")

    def __add__(self, other):
        self._check(other)
        return SpectralVectorField(self.grid, self.coeffs + other.coeffs,
                                   self.divergence_free and other.divergence_free)

    def __sub__(self, other):
        self._check(other)
        return SpectralVectorField(self.grid, self.coeffs - other.coeffs,
                                   self.divergence_free and other.divergence_free)

    def __mul__(self, s: float):
        return SpectralVectorField(self.grid, self.coeffs * float(s), self.divergence_free)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.coeffs) ** 2)))

    def inner(self, other: "SpectralVectorField") -> float:
        self._check(other)
        return float(np.sum((self.coeffs * np.conj(other.coeffs)).real))

    def max_divergence_ratio(self) -> float:
        """max_k |k . u(k)| / |u(k)| over modes with nonzero coefficient."""
        kd = np.abs(np.sum(self.grid.kvec * self.coeffs, axis=0))
        mag = np.sqrt(np.sum(np.abs(self.coeffs) ** 2, axis=0))
        live = mag > 0
        if not np.any(live):
            return 0.0
        return float(np.max(kd[live] / (mag[live] * self.grid.kabs[live])))


class SpectralMatrixField:
    """Immutable 2x2 matrix field stored as coefficients ``(2, 2, n, n)``.

    The zero mode is retained, since products of mean-free fields have a mean.
    """

    __slots__ = ("grid", "coeffs", "symmetric")

    def __init__(self, grid: FourierGrid, coeffs: np.ndarray, symmetric: bool = False):
        coeffs = np.asarray(coeffs, dtype=complex)
        if coeffs.shape != (2, 2, grid.n, grid.n):
            raise ValueError(f"expected shape (2, 2, {grid.n}, {grid.n}), got {coeffs.shape}")
        self.grid = grid
        self.coeffs = _freeze(np.where(grid.mask0, coeffs, 0.0))
        self.symmetric = bool(symmetric)

    @classmethod
    def zeros(cls, grid: FourierGrid) -> "SpectralMatrixField":
        return cls(grid, np.zeros((2, 2, grid.n, grid.n), complex), True)

    @classmethod
    def identity(cls, grid: FourierGrid, scale: float = 1.0) -> "SpectralMatrixField":
        c = np.zeros((2, 2, grid.n, grid.n), complex)
        c[0, 0, 0, 0] = c[1, 1, 0, 0] = scale
        return cls(grid, c, True)

    @classmethod
    def from_physical(cls, grid: FourierGrid, values: np.ndarray, symmetric: bool = False):
        return cls(grid, grid.from_physical(np.asarray(values, float), keep_mean=True), symmetric)

    def to_physical(self) -> np.ndarray:
        return self.grid.to_physical(self.coeffs)

    def _check(self, other) -> None:
        if not isinstance(other, SpectralMatrixField):
            raise TypeError("expected a SpectralMatrixField")
        if other.grid != self.grid:
            raise ValueError("grid mismatch")

    def __add__(self, other):
        self._check(other)
        return SpectralMatrixField(self.grid, self.coeffs + other.coeffs,
                                   self.symmetric and other.symmetric)

    def __sub__(self, other):
        self._check(other)
        return SpectralMatrixField(self.grid, self.coeffs - other.coeffs,
                                   self.symmetric and other.symmetric)

    def __mul__(self, s: float):
        return SpectralMatrixField(self.grid, self.coeffs * float(s), self.symmetric)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def transpose(self) -> "SpectralMatrixField":
        return SpectralMatrixField(self.grid, self.coeffs.transpose(1, 0, 2, 3), self.symmetric)

    def norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.coeffs) ** 2)))

    def inner(self, other: "SpectralMatrixField") -> float:
        self._check(other)
        return float(np.sum((self.coeffs * np.conj(other.coeffs)).real))

    def asymmetry(self) -> float:
        return float(np.max(np.abs(self.coeffs[0, 1] - self.coeffs[1, 0]), initial=0.0))


# -- linear operators ---------------------------------------------------------

def leray_project(phi: SpectralVectorField) -> SpectralVectorField:
    """Orthogonal projection onto divergence-free fields along k^perp."""
    e = phi.grid.perp
    amp = np.sum(e * phi.coeffs, axis=0)
    return SpectralVectorField(phi.grid, e * amp, True)


def heat_propagate(phi: SpectralVectorField, s: float) -> SpectralVectorField:
    """Apply the heat semigroup ``exp(s Delta)``."""
    if s < 0:
        raise ValueError(f"heat propagation time must be nonnegative, got {s}")
    return SpectralVectorField(phi.grid, np.exp(phi.grid.laplacian_symbol * s) * phi.coeffs,
                               phi.divergence_free)


def laplacian(phi: SpectralVectorField) -> SpectralVectorField:
    return SpectralVectorField(phi.grid, phi.grid.laplacian_symbol * phi.coeffs,
                               phi.divergence_free)


def fourier_multiplier(phi, symbol: np.ndarray):
    """Multiply every component of a vector or matrix field by ``symbol(k)``."""
    if isinstance(phi, SpectralMatrixField):
        return SpectralMatrixField(phi.grid, symbol * phi.coeffs, phi.symmetric)
    return SpectralVectorField(phi.grid, symbol * phi.coeffs, phi.divergence_free)


def partial(phi, axis: int):
    """Derivative along coordinate ``axis`` (0 or 1) of a vector or matrix field."""
    return fourier_multiplier(phi, 1j * phi.grid.kvec[axis])


def gradient(phi: SpectralVectorField) -> SpectralMatrixField:
    """``(grad phi)_{ij} = d_i phi_j``."""
    g = 1j * phi.grid.kvec[:, None] * phi.coeffs[None, :]
    return SpectralMatrixField(phi.grid, g)


def sym_gradient(phi: SpectralVectorField) -> SpectralMatrixField:
    """``(grad_sym phi)_{ij} = (d_i phi_j + d_j phi_i) / 2``."""
    g = 1j * phi.grid.kvec[:, None] * phi.coeffs[None, :]
    return SpectralMatrixField(phi.grid, 0.5 * (g + g.transpose(1, 0, 2, 3)), True)


def divergence(m: SpectralMatrixField) -> SpectralVectorField:
    """``div(M)_j = sum_i d_i M_{ij}``."""
    d = np.sum(1j * m.grid.kvec[:, None] * m.coeffs, axis=0)
    return SpectralVectorField(m.grid, d)


def vector_divergence(phi: SpectralVectorField) -> np.ndarray:
    """Scalar divergence coefficients of a vector field."""
    return np.sum(1j * phi.grid.kvec * phi.coeffs, axis=0)


def sobolev_norm(phi, alpha: float) -> float:
    """``||(-Delta)^{alpha/2} phi||`` on the truncated lattice."""
    g = phi.grid
    w = np.zeros_like(g.ksq)
    w[g.mask] = g.ksq[g.mask] ** alpha
    c = phi.coeffs
    axes = tuple(range(c.ndim - 2))
    return float(np.sqrt(np.sum(w * np.sum(np.abs(c) ** 2, axis=axes))))


# -- dealiased pointwise products --------------------------------------------

def sym_tensor(u: SpectralVectorField, v: SpectralVectorField) -> SpectralMatrixField:
    """``u (x)_s v = (u (x) v + v (x) u) / 2`` formed on the product grid."""
    u._check(v)
    pu, pv = u.to_physical(), v.to_physical()
    t = 0.5 * (pu[:, None] * pv[None, :] + pv[:, None] * pu[None, :])
    return SpectralMatrixField.from_physical(u.grid, t, symmetric=True)


def outer(u: SpectralVectorField, v: SpectralVectorField) -> SpectralMatrixField:
    u._check(v)
    pu, pv = u.to_physical(), v.to_physical()
    return SpectralMatrixField.from_physical(u.grid, pu[:, None] * pv[None, :])


def matvec(m: SpectralMatrixField, v: SpectralVectorField) -> SpectralVectorField:
    """``(M v)_i = sum_j M_{ij} v_j``; the spatial mean is dropped."""
    if m.grid != v.grid:
        raise ValueError("grid mismatch")
    pm, pv = m.to_physical(), v.to_physical()
    return SpectralVectorField.from_physical(v.grid, np.einsum("ij...,j...->i...", pm, pv))


def physical_norms(values: np.ndarray, ncomp_axes: int) -> np.ndarray:
    """Pointwise Euclidean (Frobenius) magnitude over the leading component axes."""
    axes = tuple(range(ncomp_axes))
    return np.sqrt(np.sum(values**2, axis=axes))


# -- snapshot io --------------------------------------------------------------

def _lattice_order(n: int) -> tuple[np.ndarray, np.ndarray]:
    ks = np.arange(-n // 2, n // 2)
    a, b = np.meshgrid(ks, ks, indexing="ij")
    a, b = a.ravel(), b.ravel()
    keep = (a != 0) | (b != 0)
    return a[keep], b[keep]


def snapshot_bytes(phi: SpectralVectorField) -> bytes:
    """Serialise a field in the SNSF layout."""
    n = phi.grid.n
    a, b = _lattice_order(n)
    c = phi.coeffs[:, a % n, b % n]
    data = np.empty((a.size, 4), dtype="<f8")
    data[:, 0], data[:, 1] = c[0].real, c[0].imag
    data[:, 2], data[:, 3] = c[1].real, c[1].imag
    return _HEADER.pack(SNSF_MAGIC, SNSF_VERSION, n, a.size) + data.tobytes()


def write_snapshot(path: str | Path, phi: SpectralVectorField) -> None:
    Path(path).write_bytes(snapshot_bytes(phi))


def parse_snapshot(raw: bytes, dealias: bool = True, rtol: float = 1e-12) -> SpectralVectorField:
    if len(raw) < _HEADER.size:
        raise SnapshotError("truncated header")
    magic, version, n, count = _HEADER.unpack_from(raw)
    if magic != SNSF_MAGIC:
        raise SnapshotError(f"bad magic {magic!r}")
    if version != SNSF_VERSION:
        raise SnapshotError(f"unsupported version {version}")
    if n < 4 or n % 2 or count != n * n - 1:
        raise SnapshotError(f"inconsistent header n={n} count={count}")
    body = raw[_HEADER.size:]
    if len(body) != 32 * count:
        raise SnapshotError(f"expected {32 * count} payload bytes, found {len(body)}")
    data = np.frombuffer(body, dtype="<f8").reshape(count, 4)
    a, b = _lattice_order(n)
    coeffs = np.zeros((2, n, n), complex)
    coeffs[0, a % n, b % n] = data[:, 0] + 1j * data[:, 1]
    coeffs[1, a % n, b % n] = data[:, 2] + 1j * data[:, 3]
    grid = FourierGrid(n, dealias)
    _check_hermitian(grid, coeffs, rtol)
    return SpectralVectorField(grid, coeffs)


def read_snapshot(path: str | Path, dealias: bool = True) -> SpectralVectorField:
    return parse_snapshot(Path(path).read_bytes(), dealias)


def _check_hermitian(grid: FourierGrid, coeffs: np.ndarray, rtol: float) -> None:
    n = grid.n
    scale = max(float(np.max(np.abs(coeffs))), 1e-300)
    outside = ~grid.mask
    if np.max(np.abs(coeffs[:, outside]), initial=0.0) > rtol * scale:
        raise HermitianError("Nyquist or mean coefficients must vanish")
    idx = (-np.arange(n)) % n
    partner = np.conj(coeffs[:, idx][:, :, idx])
    err = np.max(np.abs(coeffs - partner))
    if err > rtol * scale:
        raise HermitianError(f"coefficients violate u(-k) = conj u(k) (max defect {err:.3e})")
