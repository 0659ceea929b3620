"""The renormalised Anderson-type operator ``A = Delta/2 + 2 grad_sym L_lambda X - r``."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, eigsh

from .noise import potential
from .paracalc import DEFAULT_CUTOFF, CutoffPair, para_lt
from .spectral_core import (
    FourierGrid,
    SpectralMatrixField,
    SpectralVectorField,
    sobolev_norm,
)


class EigenNonConvergence(RuntimeError):
    """Lanczos did not converge; carries the last available estimate."""

    def __init__(self, message: str, value: float, vector: SpectralVectorField | None):
        super().__init__(message)
        self.value = value
        self.vector = vector


@dataclass(frozen=True)
class OperatorHandle:
    """Frozen data for ``A^lambda_t``: level, noise slice and constant."""

    lam: float
    X: SpectralVectorField
    r: float
    cutoff: CutoffPair = DEFAULT_CUTOFF
    _pot: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_pot", potential(self.X, self.lam, self.cutoff).to_physical())

    @property
    def grid(self) -> FourierGrid:
        return self.X.grid

    def potential_field(self) -> SpectralMatrixField:
        return potential(self.X, self.lam, self.cutoff)


def apply(handle: OperatorHandle, w: SpectralVectorField) -> SpectralVectorField:
    """``Delta w / 2 + (2 grad_sym L X) w - r w`` (mean removed, no Leray projection)."""
    if w.grid != handle.grid:
        raise ValueError("grid mismatch")
    g = w.grid
    pot = g.from_physical(np.einsum("ij...,j...->i...", handle._pot, w.to_physical()))
    coeffs = 0.5 * g.laplacian_symbol * w.coeffs + pot - handle.r * w.coeffs
    return SpectralVectorField(g, coeffs)


def quadratic_form(handle: OperatorHandle, w: SpectralVectorField, tol: float = 1e-10) -> float:
    """``<w, A w>`` for divergence-free ``w``."""
    if w.max_divergence_ratio() > tol:
        raise ValueError("quadratic form requires a divergence-free field")
    return w.inner(apply(handle, w))


class _DivFreeBasis:
    """Real coordinates on divergence-free fields, isometric for ``<., .>``."""

    def __init__(self, grid: FourierGrid):
        self.grid = grid
        self.i1, self.i2 = np.nonzero(grid.representative)
        self.j1 = (-grid.k1[self.i1, self.i2].astype(int)) % grid.n
        self.j2 = (-grid.k2[self.i1, self.i2].astype(int)) % grid.n
        self.size = 2 * self.i1.size

    def to_field(self, x: np.ndarray) -> SpectralVectorField:
        m = self.i1.size
        c = (x[:m] + 1j * x[m:]) * np.sqrt(0.5)
        amp = np.zeros((self.grid.n, self.grid.n), complex)
        amp[self.i1, self.i2] = c
        amp[self.j1, self.j2] = np.conj(c)
        return SpectralVectorField(self.grid, amp[None] * self.grid.perp, True)

    def from_field(self, w: SpectralVectorField) -> np.ndarray:
        amp = np.sum(self.grid.perp * w.coeffs, axis=0)[self.i1, self.i2] * np.sqrt(2.0)
        return np.concatenate([amp.real, amp.imag])


def top_eigenvalue(handle: OperatorHandle, tol: float = 1e-10, max_iter: int = 5000):
    """Largest eigenvalue of ``A`` restricted to divergence-free fields.

    Implicitly restarted Lanczos on the matrix-free action with a fixed start
    vector. Returns ``(value, eigenvector, matvec_count)``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    basis = _DivFreeBasis(handle.grid)
    count = [0]

    def mv(x):
        count[0] += 1
        return basis.from_field(apply(handle, basis.to_field(np.ravel(x))))

    op = LinearOperator((basis.size, basis.size), matvec=mv, dtype=float)
    v0 = np.ones(basis.size) / np.sqrt(basis.size)
    try:
        vals, vecs = eigsh(op, k=1, which="LA", tol=tol, maxiter=max_iter, v0=v0)
    except ArpackNoConvergence as exc:
        if len(exc.eigenvalues):
            vec = basis.to_field(exc.eigenvectors[:, 0])
            raise EigenNonConvergence("top eigenvalue did not converge",
                                      float(exc.eigenvalues[0]), vec) from exc
        raise EigenNonConvergence("top eigenvalue did not converge", float("nan"), None) from exc
    return float(vals[0]), basis.to_field(vecs[:, 0]), count[0]


def paracontrolled_remainder(w: SpectralVectorField, P: SpectralMatrixField, kappa: float):
    """``(||w||_{H^{1-k}}, ||w - w <| P||_{H^{2-2k}}, sum)``."""
    low = sobolev_norm(w, 1.0 - kappa)
    rem = sobolev_norm(w - para_lt(w, P), 2.0 - 2.0 * kappa)
    return low, rem, low + rem
