"""Fourier-space vector fields and the spatial operators acting on them.

A velocity field is held as a pair of coefficient arrays ``(2, n, n//2+1)`` in
the real-FFT layout of :class:`~viscda.grid.Grid2D`, normalized so that
``u(x) = sum_k uh_k exp(i k.x)``. Norms and inner products include the domain
area, so ``|u|^2 = L^2 * sum_k |uh_k|^2`` over the full lattice.

The array-level helpers (``project``, ``advect``, ...) are what the time
steppers call in their inner loops; the field-level functions wrap them for
library users and carry the divergence-free tag.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy.integrate import trapezoid

from .grid import Grid2D


class GridMismatchError(ValueError):
    pass


# ---------------------------------------------------------------------------
# array-level operators


def hermitianize(grid: Grid2D, uh: np.ndarray) -> np.ndarray:
    """Make the k2 = 0 column satisfy uh(-k) = conj(uh(k)) and apply the mask."""
    out = uh * grid.mask
    col = out[..., :, 0]
    partner = col[..., (-grid.k1_index) % grid.n]
    out[..., :, 0] = 0.5 * (col + partner.conj())
    return out


def project(grid: Grid2D, uh: np.ndarray) -> np.ndarray:
    """Per-mode Leray projector I - k k^T / |k|^2."""
    div = (grid.kx * uh[0] + grid.ky * uh[1]) * grid.inv_k2
    out = np.empty_like(uh)
    out[0] = (uh[0] - grid.kx * div) * grid.mask
    out[1] = (uh[1] - grid.ky * div) * grid.mask
    return out


def advect(grid: Grid2D, uh: np.ndarray, vh: np.ndarray) -> np.ndarray:
    """Dealiased coefficients of P(u . grad v)."""
    ikx = 1j * grid.kx
    iky = 1j * grid.ky
    stack = np.stack([uh[0], uh[1], ikx * vh[0], iky * vh[0], ikx * vh[1], iky * vh[1]])
    u1, u2, v1x, v1y, v2x, v2y = grid.to_physical(stack)
    prod = np.stack([u1 * v1x + u2 * v1y, u1 * v2x + u2 * v2y])
    return project(grid, grid.to_spectral(prod))


def self_advect(grid: Grid2D, uh: np.ndarray) -> np.ndarray:
    """P(u . grad u) via the flux form div(u u^T); equal to ``advect(u, u)``
    for divergence-free u and three transforms cheaper."""
    u1, u2 = grid.to_physical(uh)
    fh = grid.to_spectral(np.stack([u1 * u1, u1 * u2, u2 * u2]))
    ikx = 1j * grid.kx
    iky = 1j * grid.ky
    nh = np.stack([ikx * fh[0] + iky * fh[1], ikx * fh[1] + iky * fh[2]])
    return project(grid, nh)


def cross_advect(grid: Grid2D, ah: np.ndarray, bh: np.ndarray) -> np.ndarray:
    """B(a, b) + B(b, a) via the flux form of the symmetric tensor a b^T + b a^T."""
    a1, a2, b1, b2 = grid.to_physical(np.stack([ah[0], ah[1], bh[0], bh[1]]))
    th = grid.to_spectral(np.stack([2 * a1 * b1, a1 * b2 + a2 * b1, 2 * a2 * b2]))
    ikx = 1j * grid.kx
    iky = 1j * grid.ky
    return project(grid, np.stack([ikx * th[0] + iky * th[1], ikx * th[1] + iky * th[2]]))


def inner_arrays(grid: Grid2D, ah: np.ndarray, bh: np.ndarray) -> float:
    """L2 inner product (a, b) including the domain measure."""
    s = np.sum(grid.weights * (ah.real * bh.real + ah.imag * bh.imag))
    return float(grid.measure * s)


def sq_norm_arrays(grid: Grid2D, ah: np.ndarray, power: int = 0) -> float:
    """sum_k |k|^(2 power) |a_k|^2 times the domain measure."""
    w = grid.weights if power == 0 else grid.weights * grid.k2**power
    return float(grid.measure * np.sum(w * (ah.real**2 + ah.imag**2)))


def low_mode_mask(grid: Grid2D, h: float) -> np.ndarray:
    cutoff = 1.0 / h
    if cutoff > grid.n // 2 * grid.k0 * (1 + 1e-12):
        raise ValueError(f"observation cutoff 1/h = {cutoff:g} exceeds resolved band {grid.n // 2}")
    return (grid.kmag <= cutoff * (1 + 1e-12)) & grid.mask


# ---------------------------------------------------------------------------
# field type


@dataclass(frozen=True, eq=False)
class SpectralField2D:
    """Immutable Fourier representation of a real, mean-zero 2D vector field."""

    grid: Grid2D
    coeffs: np.ndarray
    divergence_free: bool = False

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=complex)
        if c.shape != (2,) + self.grid.shape:
            raise ValueError(f"coeffs shape {c.shape} does not match grid {(2,) + self.grid.shape}")
        c.flags.writeable = False
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def zeros(cls, grid: Grid2D) -> SpectralField2D:
        return cls(grid, np.zeros((2,) + grid.shape, dtype=complex), divergence_free=True)

    @classmethod
    def from_physical(cls, grid: Grid2D, u: np.ndarray) -> SpectralField2D:
        """From samples of shape (2, n, n) on the unpadded grid."""
        return cls(grid, grid.to_spectral(np.asarray(u, dtype=float), padded=False))

    @classmethod
    def from_array(cls, grid: Grid2D, uh: np.ndarray, divergence_free: bool = False) -> SpectralField2D:
        """Wrap raw coefficients after enforcing Hermitian symmetry and zero mean."""
        return cls(grid, hermitianize(grid, np.asarray(uh, dtype=complex)), divergence_free)

    def to_physical(self) -> np.ndarray:
        return self.grid.to_physical(np.asarray(self.coeffs), padded=False)

    def _check(self, other: SpectralField2D) -> None:
        if other.grid != self.grid:
            raise GridMismatchError("fields live on different grids")

    def __add__(self, other: SpectralField2D) -> SpectralField2D:
        self._check(other)
        return SpectralField2D(self.grid, self.coeffs + other.coeffs,
                               self.divergence_free and other.divergence_free)

    def __sub__(self, other: SpectralField2D) -> SpectralField2D:
        self._check(other)
        return SpectralField2D(self.grid, self.coeffs - other.coeffs,
                               self.divergence_free and other.divergence_free)

    def __mul__(self, scalar: float) -> SpectralField2D:
        return SpectralField2D(self.grid, self.coeffs * float(scalar), self.divergence_free)

    __rmul__ = __mul__

    def max_divergence(self) -> float:
        g = self.grid
        return float(np.max(np.abs(g.kx * self.coeffs[0] + g.ky * self.coeffs[1])))

    def is_hermitian(self, tol: float = 0.0) -> bool:
        col = self.coeffs[:, :, 0]
        partner = col[:, (-self.grid.k1_index) % self.grid.n]
        return bool(np.max(np.abs(col - partner.conj()), initial=0.0) <= tol)


# ---------------------------------------------------------------------------
# operators on fields


def leray_project(f: SpectralField2D) -> SpectralField2D:
    return SpectralField2D(f.grid, project(f.grid, np.asarray(f.coeffs)), divergence_free=True)


def stokes_apply(u: SpectralField2D) -> SpectralField2D:
    """A u = -P Laplacian u, i.e. |k|^2 u_k on each mode."""
    g = u.grid
    return SpectralField2D(g, u.coeffs * g.k2 * g.mask, u.divergence_free)


def nonlinear_term(u: SpectralField2D, v: SpectralField2D) -> SpectralField2D:
    """B(u, v) = P(u . grad v), pseudo-spectral with 3/2 padding."""
    u._check(v)
    return SpectralField2D(u.grid, advect(u.grid, np.asarray(u.coeffs), np.asarray(v.coeffs)),
                           divergence_free=True)


def observe(u: SpectralField2D, h: float) -> SpectralField2D:
    """Modal interpolant I_h: keep |k| <= 1/h, zero the rest."""
    keep = low_mode_mask(u.grid, h)
    return SpectralField2D(u.grid, u.coeffs * keep, u.divergence_free)


def inner(u: SpectralField2D, v: SpectralField2D) -> float:
    u._check(v)
    return inner_arrays(u.grid, u.coeffs, v.coeffs)


class Norms(NamedTuple):
    l2: float
    h1: float
    da: float


def norms(u: SpectralField2D) -> Norms:
    """(|u|, ||u|| = |grad u|, |A u|)."""
    g = u.grid
    return Norms(*(np.sqrt(sq_norm_arrays(g, u.coeffs, p)) for p in (0, 1, 2)))


def shell_sums(grid: Grid2D, uh: np.ndarray) -> np.ndarray:
    """sum over r - 1/2 < |k| <= r + 1/2 of |u_k|^2, for r = 0..n/2.

    Wavenumber magnitudes are in units of the fundamental 2 pi / L, and the sum
    runs over the full lattice (both members of each conjugate pair).
    """
    r = np.ceil(grid.kmag / grid.k0 - 0.5).astype(np.int64)
    e = grid.weights * (np.abs(uh[0]) ** 2 + np.abs(uh[1]) ** 2)
    nshell = grid.n // 2 + 1
    keep = r < nshell
    return np.bincount(r[keep].ravel(), weights=e[keep].ravel(), minlength=nshell)


def energy_spectrum(snapshots: Sequence[SpectralField2D], times: Sequence[float]
                    ) -> tuple[np.ndarray, np.ndarray]:
    """Time-averaged shell spectrum S(r) by the trapezoid rule.

    Returns ``(r, S)`` with ``r = 0..n/2``.
    """
    if len(snapshots) < 2 or len(snapshots) != len(times):
        raise ValueError("need at least two snapshots with matching times")
    t = np.asarray(times, dtype=float)
    if np.any(np.diff(t) <= 0):
        raise ValueError("snapshot times must be strictly increasing")
    grid = snapshots[0].grid
    shells = np.array([shell_sums(grid, s.coeffs) for s in snapshots])
    avg = trapezoid(shells, t, axis=0) / (t[-1] - t[0])
    return np.arange(grid.n // 2 + 1), avg
