"""Periodic 2D Fourier grid with 3/2 zero-padded dealiasing."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property

import numpy as np
import scipy.fft


@dataclass(frozen=True)
class Grid2D:
    """Square periodic domain resolved by ``n`` Fourier modes per axis.

    Coefficients are stored in the real-FFT layout ``(n, n // 2 + 1)``: axis 0
    carries the full signed wavenumber ``k1`` and axis 1 the non-negative
    ``k2``. Modes with ``|k_i| = n/2`` (Nyquist) are never populated, so
    every retained wavenumber has its conjugate partner on the lattice.

    Products are formed on a padded physical grid of ``n * dealias_factor``
    points per axis. With the default factor 3/2 quadratic aliasing cannot
    reach any retained mode.
    """

    n: int
    dealias_factor: Fraction = Fraction(3, 2)
    domain_length: float = 2 * math.pi
    workers: int | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.n < 4 or self.n & (self.n - 1):
            raise ValueError(f"n must be a power of two >= 4, got {self.n}")
        factor = Fraction(self.dealias_factor)
        object.__setattr__(self, "dealias_factor", factor)
        if factor < Fraction(3, 2):
            raise ValueError("dealias_factor below 3/2 does not remove quadratic aliasing")
        if (self.n * factor).denominator != 1:
            raise ValueError("n * dealias_factor must be an integer")
        if not self.domain_length > 0:
            raise ValueError("domain_length must be positive")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n, self.n // 2 + 1)

    @property
    def padded_n(self) -> int:
        return int(self.n * self.dealias_factor)

    @property
    def kmax(self) -> int:
        """Largest retained integer wavenumber component."""
        return self.n // 2 - 1

    @property
    def k0(self) -> float:
        return 2 * math.pi / self.domain_length

    @cached_property
    def k1_index(self) -> np.ndarray:
        return np.fft.fftfreq(self.n, 1.0 / self.n).astype(np.int64)

    @cached_property
    def k2_index(self) -> np.ndarray:
        return np.arange(self.n // 2 + 1, dtype=np.int64)

    @cached_property
    def kx(self) -> np.ndarray:
        k = self.k0 * self.k1_index[:, None] * np.ones(self.shape)
        k.flags.writeable = False
        return k

    @cached_property
    def ky(self) -> np.ndarray:
        k = self.k0 * self.k2_index[None, :] * np.ones(self.shape)
        k.flags.writeable = False
        return k

    @cached_property
    def k2(self) -> np.ndarray:
        """|k|^2 per stored mode (the Stokes eigenvalue)."""
        k = self.kx**2 + self.ky**2
        k.flags.writeable = False
        return k

    @cached_property
    def kmag(self) -> np.ndarray:
        k = np.sqrt(self.k2)
        k.flags.writeable = False
        return k

    @cached_property
    def inv_k2(self) -> np.ndarray:
        inv = np.zeros(self.shape)
        nz = self.k2 > 0
        inv[nz] = 1.0 / self.k2[nz]
        inv.flags.writeable = False
        return inv

    @cached_property
    def mask(self) -> np.ndarray:
        """Retained modes: no Nyquist row/column and no mean mode."""
        m = (np.abs(self.k1_index)[:, None] < self.n // 2) & (self.k2_index[None, :] < self.n // 2)
        m[0, 0] = False
        m.flags.writeable = False
        return m

    @cached_property
    def weights(self) -> np.ndarray:
        """Multiplicity of each stored mode in the full Hermitian lattice."""
        w = np.where(self.k2_index[None, :] == 0, 1.0, 2.0) * self.mask
        w.flags.writeable = False
        return w

    @property
    def measure(self) -> float:
        """Area of the domain, the Parseval factor for L2 quantities."""
        return self.domain_length**2

    @property
    def lambda1(self) -> float:
        """Smallest nonzero Stokes eigenvalue on this lattice."""
        return float(self.k2[self.mask].min())

    @cached_property
    def _pad_rows(self) -> tuple[np.ndarray, np.ndarray]:
        m = self.padded_n
        i = self.k1_index
        keep = np.abs(i) < self.n // 2
        return np.where(i >= 0, i, m + i)[keep], np.nonzero(keep)[0]

    def pad(self, uh: np.ndarray) -> np.ndarray:
        """Embed coefficients (..., n, n//2+1) into the padded spectral layout."""
        m = self.padded_n
        dst_rows, src_rows = self._pad_rows
        out = np.zeros(uh.shape[:-2] + (m, m // 2 + 1), dtype=complex)
        out[..., dst_rows, : self.n // 2] = uh[..., src_rows, : self.n // 2]
        return out

    def truncate(self, ph: np.ndarray) -> np.ndarray:
        """Inverse of :meth:`pad`; drops all modes outside the retained band."""
        dst_rows, src_rows = self._pad_rows
        out = np.zeros(ph.shape[:-2] + self.shape, dtype=complex)
        out[..., src_rows, : self.n // 2] = ph[..., dst_rows, : self.n // 2]
        out *= self.mask
        return out

    def to_physical(self, uh: np.ndarray, padded: bool = True) -> np.ndarray:
        """Synthesize sum_k uh_k e^{ik.x} on the (padded) physical grid."""
        if padded:
            m = self.padded_n
            return scipy.fft.irfft2(self.pad(uh), s=(m, m), norm="forward", workers=self.workers)
        return scipy.fft.irfft2(uh, s=(self.n, self.n), norm="forward", workers=self.workers)

    def to_spectral(self, u: np.ndarray, padded: bool = True) -> np.ndarray:
        """Fourier coefficients of physical samples, truncated to retained modes."""
        uh = scipy.fft.rfft2(u, norm="forward", workers=self.workers)
        if padded:
            return self.truncate(uh)
        return uh * self.mask

    def points(self, padded: bool = False) -> tuple[np.ndarray, np.ndarray]:
        m = self.padded_n if padded else self.n
        x = np.arange(m) * self.domain_length / m
        return np.meshgrid(x, x, indexing="ij")
