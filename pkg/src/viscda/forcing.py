"""Random band-limited body force and Grashof numbers."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grid import Grid2D
from .spectral import SpectralField2D, hermitianize, project, sq_norm_arrays

# Stored in forcing file headers so a replay knows which stream produced it.
PRNG_ALGORITHM = "numpy-philox4x64-standard_normal-v1"


@dataclass(frozen=True)
class ForcingSpec:
    k_low: float = 9.0
    k_high: float = 11.0
    seed: int = 0
    target_l2: float = 1.0

    def __post_init__(self):
        if not 0 < self.k_low < self.k_high:
            raise ValueError(f"need 0 < k_low < k_high, got ({self.k_low}, {self.k_high})")
        if not self.target_l2 > 0:
            raise ValueError("target_l2 must be positive")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")


def band_mask(spec: ForcingSpec, grid: Grid2D) -> np.ndarray:
    k = grid.kmag / grid.k0
    return (k > spec.k_low) & (k < spec.k_high) & grid.mask


def generate_forcing(spec: ForcingSpec, grid: Grid2D, max_redraws: int = 16) -> SpectralField2D:
    """Gaussian coefficients on the open shell k_low < |k| < k_high.

    The draw covers every stored mode in a fixed order, so the realization
    depends only on ``seed`` and ``n``. The sample is symmetrized, projected to
    be divergence-free and rescaled so that ``|f| = target_l2``.
    """
    if spec.k_high > grid.kmax + 1:
        raise ValueError(f"forcing band reaches |k| = {spec.k_high}, beyond kmax = {grid.kmax}")
    band = band_mask(spec, grid)
    if not band.any():
        raise ValueError(f"no lattice points with {spec.k_low} < |k| < {spec.k_high}")
    for attempt in range(max_redraws):
        rng = np.random.Generator(np.random.Philox((spec.seed + attempt) % 2**64))
        draw = rng.standard_normal((2, 2) + grid.shape)
        fh = (draw[0] + 1j * draw[1]) * band
        fh = project(grid, hermitianize(grid, fh))
        norm = math.sqrt(sq_norm_arrays(grid, fh))
        if norm > 0:
            return SpectralField2D(grid, fh * (spec.target_l2 / norm), divergence_free=True)
    raise RuntimeError("forcing draw vanished identically; check the band")


def grashof(f: SpectralField2D, re: float) -> tuple[float, float]:
    """(Re^2 |f| / (4 pi^2), Re^2 |f|) for a time-independent force.

    The first value follows the unit-torus normalization; the second drops the
    1/(4 pi^2) and is the one matching ``G = 10^6`` at ``Re = 1000, |f| = 1``.
    """
    fnorm = math.sqrt(sq_norm_arrays(f.grid, f.coeffs))
    bare = re**2 * fnorm
    return bare / (4 * math.pi**2), bare
