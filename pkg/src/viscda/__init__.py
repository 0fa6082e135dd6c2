"""Nudging-based data assimilation and viscosity recovery for 2D periodic Navier-Stokes."""

__version__ = "0.1.0"

from .grid import Grid2D
from .spectral import (GridMismatchError, Norms, SpectralField2D, energy_spectrum, inner, leray_project,
                       nonlinear_term, norms, observe, stokes_apply)
from .forcing import ForcingSpec, generate_forcing, grashof
from .solver import BlowUpError, FlowState, SolverConfig, imex_step, run_reference
from .assimilation import AssimilationConfig, ErrorSeries, admissibility, nudged_step, run_assimilation
from .recovery import (DegenerateDenominator, RecoveryConfig, RecoveryState, WindowAccumulator, algorithm1,
                       algorithm2, estimate_instant, estimate_windowed)
from .sensitivity import (SensitivityConfig, convergence_study, difference_quotient, solve_sensitivity,
                          solve_sensitivity_assimilated)

__all__ = [
    "Grid2D", "GridMismatchError", "Norms", "SpectralField2D", "energy_spectrum", "inner", "leray_project",
    "nonlinear_term", "norms", "observe", "stokes_apply", "ForcingSpec", "generate_forcing", "grashof",
    "BlowUpError", "FlowState", "SolverConfig", "imex_step", "run_reference", "AssimilationConfig",
    "ErrorSeries", "admissibility", "nudged_step", "run_assimilation", "DegenerateDenominator",
    "RecoveryConfig", "RecoveryState", "WindowAccumulator", "algorithm1", "algorithm2", "estimate_instant",
    "estimate_windowed", "SensitivityConfig", "convergence_study", "difference_quotient", "solve_sensitivity",
    "solve_sensitivity_assimilated",
]
