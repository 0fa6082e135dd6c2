"""IMEX time integration of the projected Navier-Stokes equations.

The canonical scheme is first-order IMEX Euler, diffusion implicit and
advection plus forcing explicit::

    u^{n+1} = (u^n + dt (f - B(u^n, u^n))) / (1 + dt nu |k|^2)

A CN/AB2 variant is available behind the same interface (``stepper="cnab2"``).
"""

from __future__ import annotations

import logging
import math
import shutil
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .forcing import ForcingSpec, generate_forcing
from .grid import Grid2D
from .io import (ObservationStream, ObservationWriter, SnapshotTrajectory, read_forcing,
                 read_observations, snapshot_name, write_csv, write_forcing,
                 write_snapshot)
from .spectral import SpectralField2D, self_advect, sq_norm_arrays

log = logging.getLogger(__name__)

BLOWUP_THRESHOLD = 1e10
CFL_LIMIT = 0.5
STEPPERS = ("euler", "cnab2")


class BlowUpError(FloatingPointError):
    """Non-finite or exploding coefficients during time integration."""

    def __init__(self, step: int, t: float):
        super().__init__(f"solution blew up at step {step} (t = {t:.6g})")
        self.step = step
        self.t = t


def steps_in(interval: float, dt: float, name: str = "interval") -> int:
    """Number of dt steps in ``interval``; it must be an integer multiple."""
    k = round(interval / dt)
    if k < 0 or not math.isclose(k * dt, interval, rel_tol=1e-9, abs_tol=1e-12):
        raise ValueError(f"{name} = {interval!r} is not an integer multiple of dt = {dt!r}")
    return k


@dataclass(frozen=True)
class SolverConfig:
    nu: float
    dt: float
    t_end: float
    grid: Grid2D
    forcing: ForcingSpec | Path = field(default_factory=ForcingSpec)
    snapshot_interval: float = 1.0
    observation_cutoff: float = 1 / 16
    observation_interval: float | None = None
    observation_start: float = 0.0
    stepper: str = "euler"

    def __post_init__(self):
        if not self.nu > 0:
            raise ValueError("nu must be positive")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.t_end < 0:
            raise ValueError("t_end must be non-negative")
        if self.stepper not in STEPPERS:
            raise ValueError(f"unknown stepper {self.stepper!r}; choose from {STEPPERS}")
        if self.observation_interval is None:
            object.__setattr__(self, "observation_interval", self.dt)
        steps_in(self.snapshot_interval, self.dt, "snapshot_interval")
        steps_in(self.observation_interval, self.dt, "observation_interval")
        steps_in(self.observation_start, self.dt, "observation_start")
        if 1 / self.observation_cutoff > self.grid.n // 2:
            raise ValueError("observation cutoff 1/h exceeds the resolved band")

    @property
    def nsteps(self) -> int:
        return steps_in(self.t_end, self.dt, "t_end")


@dataclass(frozen=True)
class FlowState:
    t: float
    u: SpectralField2D


def check_finite(uh: np.ndarray, step: int, t: float) -> None:
    m = np.max(np.abs(uh))
    if not m < BLOWUP_THRESHOLD:
        raise BlowUpError(step, t)


def euler_update(grid: Grid2D, uh: np.ndarray, rhs: np.ndarray, nu: float, dt: float) -> np.ndarray:
    """(u + dt rhs) / (1 + dt nu |k|^2) on retained modes."""
    return (uh + dt * rhs) / (1.0 + dt * nu * grid.k2) * grid.mask


class Integrator:
    """Advances coefficient arrays of the forced (optionally nudged) system.

    Keeps the previous explicit tendency for the CN/AB2 variant; the first
    CN/AB2 step falls back to IMEX Euler.
    """

    def __init__(self, grid: Grid2D, fh: np.ndarray, nu: float, dt: float, stepper: str = "euler"):
        if stepper not in STEPPERS:
            raise ValueError(f"unknown stepper {stepper!r}")
        self.grid = grid
        self.fh = np.asarray(fh)
        self.nu = nu
        self.dt = dt
        self.stepper = stepper
        self._prev = None

    def tendency(self, uh: np.ndarray) -> np.ndarray:
        return self.fh - self_advect(self.grid, uh)

    def step(self, uh: np.ndarray, extra: np.ndarray | None = None) -> np.ndarray:
        """One step; ``extra`` is an additional explicit term (e.g. nudging)."""
        rhs = self.tendency(uh)
        if extra is not None:
            rhs = rhs + extra
        g, dt, nu = self.grid, self.dt, self.nu
        if self.stepper == "euler" or self._prev is None:
            new = euler_update(g, uh, rhs, nu, dt)
        else:
            half = 0.5 * dt * nu * g.k2
            new = ((1 - half) * uh + dt * (1.5 * rhs - 0.5 * self._prev)) / (1 + half) * g.mask
        if self.stepper == "cnab2":
            self._prev = rhs
        return new

    def reset(self, nu: float | None = None) -> None:
        """Drop multistep history, optionally switching viscosity."""
        self._prev = None
        if nu is not None:
            self.nu = nu


def imex_step(state: FlowState, cfg: SolverConfig, f: SpectralField2D) -> FlowState:
    """One IMEX Euler step of the reference system."""
    g = cfg.grid
    new = euler_update(g, np.asarray(state.u.coeffs), np.asarray(f.coeffs) - self_advect(g, state.u.coeffs),
                       cfg.nu, cfg.dt)
    t = state.t + cfg.dt
    check_finite(new, 1, t)
    return FlowState(t, SpectralField2D(g, new, divergence_free=True))


def cfl_number(grid: Grid2D, uh: np.ndarray, dt: float) -> float:
    """max|u| dt n / L on the physical grid."""
    u = grid.to_physical(uh, padded=False)
    umax = float(np.sqrt(np.max(u[0] ** 2 + u[1] ** 2)))
    return umax * dt * grid.n / grid.domain_length


def energy_enstrophy(grid: Grid2D, uh: np.ndarray) -> tuple[float, float, float, float]:
    """(energy, enstrophy, |u|, ||u||) with energy = |u|^2 / 2, enstrophy = ||u||^2 / 2."""
    l2sq = sq_norm_arrays(grid, uh)
    h1sq = sq_norm_arrays(grid, uh, 1)
    return 0.5 * l2sq, 0.5 * h1sq, math.sqrt(l2sq), math.sqrt(h1sq)


def integrate(grid: Grid2D, fh: np.ndarray, u0: np.ndarray, nu: float, dt: float, nsteps: int,
              stepper: str = "euler", callback=None) -> np.ndarray:
    """March ``nsteps`` from ``u0``; ``callback(k, uh)`` sees every state incl. k = 0."""
    integ = Integrator(grid, fh, nu, dt, stepper)
    uh = np.array(u0, dtype=complex)
    if callback is not None:
        callback(0, uh)
    for k in range(1, nsteps + 1):
        uh = integ.step(uh)
        check_finite(uh, k, k * dt)
        if callback is not None:
            callback(k, uh)
    return uh


def load_or_generate_forcing(cfg: SolverConfig) -> tuple[SpectralField2D, ForcingSpec | None]:
    if isinstance(cfg.forcing, ForcingSpec):
        return generate_forcing(cfg.forcing, cfg.grid), cfg.forcing
    f = read_forcing(cfg.forcing)
    if f.grid != cfg.grid:
        raise ValueError(f"forcing file {cfg.forcing} is on a different grid")
    return f, None


TIMESERIES_HEADER = ("t", "energy", "enstrophy", "l2norm", "h1norm")


def run_reference(cfg: SolverConfig, out_dir: Path, run_id: str = "reference"
                  ) -> tuple[SnapshotTrajectory, ObservationStream]:
    """Integrate from u(0) = 0 to ``t_end``, persisting the run under ``out_dir``.

    Writes ``forcing.nnse``, ``snapshots/snap_*.nnse`` every
    ``snapshot_interval``, ``observations.nnob`` holding I_h(u) every
    ``observation_interval`` from ``observation_start`` on, and
    ``timeseries.csv`` sampled with the snapshots.
    """
    out_dir = Path(out_dir)
    snap_dir = out_dir / "snapshots"
    snap_dir.mkdir(parents=True, exist_ok=True)
    g, dt = cfg.grid, cfg.dt
    f, spec = load_or_generate_forcing(cfg)
    if spec is not None:
        write_forcing(out_dir / "forcing.nnse", f, spec)
    elif Path(cfg.forcing).resolve() != (out_dir / "forcing.nnse").resolve():
        shutil.copyfile(cfg.forcing, out_dir / "forcing.nnse")
    snap_every = max(steps_in(cfg.snapshot_interval, dt), 1)
    obs_every = max(steps_in(cfg.observation_interval, dt), 1)
    obs_start = steps_in(cfg.observation_start, dt)
    rows = []
    warned = False

    with ObservationWriter(out_dir / "observations.nnob", g, cfg.observation_cutoff, run_id) as obs:
        def record(k: int, uh: np.ndarray) -> None:
            nonlocal warned
            t = k * dt
            if k % snap_every == 0 or k == cfg.nsteps:
                write_snapshot(snap_dir / snapshot_name(k), SpectralField2D(g, uh, divergence_free=True), t)
                rows.append((t, *energy_enstrophy(g, uh)))
                if not warned and cfl_number(g, uh, dt) > CFL_LIMIT:
                    log.warning("advective CFL %.3f exceeds %.2f at t = %g", cfl_number(g, uh, dt), CFL_LIMIT, t)
                    warned = True
            if k >= obs_start and (k - obs_start) % obs_every == 0:
                obs.append(t, uh)

        integrate(g, np.asarray(f.coeffs), np.zeros((2,) + g.shape, dtype=complex), cfg.nu, dt,
                  cfg.nsteps, cfg.stepper, record)
    write_csv(out_dir / "timeseries.csv", TIMESERIES_HEADER, rows)
    return SnapshotTrajectory(snap_dir), read_observations(out_dir / "observations.nnob")
