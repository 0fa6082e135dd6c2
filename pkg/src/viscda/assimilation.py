"""AOT nudging toward low-mode observations with an approximate viscosity.

The nudged system is stepped like the reference one, with the feedback
``mu (I_h u - I_h v)`` added to the explicit tendency::

    v^{n+1} = (v^n + dt (f - B(v^n, v^n) + mu (I_h u^n - I_h v^n))) / (1 + dt nu2 |k|^2)

Diagnostics use ``w = u - v``. With that sign the observable pairing
``<I_h(A v), I_h(w)>`` is positive when ``nu2 > nu1``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .io import ObservationStream, write_csv
from .solver import FlowState, Integrator, check_finite, steps_in
from .spectral import SpectralField2D, inner_arrays, low_mode_mask, sq_norm_arrays

log = logging.getLogger(__name__)

MU_DT_LIMIT = 0.5


class CutoffMismatchError(ValueError):
    pass


class ObservationGapError(ValueError):
    pass


class Truth(Protocol):
    def at(self, t: float, tol: float = ...) -> np.ndarray | None: ...


@dataclass(frozen=True)
class AssimilationConfig:
    nu2: float
    mu: float = 20.0
    h: float = 1 / 16
    dt: float = 0.005
    t_start: float = 20.0
    t_end: float = 30.0
    output_interval: float = 0.1
    max_obs_gap: float = 1.0
    stepper: str = "euler"
    warnings: tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self):
        if not self.nu2 > 0:
            raise ValueError("nu2 must be positive")
        if self.mu < 0:
            raise ValueError("mu must be non-negative")
        if not self.h > 0:
            raise ValueError("h must be positive")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.t_end < self.t_start:
            raise ValueError("t_end precedes t_start")
        steps_in(self.t_end - self.t_start, self.dt, "t_end - t_start")
        steps_in(self.output_interval, self.dt, "output_interval")
        notes = []
        if self.mu * self.dt > MU_DT_LIMIT:
            notes.append(f"mu*dt = {self.mu * self.dt:g} exceeds {MU_DT_LIMIT}; explicit nudging may be unstable")
        ok, ratio = admissibility(self.mu, self.h, self.nu2)
        if not ok:
            notes.append(f"mu h^2 / nu2 = {ratio:.4g} > 1: sufficient synchronization condition not met")
        for n in notes:
            log.warning(n)
        object.__setattr__(self, "warnings", tuple(notes))

    @property
    def nsteps(self) -> int:
        return steps_in(self.t_end - self.t_start, self.dt, "t_end - t_start")


def admissibility(mu: float, h: float, nu2: float, c0: float = 1.0) -> tuple[bool, float]:
    """Check ``mu c0 h^2 <= nu2``; returns the verdict and ``mu c0 h^2 / nu2``."""
    ratio = mu * c0 * h * h / nu2
    return ratio <= 1.0, ratio


def floor_scaling(re1: float, re2: float) -> float:
    """Unit-constant error-floor factor |Re2 - Re1| / (Re1 sqrt(Re2))."""
    if not (re1 > 0 and re2 > 0):
        raise ValueError("Reynolds numbers must be positive")
    return abs(re2 - re1) / (re1 * math.sqrt(re2))


def nudged_step(state: FlowState, obs: SpectralField2D, cfg: AssimilationConfig, f: SpectralField2D,
                obs_h: float | None = None) -> FlowState:
    """One IMEX Euler step of the nudged system.

    ``obs`` is the low-mode observation I_h(u) at ``state.t``; ``obs_h`` is the
    cutoff it was taken with (defaults to ``cfg.h``).
    """
    if obs_h is not None and not math.isclose(obs_h, cfg.h, rel_tol=1e-12):
        raise CutoffMismatchError(f"observation cutoff h = {obs_h} but config has h = {cfg.h}")
    g = state.u.grid
    keep = low_mode_mask(g, cfg.h)
    vh = np.asarray(state.u.coeffs)
    integ = Integrator(g, f.coeffs, cfg.nu2, cfg.dt)
    new = integ.step(vh, cfg.mu * (np.asarray(obs.coeffs) - vh) * keep)
    t = state.t + cfg.dt
    check_finite(new, 1, t)
    return FlowState(t, SpectralField2D(g, new, divergence_free=True))


class NudgedRun:
    """Stateful nudged integration driven by an observation stream.

    The step counter is exact: time is ``t_start + k dt``. Observations are
    read by zero-order hold.
    """

    def __init__(self, obs: ObservationStream, fh: np.ndarray, nu2: float, mu: float, dt: float,
                 t_start: float, h: float | None = None, v0: np.ndarray | None = None,
                 stepper: str = "euler", max_obs_gap: float = 1.0):
        if h is not None and not math.isclose(obs.h, h, rel_tol=1e-12):
            raise CutoffMismatchError(f"observation cutoff h = {obs.h} but config has h = {h}")
        self.obs = obs
        self.grid = obs.grid
        self.keep = low_mode_mask(self.grid, obs.h)
        self.mu = mu
        self.dt = dt
        self.t_start = t_start
        self.k = 0
        self.max_obs_gap = max_obs_gap
        self.integ = Integrator(self.grid, fh, nu2, dt, stepper)
        self.vh = np.zeros((2,) + self.grid.shape, dtype=complex) if v0 is None else np.array(v0, dtype=complex)
        self._cache = (-1, None)

    @property
    def t(self) -> float:
        return self.t_start + self.k * self.dt

    @property
    def nu2(self) -> float:
        return self.integ.nu

    def set_viscosity(self, nu2: float) -> None:
        self.integ.reset(nu2)

    def observation(self, t: float | None = None) -> np.ndarray:
        t = self.t if t is None else t
        i = self.obs.index_at(t)
        if t - self.obs.times[i] > self.max_obs_gap + 1e-9:
            raise ObservationGapError(f"latest observation before t = {t:g} is at {self.obs.times[i]:g}")
        if self._cache[0] != i:
            self._cache = (i, self.obs.expand(i))
        return self._cache[1]

    def step(self) -> np.ndarray:
        ih_u = self.observation()
        self.vh = self.integ.step(self.vh, self.mu * (ih_u - self.vh * self.keep))
        self.k += 1
        check_finite(self.vh, self.k, self.t)
        return self.vh

    def ih_error(self) -> np.ndarray:
        """I_h(w) = I_h(u) - I_h(v) at the current time."""
        return self.observation() - self.vh * self.keep

    def observables(self) -> tuple[float, float]:
        """(|I_h w|^2, <I_h(A v), I_h w>) at the current time."""
        iw = self.ih_error()
        g = self.grid
        return sq_norm_arrays(g, iw), inner_arrays(g, g.k2 * self.vh * self.keep, iw)


ERROR_COLUMNS = ("t", "l2_err", "h1_err", "ih_err", "ih_err_sq", "denom")
OBS_COLUMNS = ("t", "ih_err", "ih_err_sq", "denom")


@dataclass
class ErrorSeries:
    """Per-output-time diagnostics of an assimilation run.

    Truth-dependent columns (``l2_err``, ``h1_err``, and ``l2_rel`` for
    convenience) are present only when a truth trajectory was supplied.
    """

    nu2: float
    columns: dict[str, np.ndarray]
    has_truth: bool

    @property
    def header(self) -> tuple[str, ...]:
        return ERROR_COLUMNS if self.has_truth else OBS_COLUMNS

    def rows(self):
        cols = [self.columns[c] for c in self.header]
        return zip(*cols)

    def to_csv(self, path) -> None:
        write_csv(path, self.header, self.rows())

    def __getitem__(self, key: str) -> np.ndarray:
        return self.columns[key]

    def value_at(self, key: str, t: float) -> float:
        i = int(np.argmin(np.abs(self.columns["t"] - t)))
        if abs(self.columns["t"][i] - t) > 1e-9:
            raise KeyError(f"no output row at t = {t}")
        return float(self.columns[key][i])

    def floor(self, key: str | None = None) -> float:
        key = key or ("l2_err" if self.has_truth else "ih_err")
        return float(np.nanmin(self.columns[key]))


def detect_floor(t: np.ndarray, err: np.ndarray, window: float = 1.0, tol: float = 0.01
                 ) -> tuple[float, float | None]:
    """Floor value and the first time the ``window``-long moving average of
    ``err`` changes by less than ``tol`` (relative) over one window."""
    t = np.asarray(t)
    err = np.asarray(err)
    floor = float(np.nanmin(err))
    dt = t[1] - t[0] if len(t) > 1 else 0.0
    w = max(int(round(window / dt)), 1) if dt > 0 else 1
    if len(err) < 2 * w:
        return floor, None
    avg = np.convolve(err, np.ones(w) / w, mode="valid")
    for i in range(w, len(avg)):
        prev, cur = avg[i - w], avg[i]
        if prev > 0 and abs(cur - prev) / prev < tol:
            return floor, float(t[i + w - 1])
    return floor, None


def run_assimilation(cfg: AssimilationConfig, obs: ObservationStream, forcing: SpectralField2D,
                     truth: Truth | None = None) -> ErrorSeries:
    """Integrate v from v(t_start) = 0 and record error diagnostics.

    Observation-side columns need only ``obs``; when ``truth`` is given the
    full-field errors |w| and ||w|| are added at output times where the
    truth trajectory has a state.
    """
    if not math.isclose(obs.h, cfg.h, rel_tol=1e-12):
        raise CutoffMismatchError(f"observation cutoff h = {obs.h} but config has h = {cfg.h}")
    if obs.t_first > cfg.t_start + 1e-9:
        raise ObservationGapError(f"observations start at {obs.t_first:g}, after t_start = {cfg.t_start:g}")
    if obs.t_last < cfg.t_end - 1e-9:
        raise ObservationGapError(f"observations end at {obs.t_last:g}, before t_end = {cfg.t_end:g}")
    run = NudgedRun(obs, forcing.coeffs, cfg.nu2, cfg.mu, cfg.dt, cfg.t_start, cfg.h,
                    stepper=cfg.stepper, max_obs_gap=cfg.max_obs_gap)
    g = run.grid
    every = max(steps_in(cfg.output_interval, cfg.dt), 1)
    cols: dict[str, list] = {c: [] for c in ERROR_COLUMNS + ("l2_rel",)}

    def record():
        ih_sq, den = run.observables()
        cols["t"].append(run.t)
        cols["ih_err"].append(math.sqrt(ih_sq))
        cols["ih_err_sq"].append(ih_sq)
        cols["denom"].append(den)
        if truth is not None:
            uh = truth.at(run.t)
            if uh is None:
                cols["l2_err"].append(math.nan)
                cols["h1_err"].append(math.nan)
                cols["l2_rel"].append(math.nan)
            else:
                w = uh - run.vh
                l2 = math.sqrt(sq_norm_arrays(g, w))
                cols["l2_err"].append(l2)
                cols["h1_err"].append(math.sqrt(sq_norm_arrays(g, w, 1)))
                un = math.sqrt(sq_norm_arrays(g, uh))
                cols["l2_rel"].append(l2 / un if un > 0 else math.nan)

    record()
    for k in range(1, cfg.nsteps + 1):
        run.step()
        if k % every == 0 or k == cfg.nsteps:
            record()
    has_truth = truth is not None
    keys = ERROR_COLUMNS + ("l2_rel",) if has_truth else OBS_COLUMNS
    return ErrorSeries(cfg.nu2, {k: np.asarray(cols[k], dtype=float) for k in keys}, has_truth)
