"""Viscosity sensitivity equations and difference-quotient convergence.

The sensitivity ``ut = du/dnu`` of the reference flow solves

    ut_t + B(ut, u) + B(u, ut) + nu A ut + A u = 0,      ut(0) = 0,

and that of the nudged flow gains the feedback ``mu I_h(ut - vt)``. Both are
stepped with the reference scheme: ``A ut`` implicit, the advection terms
and the source ``A u`` explicit at the old time level.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.integrate import trapezoid

from .io import write_csv
from .solver import Integrator, check_finite, euler_update, steps_in
from .spectral import SpectralField2D, cross_advect, low_mode_mask, sq_norm_arrays

log = logging.getLogger(__name__)


SOURCE_TIMES = ("explicit", "implicit")


class TrajectoryGapError(ValueError):
    pass


def _arrays(states) -> list[np.ndarray]:
    return [np.asarray(s.coeffs) if isinstance(s, SpectralField2D) else np.asarray(s) for s in states]


def _check_times(times, n: int, dt: float) -> None:
    if times is None:
        return
    t = np.asarray(times, dtype=float)
    if len(t) != n:
        raise TrajectoryGapError("times and states differ in length")
    if len(t) > 1 and not np.allclose(np.diff(t), dt, rtol=1e-9, atol=1e-12):
        raise TrajectoryGapError(f"trajectory spacing must equal dt = {dt}")


def sensitivity_step(grid, ut: np.ndarray, u: np.ndarray, nu: float, dt: float,
                     nonlinear: bool = True, source: np.ndarray | None = None) -> np.ndarray:
    """One step; ``source`` replaces u in the forcing term A u when given."""
    rhs = -grid.k2 * (u if source is None else source)
    if nonlinear:
        rhs = rhs - cross_advect(grid, ut, u)
    return euler_update(grid, ut, rhs, nu, dt)


def nudged_sensitivity_step(grid, vt: np.ndarray, v: np.ndarray, ut: np.ndarray, nu: float, mu: float,
                            keep: np.ndarray, dt: float, nonlinear: bool = True,
                            source: np.ndarray | None = None) -> np.ndarray:
    rhs = -grid.k2 * (v if source is None else source) + mu * (ut - vt) * keep
    if nonlinear:
        rhs = rhs - cross_advect(grid, vt, v)
    return euler_update(grid, vt, rhs, nu, dt)


def solve_sensitivity(traj: Sequence, nu1: float, dt: float, times: Sequence[float] | None = None,
                      nonlinear: bool = True, source: Sequence | None = None,
                      source_time: str = "explicit") -> list[SpectralField2D]:
    """Sensitivity along a stored trajectory sampled every ``dt``.

    ``traj`` holds the states u^0, u^1, ... as fields; the result has the
    same length with ut^0 = 0. ``source`` optionally replaces the trajectory
    in the forcing term A u while u still advects, which makes the map from
    source to ut linear. ``source_time="implicit"`` takes the source from
    step n+1 instead of n (see :class:`SensitivityConfig`).
    """
    if source_time not in SOURCE_TIMES:
        raise ValueError(f"source_time must be one of {SOURCE_TIMES}")
    shift = 1 if source_time == "implicit" else 0
    states = _arrays(traj)
    _check_times(times, len(states), dt)
    srcs = states if source is None else _arrays(source)
    if len(srcs) != len(states):
        raise TrajectoryGapError("source and trajectory differ in length")
    grid = traj[0].grid if isinstance(traj[0], SpectralField2D) else None
    if grid is None:
        raise TypeError("trajectory must hold SpectralField2D states")
    ut = np.zeros_like(states[0])
    out = [SpectralField2D(grid, ut, divergence_free=True)]
    for k in range(len(states) - 1):
        ut = sensitivity_step(grid, ut, states[k], nu1, dt, nonlinear, srcs[k + shift])
        check_finite(ut, k + 1, (k + 1) * dt)
        out.append(SpectralField2D(grid, ut, divergence_free=True))
    return out


def solve_sensitivity_assimilated(traj_v: Sequence, tilde_u: Sequence, nu1: float, mu: float, h: float,
                                  dt: float, times: Sequence[float] | None = None,
                                  nonlinear: bool = True) -> list[SpectralField2D]:
    """Sensitivity of the nudged flow, fed back toward I_h of ``tilde_u``."""
    vs = _arrays(traj_v)
    uts = _arrays(tilde_u)
    if len(vs) != len(uts):
        raise TrajectoryGapError("v and ut trajectories differ in length")
    _check_times(times, len(vs), dt)
    grid = traj_v[0].grid
    keep = low_mode_mask(grid, h)
    vt = np.zeros_like(vs[0])
    out = [SpectralField2D(grid, vt, divergence_free=True)]
    for k in range(len(vs) - 1):
        vt = nudged_sensitivity_step(grid, vt, vs[k], uts[k], nu1, mu, keep, dt, nonlinear)
        check_finite(vt, k + 1, (k + 1) * dt)
        out.append(SpectralField2D(grid, vt, divergence_free=True))
    return out


def difference_quotient(run1: Sequence, run2: Sequence, nu1: float, nu2: float) -> list[SpectralField2D]:
    """(u1 - u2) / (nu1 - nu2) state by state."""
    if nu1 == nu2:
        raise ValueError("difference quotient needs distinct viscosities")
    if len(run1) != len(run2):
        raise TrajectoryGapError("runs differ in length")
    scale = 1.0 / (nu1 - nu2)
    return [(a - b) * scale for a, b in zip(run1, run2)]


@dataclass(frozen=True)
class SensitivityConfig:
    """Difference-quotient study around ``nu1`` on ``[t_start, t_end]``.

    ``mu`` set to ``None`` skips the nudged variant. ``source_time`` picks the
    time level of the source term A u: ``"explicit"`` uses u^n, ``"implicit"``
    uses u^{n+1}. The implicit level makes ut the exact derivative of the
    discrete Euler map with respect to nu, so the quotient error carries no
    O(dt) floor; the explicit level only matches it up to O(dt).
    """

    nu1: float
    nu2_values: tuple[float, ...]
    dt: float = 0.005
    t_start: float = 20.0
    t_end: float = 22.0
    mu: float | None = 20.0
    h: float = 1 / 16
    nonlinear: bool = True
    source_time: str = "explicit"

    def __post_init__(self):
        object.__setattr__(self, "nu2_values", tuple(float(x) for x in self.nu2_values))
        if len(self.nu2_values) < 3:
            raise ValueError("need at least 3 quotient viscosities")
        if not self.nu1 > 0 or any(not x > 0 for x in self.nu2_values):
            raise ValueError("viscosities must be positive")
        gaps = [abs(x - self.nu1) for x in self.nu2_values]
        if any(g == 0 for g in gaps):
            raise ValueError("nu2 = nu1 has no difference quotient")
        if any(b >= a for a, b in zip(gaps, gaps[1:])):
            raise ValueError("nu2 sequence must approach nu1 monotonically")
        steps_in(self.t_end - self.t_start, self.dt, "t_end - t_start")
        if self.source_time not in SOURCE_TIMES:
            raise ValueError(f"source_time must be one of {SOURCE_TIMES}")

    @property
    def nsteps(self) -> int:
        return steps_in(self.t_end - self.t_start, self.dt, "t_end - t_start")


REPORT_HEADER = ("nu2", "delta_nu", "e_l2H", "e_l2V", "order_estimate")


@dataclass
class StudyReport:
    """Errors ``||D_n - ut||`` in L2(0,T;H) and L2(0,T;V) per quotient viscosity.

    ``nse`` rows compare the reference-flow quotients with ut; ``nudged`` rows
    compare the nudged quotients with vt (empty when nudging is off).
    """

    nu1: float
    nu2: np.ndarray
    nse: dict[str, np.ndarray]
    nudged: dict[str, np.ndarray] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    @property
    def delta_nu(self) -> np.ndarray:
        return np.abs(self.nu2 - self.nu1)

    def order(self, system: str = "nse", norm: str = "e_l2H") -> float:
        """Least-squares slope of log e against log |nu1 - nu2|."""
        e = getattr(self, system)[norm]
        return float(np.polyfit(np.log(self.delta_nu), np.log(e), 1)[0])

    def pairwise_order(self, system: str = "nse", norm: str = "e_l2H") -> np.ndarray:
        e = getattr(self, system)[norm]
        d = self.delta_nu
        out = np.full(len(e), np.nan)
        out[1:] = np.log(e[1:] / e[:-1]) / np.log(d[1:] / d[:-1])
        return out

    def rows(self, system: str = "nse", norm: str = "e_l2H"):
        tab = getattr(self, system)
        p = self.pairwise_order(system, norm)
        return zip(self.nu2, self.delta_nu, tab["e_l2H"], tab["e_l2V"], p)

    def write(self, directory) -> None:
        from pathlib import Path

        directory = Path(directory)
        write_csv(directory / "sensitivity_nse.csv", REPORT_HEADER, self.rows("nse", "e_l2H"))
        if self.nudged:
            write_csv(directory / "sensitivity_nudged.csv", REPORT_HEADER, self.rows("nudged", "e_l2V"))


def convergence_study(cfg: SensitivityConfig, forcing: SpectralField2D, u0: np.ndarray | SpectralField2D
                      ) -> StudyReport:
    """March the base flow, every quotient flow and both sensitivity systems
    together, accumulating time-integrated quotient errors on the fly.

    All flows start from ``u0`` at ``t_start``; nudged flows start from zero
    and each is nudged toward its own reference flow, so the nudged quotient
    satisfies the difference-quotient system of the nudged equations.
    """
    grid = forcing.grid
    fh = np.asarray(forcing.coeffs)
    u0 = np.asarray(u0.coeffs if isinstance(u0, SpectralField2D) else u0)
    dt, nu1 = cfg.dt, cfg.nu1
    nudge = cfg.mu is not None
    keep = low_mode_mask(grid, cfg.h) if nudge else None

    def make(nu):
        integ = Integrator(grid, fh, nu, dt)
        if not cfg.nonlinear:
            integ.tendency = lambda uh: fh
        return integ

    base = make(nu1)
    others = [make(nu) for nu in cfg.nu2_values]
    u1 = u0.copy()
    u2 = [u0.copy() for _ in others]
    ut = np.zeros_like(u0)
    zero = np.zeros_like(u0)
    v1, v2, vt = (zero.copy(), [zero.copy() for _ in others], zero.copy()) if nudge else (None, None, None)
    m = len(others)
    samples = {key: np.zeros((cfg.nsteps + 1, m)) for key in ("nH", "nV", "dH", "dV")}

    def sample(k):
        for j, nu2 in enumerate(cfg.nu2_values):
            s = 1.0 / (nu1 - nu2)
            d = (u1 - u2[j]) * s - ut
            samples["nH"][k, j] = sq_norm_arrays(grid, d)
            samples["nV"][k, j] = sq_norm_arrays(grid, d, 1)
            if nudge:
                d = (v1 - v2[j]) * s - vt
                samples["dH"][k, j] = sq_norm_arrays(grid, d)
                samples["dV"][k, j] = sq_norm_arrays(grid, d, 1)

    sample(0)
    implicit = cfg.source_time == "implicit"
    for k in range(1, cfg.nsteps + 1):
        u1_new = base.step(u1)
        ut_new = sensitivity_step(grid, ut, u1, nu1, dt, cfg.nonlinear, u1_new if implicit else None)
        if nudge:
            v1_new = base.step(v1, cfg.mu * (u1 - v1) * keep)
            vt = nudged_sensitivity_step(grid, vt, v1, ut, nu1, cfg.mu, keep, dt, cfg.nonlinear,
                                         v1_new if implicit else None)
            v1 = v1_new
            for j, integ in enumerate(others):
                v2[j] = integ.step(v2[j], cfg.mu * (u2[j] - v2[j]) * keep)
        ut, u1 = ut_new, u1_new
        for j, integ in enumerate(others):
            u2[j] = integ.step(u2[j])
        check_finite(ut, k, cfg.t_start + k * dt)
        sample(k)

    def l2t(key):
        return np.sqrt(trapezoid(samples[key], dx=dt, axis=0))

    report = StudyReport(nu1, np.array(cfg.nu2_values), {"e_l2H": l2t("nH"), "e_l2V": l2t("nV")})
    if nudge:
        report.nudged = {"e_l2H": l2t("dH"), "e_l2V": l2t("dV")}
    for system, norm in (("nse", "e_l2H"), ("nudged", "e_l2V")):
        tab = getattr(report, system)
        if tab and np.any(np.diff(tab[norm]) >= 0):
            note = f"{system} {norm} errors are not monotone along the sequence"
            log.warning(note)
            report.notes.append(note)
    return report


def stokes_mode(grid, k: tuple[int, int], amplitude: float) -> np.ndarray:
    """Divergence-free single Fourier mode (plus its conjugate) of given amplitude.

    The polarization is perpendicular to ``k``; ``amplitude`` is the modulus
    of the stored coefficient vector.
    """
    k1, k2 = k
    if k2 < 0 or (k2 == 0 and k1 <= 0):
        raise ValueError("pick k in the stored half plane (k2 > 0, or k2 == 0 and k1 > 0)")
    uh = np.zeros((2,) + grid.shape, dtype=complex)
    norm = math.hypot(k1, k2)
    row = k1 % grid.n
    uh[0, row, k2] = -k2 / norm * amplitude
    uh[1, row, k2] = k1 / norm * amplitude
    if k2 == 0:
        uh[:, (-k1) % grid.n, 0] = np.conj(uh[:, row, 0])
    return uh
