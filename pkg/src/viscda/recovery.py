"""Viscosity recovery from observation-side quantities.

At a stationary assimilation error the energy balance of the observed modes
reduces to ``(nu1 - nu2) <I_h(Av), I_h(w)> + mu |I_h(w)|^2 ~ 0``, giving the
instantaneous estimate

    nu1 ~ nu2 - mu |I_h(w)|^2 / <I_h(Av), I_h(w)>.

Keeping the time derivative and integrating over ``[s, t]`` gives the windowed
estimate used by :func:`algorithm2`. Neither algorithm ever sees the truth
trajectory; only the observation stream, the forcing and their own v.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

from .assimilation import NudgedRun
from .io import ObservationStream, write_csv
from .solver import steps_in
from .spectral import SpectralField2D

log = logging.getLogger(__name__)

DEFAULT_GUARD = 1e-3

CONVERGED = "converged"
EXHAUSTED = "exhausted"
STALLED = "stalled"
DEGENERATE = "degenerate"


class DegenerateDenominator(ArithmeticError):
    """The pairing <I_h(Av), I_h(w)> is too small to trust the correction."""


class EmptyWindow(ValueError):
    pass


def _correction(nu2: float, mu: float, numerator: float, denom: float, guard: float) -> float:
    if numerator == 0.0:
        return nu2
    if not abs(denom) > guard * abs(numerator) / nu2:
        raise DegenerateDenominator(f"|denominator| = {abs(denom):.3e} too small for numerator {numerator:.3e}")
    return nu2 - numerator / denom


def estimate_instant(nu2: float, mu: float, ih_w_sq: float, denom: float, guard: float = DEFAULT_GUARD) -> float:
    """nu2 - mu |I_h w|^2 / <I_h(Av), I_h(w)>.

    Raises :class:`DegenerateDenominator` when the correction would exceed
    ``nu2 / guard`` in magnitude. A zero error returns ``nu2`` unchanged.
    """
    return _correction(nu2, mu, mu * ih_w_sq, denom, guard)


@dataclass
class WindowAccumulator:
    """Trapezoid-rule integrals of |I_h w|^2 and <I_h(Av), I_h(w)> over [s, t]."""

    s: float
    ih_sq_s: float
    denom_s: float
    t: float = None
    ih_sq_t: float = None
    denom_t: float = None
    int_ih_sq: float = 0.0
    int_denom: float = 0.0

    def __post_init__(self):
        if self.t is None:
            self.t, self.ih_sq_t, self.denom_t = self.s, self.ih_sq_s, self.denom_s

    def add(self, t: float, ih_sq: float, denom: float) -> None:
        h = t - self.t
        self.int_ih_sq += 0.5 * h * (self.ih_sq_t + ih_sq)
        self.int_denom += 0.5 * h * (self.denom_t + denom)
        self.t, self.ih_sq_t, self.denom_t = t, ih_sq, denom

    @classmethod
    def from_samples(cls, times, ih_sq, denom) -> WindowAccumulator:
        acc = cls(float(times[0]), float(ih_sq[0]), float(denom[0]))
        for t, a, b in zip(times[1:], ih_sq[1:], denom[1:]):
            acc.add(float(t), float(a), float(b))
        return acc


def estimate_windowed(nu2: float, mu: float, window: WindowAccumulator, guard: float = DEFAULT_GUARD) -> float:
    """nu2 - (mu int|I_h w|^2 + |I_h w(t)|^2/2 - |I_h w(s)|^2/2) / int<I_h(Av), I_h(w)>."""
    if not window.t > window.s:
        raise EmptyWindow(f"window [{window.s}, {window.t}] is empty")
    numerator = mu * window.int_ih_sq + 0.5 * window.ih_sq_t - 0.5 * window.ih_sq_s
    return _correction(nu2, mu, numerator, window.int_denom, guard)


@dataclass(frozen=True)
class RecoveryConfig:
    """Solver-side settings shared by both algorithms.

    ``t_end`` is the data horizon; ``None`` means the last observation.
    """

    mu: float = 20.0
    solver_dt: float = 0.005
    t_start: float = 20.0
    t_end: float | None = None
    stepper: str = "euler"
    guard: float = DEFAULT_GUARD
    max_obs_gap: float = 1.0


@dataclass(frozen=True)
class Update:
    """One application of an estimator."""

    t: float
    nu2: float
    ih_w_sq: float
    denom: float
    nu_tilde: float
    accepted: bool


@dataclass
class RecoveryState:
    nu2: float
    iteration: int = 0
    history: list[tuple[int, float, float, float]] = field(default_factory=list)
    updates: list[Update] = field(default_factory=list)
    window: WindowAccumulator | None = None
    status: str = ""
    rejected_in_a_row: int = 0
    final_t: float = math.nan

    def log_point(self, t: float, ih_err: float) -> None:
        self.history.append((self.iteration, t, self.nu2, ih_err))

    def history_rows(self, nu1: float | None = None):
        for it, t, nu2, e in self.history:
            yield it, t, nu2, (abs(nu2 - nu1) if nu1 is not None else None), e

    def table_rows(self, nu1: float | None = None):
        """Rows of ``nu2, ih_w_sq, denom, nu_tilde, abs_err, improvement_ratio``."""
        for u in self.updates:
            if not u.accepted:
                continue
            abs_err = ratio = None
            if nu1 is not None:
                abs_err = abs(u.nu_tilde - nu1)
                if u.nu2 != nu1:
                    ratio = abs_err / abs(u.nu2 - nu1)
            yield u.nu2, u.ih_w_sq, u.denom, u.nu_tilde, abs_err, ratio

    def write(self, history_path, table_path, nu1: float | None = None) -> None:
        write_csv(history_path, ("iteration", "t", "nu2", "abs_err_if_truth", "ih_err"), self.history_rows(nu1))
        write_csv(table_path, TABLE_HEADER, self.table_rows(nu1))


TABLE_HEADER = ("nu2", "ih_w_sq", "denom", "nu_tilde", "abs_err", "improvement_ratio")


def _horizon(obs: ObservationStream, cfg: RecoveryConfig) -> float:
    return obs.t_last if cfg.t_end is None else min(cfg.t_end, obs.t_last)


def _try_update(state: RecoveryState, run: NudgedRun, t: float, estimate, ih_sq: float, denom: float) -> bool:
    """Apply an estimator; rejected (degenerate or non-positive) estimates keep nu2."""
    try:
        nu_tilde = estimate()
    except DegenerateDenominator as exc:
        log.info("t = %.4g: %s; holding nu2 = %.17g", t, exc, state.nu2)
        state.updates.append(Update(t, state.nu2, ih_sq, denom, math.nan, False))
        state.rejected_in_a_row += 1
        return False
    if not nu_tilde > 0:
        log.info("t = %.4g: rejected non-positive estimate %.6g", t, nu_tilde)
        state.updates.append(Update(t, state.nu2, ih_sq, denom, nu_tilde, False))
        state.rejected_in_a_row += 1
        return False
    state.updates.append(Update(t, state.nu2, ih_sq, denom, nu_tilde, True))
    state.rejected_in_a_row = 0
    state.nu2 = nu_tilde
    state.iteration += 1
    run.set_viscosity(nu_tilde)
    return True


def algorithm1(obs: ObservationStream, forcing: SpectralField2D, nu2_init: float, cfg: RecoveryConfig,
               dt: float = 0.1, epsilon: float = 1e-12, delta: float = 0.05) -> RecoveryState:
    """Stall-triggered recovery with the instantaneous estimator.

    ``dt`` is the algorithm's comparison step: v is advanced by ``dt`` (in
    ``cfg.solver_dt`` substeps) between checks of the observed error
    ``e = |I_h(u) - I_h(v)|``. When ``e`` fails to shrink by the factor
    ``1 - delta`` over a step while still below its value at the last update,
    nu2 is replaced by the estimate; if it stalls at or above that value the
    current nu2 is returned.
    """
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    substeps = steps_in(dt, cfg.solver_dt, "algorithm dt")
    if substeps < 1:
        raise ValueError("algorithm dt must be at least one solver step")
    horizon = _horizon(obs, cfg)
    run = NudgedRun(obs, forcing.coeffs, nu2_init, cfg.mu, cfg.solver_dt, cfg.t_start,
                    stepper=cfg.stepper, max_obs_gap=cfg.max_obs_gap)
    state = RecoveryState(nu2_init)
    e = math.sqrt(run.observables()[0])
    e_last_update = e
    state.log_point(run.t, e)
    while e > epsilon and run.t + dt <= horizon + 1e-9:
        for _ in range(substeps):
            run.step()
        ih_sq, denom = run.observables()
        e_new = math.sqrt(ih_sq)
        if e_new >= (1 - delta) * e:
            if e_new < e_last_update:
                nu2 = state.nu2
                if _try_update(state, run, run.t,
                               lambda: estimate_instant(nu2, cfg.mu, ih_sq, denom, cfg.guard), ih_sq, denom):
                    e_last_update = e_new
                    state.log_point(run.t, e_new)
            else:
                state.status = STALLED
                e = e_new
                break
        e = e_new
    if not state.status:
        state.status = _final_status(state, e, epsilon)
    if state.history[-1][1] != run.t:
        state.log_point(run.t, e)
    state.final_t = run.t
    return state


def _final_status(state: RecoveryState, e: float, epsilon: float) -> str:
    if e <= epsilon:
        return CONVERGED
    return DEGENERATE if state.rejected_in_a_row else EXHAUSTED


def algorithm2(obs: ObservationStream, forcing: SpectralField2D, nu2_init: float, cfg: RecoveryConfig,
               wait: float = 1.0, window: float = 1.0, epsilon: float = 1e-12) -> RecoveryState:
    """Windowed recovery: per iteration run ``wait + window`` time units with
    the current nu2, then update it from the time-integrated estimator over
    the last ``window``. v carries over between iterations.

    A rejected estimate extends the averaging window by another ``window``
    while data remain.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    m_wait = steps_in(wait, cfg.solver_dt, "wait")
    m_win = steps_in(window, cfg.solver_dt, "window")
    if m_wait < 1 or m_win < 1:
        raise ValueError("wait and window must each span at least one solver step")
    horizon = _horizon(obs, cfg)
    run = NudgedRun(obs, forcing.coeffs, nu2_init, cfg.mu, cfg.solver_dt, cfg.t_start,
                    stepper=cfg.stepper, max_obs_gap=cfg.max_obs_gap)
    state = RecoveryState(nu2_init)
    e = math.sqrt(run.observables()[0])
    state.log_point(run.t, e)
    t0 = run.t
    while e > epsilon and t0 + wait + window <= horizon + 1e-9:
        for _ in range(m_wait):
            run.step()
        acc = WindowAccumulator(run.t, *run.observables())
        while True:
            for _ in range(m_win):
                run.step()
                acc.add(run.t, *run.observables())
            nu2 = state.nu2
            if _try_update(state, run, run.t, lambda: estimate_windowed(nu2, cfg.mu, acc, cfg.guard),
                           acc.int_ih_sq, acc.int_denom):
                break
            if run.t + window > horizon + 1e-9:
                break
        state.window = acc
        e = math.sqrt(acc.ih_sq_t)
        state.log_point(run.t, e)
        t0 = run.t
        if state.rejected_in_a_row:
            break
    state.status = _final_status(state, e, epsilon)
    state.final_t = run.t
    return state
