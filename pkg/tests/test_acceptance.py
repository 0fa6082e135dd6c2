"""Acceptance suite on the desk-scale configuration D.

D: n = 128, nu1 = 0.01, forcing band 9 < |k| < 11 with |f| = 1 and seed 1,
mu = 20, h = 1/16, dt = 0.005, reference on [0, 40], assimilation from
t = 20 with v(20) = 0.

Each criterion prints one ``PASS``/``FAIL`` line, repeated in the terminal
summary. Building the reference takes about a minute and ~250 MB; set
``VISCDA_DESK_REFERENCE`` to a directory to keep it between sessions.
"""

import math
import os
import time
from pathlib import Path

import numpy as np
import pytest

from viscda.assimilation import AssimilationConfig, detect_floor, run_assimilation
from viscda.cli import execute, main
from viscda.config import load_manifest, resolve
from viscda.grid import Grid2D
from viscda.io import SnapshotTrajectory, read_forcing, read_observations
from viscda.recovery import RecoveryConfig, algorithm1, algorithm2, estimate_instant
from viscda.sensitivity import SensitivityConfig, convergence_study, difference_quotient, solve_sensitivity, stokes_mode
from viscda.solver import integrate, steps_in
from viscda.spectral import SpectralField2D, energy_spectrum, inner, nonlinear_term, norms, observe, sq_norm_arrays

from conftest import ACCEPTANCE_LINES, convolution_oracle, full_lattice, random_field

pytestmark = pytest.mark.slow

NU1 = 0.01
MU = 20.0
H = 1 / 16
DT = 0.005
T0 = 20.0
DESK = {
    "n": "128", "nu": "0.01", "t_end": "40", "dt": "0.005", "seed": "1", "k_low": "9", "k_high": "11",
    "forcing_norm": "1", "snapshot_interval": "0.1", "observation_cutoff": "0.0625", "observation_start": "20",
}
SWEEP = (1.0, 0.1, 0.01, 0.001)


def report(num: int, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {num:2d}: {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


class Desk:
    def __init__(self, directory: Path):
        self.dir = directory
        self.obs = read_observations(directory / "observations.nnob")
        self.forcing = read_forcing(directory / "forcing.nnse")
        self.traj = SnapshotTrajectory(directory / "snapshots")
        self.grid = self.forcing.grid


@pytest.fixture(scope="session")
def desk(tmp_path_factory):
    keep = os.environ.get("VISCDA_DESK_REFERENCE")
    out = Path(keep) if keep else tmp_path_factory.mktemp("desk") / "reference"
    cfg = resolve("reference", DESK, overrides={"out_dir": str(out)})
    manifest = out / "manifest.json"
    if manifest.exists():
        man = load_manifest(manifest)
        if man["config_sha256"] == cfg.digest() and man["exit_status"] == 0:
            return Desk(out)
    assert execute(cfg) == 0
    return Desk(out)


@pytest.fixture(scope="session")
def sweep(desk):
    """Assimilation error series for nu2 = nu1 (1 + e), e in SWEEP, over [20, 40]."""
    out = []
    t0 = time.perf_counter()
    for e in SWEEP:
        cfg = AssimilationConfig(nu2=NU1 * (1 + e), mu=MU, h=H, dt=DT, t_start=T0, t_end=40.0)
        out.append(run_assimilation(cfg, desk.obs, desk.forcing, desk.traj))
    return out, time.perf_counter() - t0


def test_criterion_01_convolution_oracle():
    rng = np.random.default_rng(11)
    worst, slowest = 0.0, 0.0
    for n in (8, 16):
        g = Grid2D(n)
        for _ in range(3):
            u, v = random_field(g, rng), random_field(g, rng)
            t0 = time.perf_counter()
            got = full_lattice(g, nonlinear_term(u, v).coeffs)
            slowest = max(slowest, time.perf_counter() - t0)
            want = convolution_oracle(g, u, v)
            worst = max(worst, np.linalg.norm(got - want) / np.linalg.norm(want))
    report(1, worst <= 1e-12 and slowest < 1.0,
           f"dealiased B vs direct convolution on 8^2, 16^2: max rel err {worst:.2e} (<= 1e-12), "
           f"slowest call {slowest:.3f} s (< 1 s)")


def test_criterion_02_bilinear_orthogonality():
    rng = np.random.default_rng(12)
    g = Grid2D(32)
    worst = 0.0
    for _ in range(100):
        u, w = random_field(g, rng), random_field(g, rng)
        bound = norms(u).h1 * norms(w).h1 ** 2
        worst = max(worst, abs(inner(nonlinear_term(u, w), w)) / bound)
    report(2, worst <= 1e-10, f"max |<B(u,w),w>| / (||u|| ||w||^2) over 100 pairs = {worst:.2e} (<= 1e-10)")


def test_criterion_03_interpolant_bound():
    rng = np.random.default_rng(13)
    g = Grid2D(128)
    worst = 0.0
    for h in (1 / 8, 1 / 16, 1 / 32):
        for _ in range(100):
            u = random_field(g, rng)
            worst = max(worst, norms(u - observe(u, h)).l2 / (h * norms(u).h1))
    report(3, worst < 1.0, f"max |u - I_h u| / (h ||u||) over 300 fields with tail support = {worst:.4f} (< 1)")


def test_criterion_04_stepper_order(desk):
    g, fh = desk.grid, desk.forcing.coeffs
    u0 = desk.traj.at(T0)
    t0 = time.perf_counter()

    def run(dt):
        return integrate(g, fh, u0, NU1, dt, steps_in(1.0, dt))

    fine = 1.25e-4
    ref = 2 * run(fine) - run(2 * fine)
    dts = [4e-3, 2e-3, 1e-3, 5e-4]
    errs = [math.sqrt(sq_norm_arrays(g, run(dt) - ref)) for dt in dts]
    slope = float(np.polyfit(np.log(dts), np.log(errs), 1)[0])
    took = time.perf_counter() - t0
    report(4, abs(slope - 1.0) <= 0.1 and took < 300,
           f"self-convergence slope on D over [20, 21] = {slope:.4f} (1.0 +- 0.1), {took:.0f} s (< 300 s)")


def test_criterion_05_exact_viscosity_synchronization(desk):
    t0 = time.perf_counter()
    cfg = AssimilationConfig(nu2=NU1, mu=MU, h=H, dt=DT, t_start=T0, t_end=T0 + 10)
    s = run_assimilation(cfg, desk.obs, desk.forcing, desk.traj)
    took = time.perf_counter() - t0
    t, rel = s["t"], s["l2_rel"]
    below = np.flatnonzero(rel < 1e-10)
    t_hit = float(t[below[0]]) if below.size else math.inf
    # strictly decreasing after the transient until the error reaches a 1e-12 relative floor
    floor = np.flatnonzero(rel < 1e-12)
    t_floor = float(t[floor[0]]) if floor.size else float(t[-1])
    seg = rel[(t >= T0 + 1 - 1e-9) & (t <= t_floor + 1e-9)]
    monotone = bool(np.all(np.diff(seg) < 0))
    report(5, t_hit <= T0 + 10 and monotone and took < 600,
           f"|u-v|/|u| < 1e-10 at t = {t_hit:.1f} (<= 30), strictly decreasing on [21, {t_floor:.1f}] "
           f"(down to 1e-12): {monotone}, {took:.0f} s")


def test_criterion_06_floor_scaling(sweep):
    series, took = sweep
    floors = []
    for s in series:
        floors.append(detect_floor(s["t"], s["l2_err"])[0])
    floors = np.array(floors)
    rel = np.array(SWEEP)
    fr = floors[1:] / floors[:-1]
    er = rel[1:] / rel[:-1]
    decreasing = bool(np.all(np.diff(floors) < 0))
    within = bool(np.all((fr / er <= 3) & (fr / er >= 1 / 3)))
    report(6, decreasing and within and took < 2400,
           f"floors {', '.join(f'{x:.3e}' for x in floors)}; floor ratios {', '.join(f'{x:.3g}' for x in fr)} "
           f"vs error ratios {', '.join(f'{x:.3g}' for x in er)} (within x3); sweep {took:.0f} s")


def test_criterion_07_per_update_improvement(sweep):
    series, _ = sweep
    ratios = []
    for s in series:
        floor, t_floor = detect_floor(s["t"], s["l2_err"])
        t_eval = t_floor if t_floor is not None else float(s["t"][np.nanargmin(s["l2_err"])])
        nu_t = estimate_instant(s.nu2, MU, s.value_at("ih_err_sq", t_eval), s.value_at("denom", t_eval))
        ratios.append(abs(nu_t - NU1) / abs(s.nu2 - NU1))
    report(7, max(ratios) <= 0.2,
           f"|nu~ - nu1| / |nu2 - nu1| at the floor: {', '.join(f'{r:.3g}' for r in ratios)} (<= 0.2)")


def test_criterion_08_algorithm1(desk):
    t0 = time.perf_counter()
    cfg = RecoveryConfig(mu=MU, solver_dt=DT, t_start=T0)
    st = algorithm1(desk.obs, desk.forcing, 1.0, cfg, dt=0.1)
    took = time.perf_counter() - t0
    err = abs(st.nu2 - NU1) / NU1
    report(8, err <= 1e-6 and st.iteration <= 20 and took < 1800,
           f"Algorithm 1 from nu2 = 1: nu = {st.nu2!r}, rel err {err:.2e} (<= 1e-6) after {st.iteration} updates "
           f"(<= 20), status {st.status}, {took:.0f} s")


def test_criterion_09_algorithm2(desk):
    t0 = time.perf_counter()
    cfg = RecoveryConfig(mu=MU, solver_dt=DT, t_start=T0)
    st = algorithm2(desk.obs, desk.forcing, 1.0, cfg, wait=1.0, window=1.0)
    took = time.perf_counter() - t0
    err = abs(st.nu2 - NU1) / NU1
    report(9, err <= 1e-6 and st.iteration <= 40 and took < 1800,
           f"Algorithm 2 (I = J = 1) from nu2 = 1: nu = {st.nu2!r}, rel err {err:.2e} (<= 1e-6) after "
           f"{st.iteration} iterations (<= 40), status {st.status}, {took:.0f} s")


def test_criterion_10_sensitivity_oracle():
    g = Grid2D(16)
    k, nu, dt, nsteps = (1, 1), NU1, 1e-4, 10000
    lam = k[0] ** 2 + k[1] ** 2
    u0 = stokes_mode(g, k, 1.0)
    times = np.arange(nsteps + 1) * dt

    def modal(nu_):
        return [SpectralField2D(g, u0 * math.exp(-nu_ * lam * t), divergence_free=True) for t in times]

    traj = modal(nu)
    ut = solve_sensitivity(traj, nu, dt, times=times, nonlinear=False)
    sens_err = 0.0
    for j in range(1, nsteps + 1, 50):
        want = -lam * times[j] * math.exp(-nu * lam * times[j]) * u0
        sens_err = max(sens_err, np.max(np.abs(ut[j].coeffs - want)) / np.max(np.abs(want)))
    # rounding in the inputs limits the quotient to ~eps / (lam t |nu1 - nu2|), so
    # the gaps and times are kept where that is far below the tolerance
    quot_err = 0.0
    for nu2 in (0.02, 0.011, 0.0101):
        d = difference_quotient(traj, modal(nu2), nu, nu2)
        assert np.all(d[0].coeffs == 0)
        for j in range(500, nsteps + 1, 500):
            c = (math.exp(-nu * lam * times[j]) - math.exp(-nu2 * lam * times[j])) / (nu - nu2)
            quot_err = max(quot_err, np.max(np.abs(d[j].coeffs - c * u0)) / (abs(c) * np.max(np.abs(u0))))
    report(10, sens_err <= 1e-6 and quot_err <= 1e-10,
           f"Stokes mode k = (1, 1): sensitivity rel err {sens_err:.2e} (<= 1e-6) at dt = 1e-4; "
           f"difference quotients rel err {quot_err:.2e} (<= 1e-10)")


def test_criterion_11_difference_quotient_convergence(desk):
    t0 = time.perf_counter()
    cfg = SensitivityConfig(NU1, tuple(NU1 * (1 + e) for e in (0.1, 0.05, 0.025, 0.0125)), dt=DT, t_start=T0,
                            t_end=T0 + 2, mu=MU, h=H)
    rep = convergence_study(cfg, desk.forcing, desk.traj.at(T0))
    took = time.perf_counter() - t0
    e_n, e_v = rep.nse["e_l2H"], rep.nudged["e_l2V"]
    p_n, p_v = rep.order("nse", "e_l2H"), rep.order("nudged", "e_l2V")
    ok = (np.all(np.diff(e_n) < 0) and np.all(np.diff(e_v) < 0) and abs(p_n - 1) <= 0.3 and abs(p_v - 1) <= 0.3
          and took < 1800)
    report(11, bool(ok),
           f"L2(H) errors {', '.join(f'{x:.4g}' for x in e_n)} order {p_n:.3f}; nudged L2(V) errors "
           f"{', '.join(f'{x:.4g}' for x in e_v)} order {p_v:.3f} (1.0 +- 0.3, strictly decreasing); {took:.0f} s")


def test_criterion_12_spectrum(desk):
    idx = [i for i, t in enumerate(desk.traj.times) if t >= T0 - 1e-9]
    r, s = energy_spectrum([desk.traj.load(i) for i in idx], [desk.traj.times[i] for i in idx])
    r, s = np.asarray(r), np.asarray(s)
    peak = float(r[np.argmax(s)])
    tail = float(s[r == 40][0] / s.max())
    report(12, 9 <= peak <= 11 and tail < 1e-3,
           f"time-averaged S(r) over [20, 40] peaks at r = {peak:g} (in [9, 11]); S(40)/max = {tail:.2e} (< 1e-3)")


def test_criterion_13_replay(desk, tmp_path):
    ref_replay = tmp_path / "replay_reference"
    assert main(["--quiet", "replay", "--manifest", str(desk.dir / "manifest.json"), "--out", str(ref_replay)]) == 0
    cfg = tmp_path / "a.cfg"
    cfg.write_text(f"nu2 = 0.011\nt_start = 20\nt_end = 22\nout_dir = {tmp_path / 'assim'}\n")
    assert main(["--quiet", "assimilate", "--config", str(cfg), "--obs", str(desk.dir), "--truth", str(desk.dir)]) == 0
    assim_replay = tmp_path / "replay_assim"
    assert main(["--quiet", "replay", "--manifest", str(tmp_path / "assim" / "manifest.json"),
                 "--out", str(assim_replay)]) == 0
    pairs = [(desk.dir / "timeseries.csv", ref_replay / "timeseries.csv"),
             (tmp_path / "assim" / "errors.csv", assim_replay / "errors.csv")]
    same = [a.read_bytes() == b.read_bytes() for a, b in pairs]
    report(13, all(same), f"replayed reference and assimilation CSVs bit-identical: {same}")


def test_desk_reference_reaches_steady_band(desk):
    """Moving 5-unit average of the energy drifts < 20% over the last 10 units."""
    import csv

    with open(desk.dir / "timeseries.csv") as fh:
        rows = [(float(r["t"]), float(r["energy"])) for r in csv.DictReader(fh)]
    t, e = np.array(rows).T
    dt = t[1] - t[0]
    w = int(round(5 / dt))
    avg = np.convolve(e, np.ones(w) / w, mode="valid")
    t_avg = t[w - 1:]
    last = avg[t_avg >= t[-1] - 10]
    drift = (last.max() - last.min()) / last.mean()
    assert drift < 0.2
