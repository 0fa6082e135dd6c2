import numpy as np
import pytest

from viscda.forcing import ForcingSpec
from viscda.grid import Grid2D
from viscda.io import read_forcing
from viscda.solver import SolverConfig, run_reference
from viscda.spectral import SpectralField2D, leray_project


def random_field(grid: Grid2D, rng: np.random.Generator, div_free: bool = True, kcut: float | None = None,
                 ) -> SpectralField2D:
    """Random real field from physical-space noise; optionally band-limited to |k| <= kcut."""
    u = rng.standard_normal((2, grid.n, grid.n))
    f = SpectralField2D.from_physical(grid, u)
    if kcut is not None:
        f = SpectralField2D(grid, f.coeffs * (grid.kmag <= kcut))
    return leray_project(f) if div_free else f


def full_lattice(grid: Grid2D, uh: np.ndarray) -> np.ndarray:
    """All n x n coefficients in fft order, via an independent numpy round trip."""
    u = grid.to_physical(uh, padded=False)
    return np.fft.fft2(u, axes=(-2, -1)) / grid.n**2


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_reference(tmp_path_factory):
    """n = 32 reference flow with nu = 0.02, observed at h = 1/8 from t = 2 to 8."""
    g = Grid2D(32)
    cfg = SolverConfig(nu=0.02, dt=0.01, t_end=8.0, grid=g, forcing=ForcingSpec(3, 5, seed=1),
                       snapshot_interval=0.1, observation_cutoff=1 / 8, observation_start=2.0)
    out = tmp_path_factory.mktemp("ref32")
    traj, obs = run_reference(cfg, out)
    return traj, obs, read_forcing(out / "forcing.nnse")


def convolution_oracle(grid: Grid2D, u: SpectralField2D, v: SpectralField2D) -> np.ndarray:
    """P(u . grad v) by the direct sum over p + q = k, truncated to retained modes."""
    n = grid.n
    uf = full_lattice(grid, u.coeffs)
    vf = full_lattice(grid, v.coeffs)
    k = np.fft.fftfreq(n, 1.0 / n).astype(int)
    q1, q2 = np.meshgrid(k, k, indexing="ij")
    out = np.zeros((2, n, n), dtype=complex)
    for a in range(n):
        for b in range(n):
            up = uf[:, a, b]
            if not np.any(up):
                continue
            p1, p2 = k[a], k[b]
            s1, s2 = p1 + q1, p2 + q2
            ok = (np.abs(s1) < n // 2) & (np.abs(s2) < n // 2)
            # (u_p . i q) v_q
            coef = 1j * (up[0] * q1 + up[1] * q2)
            for c in range(2):
                np.add.at(out[c], (s1[ok] % n, s2[ok] % n), (coef * vf[c])[ok])
    kk = q1**2 + q2**2
    inv = np.where(kk > 0, 1.0 / np.maximum(kk, 1), 0.0)
    div = (q1 * out[0] + q2 * out[1]) * inv
    proj = np.stack([out[0] - q1 * div, out[1] - q2 * div])
    proj[:, kk == 0] = 0
    return proj


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
