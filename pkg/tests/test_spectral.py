import math
import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from viscda.grid import Grid2D
from viscda.spectral import (GridMismatchError, SpectralField2D, energy_spectrum, inner, leray_project,
                             nonlinear_term, norms, observe, stokes_apply)

from conftest import convolution_oracle, full_lattice, random_field


@pytest.mark.parametrize("n", [8, 16])
def test_nonlinear_term_matches_convolution(n, rng):
    g = Grid2D(n)
    for _ in range(3):
        u, v = random_field(g, rng), random_field(g, rng)
        t0 = time.perf_counter()
        got = full_lattice(g, nonlinear_term(u, v).coeffs)
        assert time.perf_counter() - t0 < 1.0
        want = convolution_oracle(g, u, v)
        assert np.linalg.norm(got - want) <= 1e-12 * np.linalg.norm(want)


def test_leray_annihilates_gradients(rng):
    g = Grid2D(16)
    phi = SpectralField2D.from_physical(g, rng.standard_normal((2, 16, 16))).coeffs[0]
    grad = SpectralField2D(g, np.stack([1j * g.kx * phi, 1j * g.ky * phi]))
    assert np.max(np.abs(leray_project(grad).coeffs)) < 1e-15


def test_leray_idempotent_and_matches_matrix(rng):
    g = Grid2D(8)
    f = random_field(g, rng, div_free=False)
    p = leray_project(f)
    assert p.divergence_free
    assert p.max_divergence() < 1e-14
    assert np.array_equal(leray_project(p).coeffs, p.coeffs) or np.allclose(leray_project(p).coeffs, p.coeffs,
                                                                             rtol=0, atol=1e-16)
    for i in range(g.n):
        for j in range(g.shape[1]):
            if not g.mask[i, j]:
                assert np.all(p.coeffs[:, i, j] == 0)
                continue
            kv = np.array([g.kx[i, j], g.ky[i, j]])
            m = np.eye(2) - np.outer(kv, kv) / (kv @ kv)
            assert np.allclose(p.coeffs[:, i, j], m @ f.coeffs[:, i, j], rtol=0, atol=1e-15)


def single_mode(g: Grid2D, k1: int, k2: int, vec) -> SpectralField2D:
    uh = np.zeros((2,) + g.shape, dtype=complex)
    uh[:, k1 % g.n, k2] = vec
    if k2 == 0:
        uh[:, -k1 % g.n, 0] = np.conj(vec)
    return SpectralField2D.from_array(g, uh)


def test_stokes_single_modes():
    g = Grid2D(16)
    a = 0.7
    u = single_mode(g, 1, 0, (0, a))
    assert np.allclose(stokes_apply(u).coeffs, u.coeffs)
    w = single_mode(g, 3, 4, (4, -3))
    assert np.allclose(stokes_apply(w).coeffs, 25 * w.coeffs)


def test_stokes_parseval(rng):
    g = Grid2D(16)
    u = random_field(g, rng)
    h1sq = g.measure * sum(
        np.sum(g.weights * g.k2 * np.abs(u.coeffs[c]) ** 2) for c in range(2))
    assert math.isclose(inner(stokes_apply(u), u), h1sq, rel_tol=1e-13)
    assert math.isclose(norms(u).h1 ** 2, h1sq, rel_tol=1e-13)


def test_taylor_green_nonlinearity_is_gradient():
    g = Grid2D(16)
    x, y = g.points()
    u = SpectralField2D.from_physical(g, np.stack([np.sin(x) * np.cos(y), -np.cos(x) * np.sin(y)]))
    assert norms(nonlinear_term(u, u)).l2 < 1e-12


def test_constant_field_gives_zero(rng):
    g = Grid2D(16)
    u = random_field(g, rng)
    z = SpectralField2D.zeros(g)
    assert np.all(nonlinear_term(u, z).coeffs == 0)


def test_grid_mismatch(rng):
    u = random_field(Grid2D(8), rng)
    v = random_field(Grid2D(16), rng)
    with pytest.raises(GridMismatchError):
        nonlinear_term(u, v)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([8, 16, 32]))
def test_bilinear_skew_symmetry(seed, n):
    rng = np.random.default_rng(seed)
    g = Grid2D(n)
    u, v, w = (random_field(g, rng) for _ in range(3))
    nu, nw, nv = norms(u), norms(w), norms(v)
    assert abs(inner(nonlinear_term(u, w), w)) <= 1e-10 * nu.h1 * nw.h1**2
    lhs = inner(nonlinear_term(u, v), w)
    rhs = -inner(nonlinear_term(u, w), v)
    assert abs(lhs - rhs) <= 1e-10 * nu.h1 * nv.h1 * nw.h1


def test_observe_properties(rng):
    g = Grid2D(32)
    u, v = random_field(g, rng), random_field(g, rng)
    h = 1 / 8
    ou = observe(u, h)
    assert np.array_equal(observe(ou, h).coeffs, ou.coeffs)
    assert np.array_equal(observe(stokes_apply(u), h).coeffs, stokes_apply(ou).coeffs)
    assert math.isclose(inner(ou, v), inner(u, observe(v, h)), rel_tol=1e-13)
    low = random_field(g, rng, kcut=8)
    assert np.array_equal(observe(low, h).coeffs, low.coeffs)


def test_observe_drops_high_mode_and_rejects_wide_cutoff():
    g = Grid2D(128)
    u = single_mode(g, 40, 0, (0, 1.0))
    assert np.all(observe(u, 1 / 32).coeffs == 0)
    with pytest.raises(ValueError):
        observe(SpectralField2D.zeros(Grid2D(16)), 1 / 16)


@pytest.mark.parametrize("h", [1 / 8, 1 / 16, 1 / 32])
def test_interpolant_bound(h, rng):
    g = Grid2D(128)
    u = random_field(g, rng)
    tail = norms(u - observe(u, h)).l2
    assert tail < h * norms(u).h1


def test_norms_examples(rng):
    g = Grid2D(16)
    assert norms(SpectralField2D.zeros(g)) == (0.0, 0.0, 0.0)
    a = 0.3
    u = single_mode(g, 1, 0, (0, a))
    want = 2 * math.pi * a * math.sqrt(2)
    for val in norms(u):
        assert math.isclose(val, want, rel_tol=1e-14)
    r = norms(random_field(g, rng))
    assert r.l2 < r.h1 / math.sqrt(g.lambda1) < r.da / g.lambda1


def test_grid_basics():
    g = Grid2D(128)
    assert g.lambda1 == 1.0
    assert g.padded_n == 192
    assert g.kmax == 63
    assert not g.mask[0, 0] and not g.mask[64, 0] and not g.mask[0, 64]
    with pytest.raises(ValueError):
        Grid2D(12)


def test_physical_round_trip(rng):
    g = Grid2D(32)
    u = random_field(g, rng)
    back = SpectralField2D.from_physical(g, u.to_physical())
    assert np.allclose(back.coeffs, u.coeffs, atol=1e-15)
    assert u.is_hermitian(1e-15)


def test_energy_spectrum_static_mode():
    g = Grid2D(32)
    a = 0.25
    # a real field needs the conjugate pair; the shell sum counts both members
    u = single_mode(g, 3, 4, (4 * math.sqrt(a) / 5, -3 * math.sqrt(a) / 5))
    r, s = energy_spectrum([u, u], [0.0, 1.0])
    assert math.isclose(s[5], 2 * a, rel_tol=1e-14)
    assert np.all(np.delete(s, 5) == 0)
    assert np.array_equal(r, np.arange(17))
    r2, s2 = energy_spectrum([u, u, u], [0.0, 0.5, 2.0])
    assert np.allclose(s2, s, rtol=1e-15)
    with pytest.raises(ValueError):
        energy_spectrum([u], [0.0])
