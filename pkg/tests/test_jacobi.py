"""Jacobi fields, distance Hessian and the K, Kt, N, M coefficients."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from geospec.errors import ConjugatePointError, DomainError
from geospec.geometry import CurvatureProfile, GeodesicSetup, ModelSpace
from geospec.jacobi import (
    OdeGrid,
    build_K_family,
    hessian_k,
    k_tilde_direct,
    k_tilde_series,
    riccati_residual,
    solve_jacobi,
)


def _setup(kappa, rho=1.0, n=2):
    return GeodesicSetup.build(ModelSpace.from_curvature(kappa, n), rho, rho * 1.1)


def _solve(kappa, m, rho=1.0, n=2):
    prof = CurvatureProfile.constant_curvature(_setup(kappa, rho, n), m)
    return solve_jacobi(prof, OdeGrid(m))


def _g(c, t):
    """Transverse Jacobi field for the constant block ``c``: W'' + c W = 0."""
    t = np.asarray(t, dtype=float)
    if c > 0:
        return np.sin(np.sqrt(c) * t) / np.sqrt(c)
    if c < 0:
        return np.sinh(np.sqrt(-c) * t) / np.sqrt(-c)
    return t


def _g_prime(c, t):
    t = np.asarray(t, dtype=float)
    if c > 0:
        return np.cos(np.sqrt(c) * t)
    if c < 0:
        return np.cosh(np.sqrt(-c) * t)
    return np.ones_like(t)


@pytest.mark.parametrize("kappa,rho", [(1.0, 1.0), (-1.0, 1.0), (4.0, 0.5), (0.0, 2.0)])
def test_jacobi_closed_form(kappa, rho):
    m = 256
    sol = _solve(kappa, m, rho, n=3)
    t = sol.grid.t
    c = kappa * rho**2
    ref = np.zeros((m + 1, 3, 3))
    ref[:, 0, 0] = t
    ref[:, 1, 1] = ref[:, 2, 2] = _g(c, t)
    np.testing.assert_allclose(sol.W, ref, atol=1e-9)
    np.testing.assert_allclose(sol.Wp[:, 1, 1], _g_prime(c, t), atol=1e-9)
    assert sol.wronskian_residual() < 1e-12


def test_jacobi_rk4_order():
    errs = []
    for m in (32, 64, 128):
        sol = _solve(1.0, m)
        errs.append(np.max(np.abs(sol.W[:, 1, 1] - np.sin(sol.grid.t))))
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(rates > 3.7)


def test_state_at_off_grid():
    sol = _solve(1.0, 64)
    W, V = sol.state_at(0.3337)
    assert W[1, 1] == pytest.approx(np.sin(0.3337), abs=1e-9)
    assert V[1, 1] == pytest.approx(np.cos(0.3337), abs=1e-9)
    with pytest.raises(DomainError):
        sol.state_at(1.2)


def test_hessian_closed_form_and_symmetry():
    sol = _solve(1.0, 128)
    ts = np.linspace(0.0, 1.0, 23)
    A = hessian_k(sol, ts)
    np.testing.assert_allclose(A, np.swapaxes(A, 1, 2), atol=1e-12)
    with np.errstate(divide="ignore", invalid="ignore"):
        ref = np.where(ts > 0, ts / np.tan(ts), 1.0)
    np.testing.assert_allclose(A[:, 1, 1], ref, atol=1e-8)
    np.testing.assert_allclose(A[:, 0, 0], 1.0, atol=1e-12)
    np.testing.assert_allclose(hessian_k(sol, 0.0), np.eye(2))


@settings(max_examples=25, deadline=None)
@given(
    a=st.floats(-2.0, 2.0),
    b=st.floats(-2.0, 2.0),
    d=st.floats(-2.0, 2.0),
    slope=st.floats(-1.0, 1.0),
)
def test_hessian_symmetric_for_generic_profiles(a, b, d, slope):
    base = np.array([[a, b], [b, d]])
    prof = CurvatureProfile.from_callable(lambda t: base * (1.0 + slope * t), 64)
    sol = solve_jacobi(prof, OdeGrid(64))
    A = hessian_k(sol, np.linspace(0.05, 1.0, 9))
    assert np.max(np.abs(A - np.swapaxes(A, 1, 2))) < 1e-7
    assert sol.wronskian_residual() < 1e-10


def test_riccati_residual_is_second_order():
    r = [riccati_residual(_solve(1.0, m)) for m in (32, 64, 128)]
    assert r[0] / r[1] == pytest.approx(4.0, rel=0.1)
    assert r[1] / r[2] == pytest.approx(4.0, rel=0.1)


def test_conjugate_point_detected_between_nodes():
    # sqrt(12) t crosses pi at t = 0.9069, between grid nodes
    prof = CurvatureProfile.from_callable(lambda t: np.diag([0.0, 12.0]), 64)
    with pytest.raises(ConjugatePointError):
        solve_jacobi(prof, OdeGrid(64))


def test_grid_needs_enough_points():
    with pytest.raises(DomainError):
        OdeGrid(8)


def test_k_tilde_closed_form():
    """``Kt = diag(0, 1/u - sqrt(c) cot(sqrt(c) u))`` for a constant block ``c``."""
    c = 1.0
    fam = build_K_family(_solve(c, 256))
    u = 1.0 - fam.grid.t
    with np.errstate(divide="ignore", invalid="ignore"):
        ref = np.where(u > 0, 1.0 / u - np.sqrt(c) / np.tan(np.sqrt(c) * u), 0.0)
    np.testing.assert_allclose(fam.K_tilde[:, 1, 1], ref, atol=1e-8)
    np.testing.assert_allclose(fam.K_tilde[:, 0, 0], 0.0, atol=1e-8)
    assert np.all(np.isnan(fam.K[-1]))


def test_k_tilde_series_matches_direct_near_the_switch():
    sol = _solve(1.0, 256)
    t = 1.0 - 2e-3
    np.testing.assert_allclose(k_tilde_direct(sol, t), k_tilde_series(sol.profile, t), atol=1e-8)
    with pytest.raises(DomainError):
        k_tilde_direct(sol, 1.0)


def test_k_tilde_vanishes_at_one():
    # (u/3) R(1) - (u^2/4) R'(1) is zero at u = 0 for any profile
    prof = CurvatureProfile.from_callable(lambda t: np.diag([t, 1.0 + t**2]), 64)
    np.testing.assert_allclose(k_tilde_series(prof, 1.0), 0.0, atol=1e-15)


def test_k_tilde_series_second_order_term():
    # R(t) = t I on the reversed time: Kt(1 - u) = u/3 - u^2/4 + O(u^3)
    prof = CurvatureProfile.from_callable(lambda t: t * np.eye(2), 4096)
    sol = solve_jacobi(prof, OdeGrid(4096))
    u = 0.05
    direct = k_tilde_direct(sol, 1.0 - u)[0, 0]
    assert direct == pytest.approx(u / 3 - u * u / 4, abs=5 * u**3)


@pytest.mark.parametrize("kappa", [1.0, -1.0, 0.0])
def test_m_matches_f_over_f0(kappa):
    fam = build_K_family(_solve(kappa, 256))
    assert fam.m_residual() < 1e-7
    # closed form M(t) = diag(1 - t, g(1 - t) / g(1))
    t = fam.grid.t
    np.testing.assert_allclose(fam.M[:, 1, 1], _g(kappa, 1 - t) / _g(kappa, 1.0), atol=1e-7)
    np.testing.assert_allclose(fam.M[:, 0, 0], 1 - t, atol=1e-12)
    lo, hi = fam.n_bounds()
    assert lo >= 1.0 and hi >= 1.0


def test_build_K_family_rejects_bad_switch():
    sol = _solve(1.0, 64)
    with pytest.raises(DomainError):
        build_K_family(sol, switch_delta=0.7)
    with pytest.raises(DomainError):
        build_K_family(sol, grid=OdeGrid(32))
