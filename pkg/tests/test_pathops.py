"""Discretised path-space operators and their factorisation identities."""

import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings
from hypothesis import strategies as st

from geospec.errors import DomainError
from geospec.geometry import GeodesicSetup, ModelSpace
from geospec.pathops import (
    GridFunction,
    adjoint_inverse_kernel,
    apply_U,
    apply_U_inv,
    build_bundle,
    build_J_eps,
    compute_e0,
    mean_zero_projector,
    richardson,
    verify_identities,
)
from geospec.pathops import _mean_zero_basis

# lowest mode of 1 - c sin^2-type form: e0 = 1 - kappa rho^2 / pi^2
E0_SPHERE = 0.898678816357662228556
# transverse spectrum 1 + 1/(k pi)^2 on hyperbolic space: top mode, bottom -> 1
E0_HYP_TOP = 1.10132118364233777144

GATED = (
    "SadjS_minus_IplusT",
    "SinvAdj_IplusT_minus_S",
    "S_Sinv_minus_I_offlast",
    "Sinv_S_minus_I_L20",
    "IplusT_inv_minus_Sinv_SinvAdj",
    "SinvAdj_f_minus_M",
    "I_plus_J0_minus_SinvAdj",
)


def _setup(kappa, n=2, rho=1.0):
    return GeodesicSetup.build(ModelSpace.from_curvature(kappa, n), rho, rho * 1.1)


@pytest.fixture(scope="module")
def bundles():
    return {
        (k, m): build_bundle(_setup(k), m) for k in (0.0, 1.0, -1.0) for m in (32, 64)
    }


def _quadrature_e0(c, m, transverse_only=False):
    """Independent assembly of the form h sum|phi|^2 - c h sum_i |Phi_i^perp|^2.

    Builds ``Phi = h * cumsum`` explicitly and restricts to mean-zero
    functions with an SVD null-space basis, one component at a time.
    """
    h = 1.0 / m
    L = np.tril(np.ones((m, m)), -1) * h  # Phi_i = h sum_{j<i} phi_j, i = 0..m-1
    Z = sla.null_space(np.ones((1, m)))
    radial = Z.T @ Z
    transverse = Z.T @ (np.eye(m) - c * L.T @ L) @ Z
    w_r = np.linalg.eigvalsh(radial)[0]
    w_t = np.linalg.eigvalsh(0.5 * (transverse + transverse.T))[0]
    return w_t if transverse_only else min(w_r, w_t)


def test_grid_function_basics():
    phi = GridFunction.from_callable(lambda s: np.stack([np.cos(np.pi * s), s], -1), 64)
    assert phi.m == 64 and phi.n == 2
    assert phi.norm() == pytest.approx(np.sqrt(phi.inner(phi)))
    assert not phi.is_mean_zero()
    nodal = apply_U(phi)
    np.testing.assert_allclose(nodal[0], 0.0)
    np.testing.assert_allclose(apply_U_inv(nodal).values, phi.values, atol=1e-13)
    with pytest.raises(DomainError):
        GridFunction(np.full((4, 2), np.nan))


def test_mean_zero_projector_and_basis():
    P = mean_zero_projector(16, 3)
    np.testing.assert_allclose(P @ P, P, atol=1e-14)
    np.testing.assert_allclose(P, P.T, atol=1e-15)
    Q = _mean_zero_basis(16, 3)
    np.testing.assert_allclose(Q.T @ Q, np.eye(45), atol=1e-13)
    np.testing.assert_allclose(Q @ Q.T, P, atol=1e-13)


def test_s_refuses_functions_with_mean(bundles):
    S = bundles[(1.0, 32)].S
    with pytest.raises(DomainError):
        S.apply(np.ones((32, 2)))
    phi = GridFunction.from_callable(lambda s: np.stack([np.cos(np.pi * s)] * 2, -1), 32)
    S.apply(phi)


@pytest.mark.parametrize("kappa", [0.0, 1.0, -1.0])
def test_identities_small_and_second_order(bundles, kappa):
    r32 = verify_identities(bundles[(kappa, 32)])
    r64 = verify_identities(bundles[(kappa, 64)])
    for k in GATED:
        assert r64[k] < 1e-4, k
        if r32[k] > 1e-11:
            assert r32[k] / r64[k] > 3.0, k
    assert r64["duality"] < 1e-4


def test_s_sinv_has_a_one_cell_defect(bundles):
    """``S S^-1 - I`` is exact off the last cell and rank ``n`` on it."""
    b = bundles[(1.0, 64)]
    D = b.S.matrix @ b.S_inv.matrix - np.eye(128)
    assert np.linalg.matrix_rank(D, tol=1e-8) == 2
    assert np.max(np.abs(D[:, :-2])) < 1e-12


def test_flat_operators_are_trivial(bundles):
    b = bundles[(0.0, 64)]
    P = mean_zero_projector(64, 2)
    np.testing.assert_allclose(b.T.matrix, 0.0, atol=1e-15)
    # S is an isometry of the mean-zero subspace and (S^-1)* = S
    np.testing.assert_allclose(b.S.matrix.T @ b.S.matrix, P, atol=1e-12)
    np.testing.assert_allclose(b.S_inv_adj.matrix, b.S.matrix, atol=1e-12)
    assert compute_e0(b.T).e0 == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("m", [32, 64, 128])
def test_e0_matches_independent_quadrature(m):
    b = build_bundle(_setup(1.0), m)
    assert compute_e0(b.T).e0 == pytest.approx(_quadrature_e0(1.0, m), abs=1e-11)


def test_sphere_e0_richardson():
    ms = [64, 128, 256]
    e = [compute_e0(build_bundle(_setup(1.0), m).T).e0 for m in ms]
    assert e[0] < e[1] < e[2] < E0_SPHERE
    assert richardson(e, ms) == pytest.approx(E0_SPHERE, abs=1e-6)


def test_sphere_e0_independent_of_dimension():
    e2 = compute_e0(build_bundle(_setup(1.0, n=2), 64).T)
    e3 = compute_e0(build_bundle(_setup(1.0, n=3), 64).T)
    assert e3.e0 == pytest.approx(e2.e0, abs=1e-12)
    # the transverse minimum is doubly degenerate in n = 3
    assert e3.spectrum[1] == pytest.approx(e3.spectrum[0], abs=1e-10)


def test_hyperbolic_e0_radial_and_transverse():
    ms = [64, 128, 256]
    reps = [compute_e0(build_bundle(_setup(-1.0), m).T) for m in ms]
    for r in reps:
        # the radial block carries no curvature, so the minimum is exactly 1
        assert r.e0 == pytest.approx(1.0, abs=1e-12)
    tr = [r.e0_transverse for r in reps]
    assert E0_HYP_TOP >= tr[0] > tr[1] > tr[2] > 1.0
    assert richardson(tr, ms) == pytest.approx(1.0, abs=1e-6)
    assert tr[-1] == pytest.approx(_quadrature_e0(-1.0, 256, transverse_only=True), abs=1e-11)
    top = np.linalg.eigvalsh(np.eye(512) + build_bundle(_setup(-1.0), 256).T.matrix)[-1]
    assert top == pytest.approx(E0_HYP_TOP, abs=1e-4)


def test_duality_gap(bundles):
    for kappa in (0.0, 1.0, -1.0):
        b = bundles[(kappa, 64)]
        rep = compute_e0(b.T, b.S_inv_adj)
        assert abs(rep.duality_gap) < 1e-4
        assert rep.inv_norm_sq == pytest.approx(rep.e0, abs=1e-4)


def test_kernel_invariant_under_right_multiplication(bundles):
    F = bundles[(1.0, 32)].family.f
    G = np.array([[2.0, 0.3], [-0.1, 0.7]])
    np.testing.assert_allclose(
        adjoint_inverse_kernel(F @ G), adjoint_inverse_kernel(F), atol=1e-10
    )


def test_kernel_needs_vanishing_endpoint(bundles):
    F = bundles[(1.0, 32)].family.f.copy()
    F[-1] = np.eye(2)
    with pytest.raises(DomainError):
        adjoint_inverse_kernel(F)


def test_j_eps_reduces_to_j0(bundles):
    b = bundles[(1.0, 64)]
    J = build_J_eps(b.family, np.zeros((64, 2, 2)))
    np.testing.assert_allclose(J.matrix, b.J0.matrix, atol=1e-13)
    assert J.meta["eps"] == 0.0 and J.meta["small_eps_regime"]


def test_j_eps_is_lipschitz_in_eps(bundles):
    b = bundles[(1.0, 64)]
    s = b.family.grid.midpoints
    shape = np.cos(3 * s)[:, None, None] * np.array([[1.0, 0.4], [0.4, -0.5]])
    shape /= np.max(np.linalg.norm(shape, 2, axis=(1, 2)))
    eps = np.array([1e-3, 1e-2, 1e-1])
    d = [np.linalg.norm(build_J_eps(b.family, e * shape).matrix - b.J0.matrix, 2) for e in eps]
    slope = np.polyfit(np.log(eps), np.log(d), 1)[0]
    assert slope == pytest.approx(1.0, abs=0.1)
    big = build_J_eps(b.family, 0.5 * shape)
    assert not big.meta["small_eps_regime"]


def test_j_eps_validation(bundles):
    fam = bundles[(1.0, 32)].family
    with pytest.raises(DomainError):
        build_J_eps(fam, None, delta_exp=1.2)
    bad = np.zeros((32, 2, 2))
    bad[:, 0, 1] = 1.0
    with pytest.raises(DomainError):
        build_J_eps(fam, bad)
    with pytest.raises(DomainError):
        build_J_eps(fam, np.zeros((31, 2, 2)))


@settings(max_examples=30, deadline=None)
@given(
    v=st.floats(-5, 5),
    c2=st.floats(-50, 50),
    c4=st.floats(-50, 50),
    m0=st.sampled_from([8, 16, 32]),
)
def test_richardson_exact_on_even_expansions(v, c2, c4, m0):
    ms = [m0, 2 * m0, 4 * m0]
    vals = [v + c2 / m**2 + c4 / m**4 for m in ms]
    assert richardson(vals, ms) == pytest.approx(v, abs=1e-9 * (1 + abs(c2) + abs(c4)))


def test_richardson_validation():
    with pytest.raises(DomainError):
        richardson([1.0, 2.0], [16, 48])
    with pytest.raises(DomainError):
        richardson([1.0], [16])
