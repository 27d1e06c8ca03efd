"""Model spaces, distance Hessian and the tube assumptions."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from geospec.errors import ConjugatePointError, DomainError
from geospec.geometry import (
    CurvatureProfile,
    GeodesicSetup,
    ModelSpace,
    RicciData,
    check_assumptions,
    dist_hessian_eigs,
    max_admissible_radius,
)

# root of s cot s = 1/2, from an independent 30-digit mpmath solve
S_STAR = 1.16556118520721130683
# s cot s at s = 1.1 and 1.3 (mpmath)
EIG_11 = 0.559864915762970770105
EIG_13 = 0.360900340503462692339

SPACES = [
    ModelSpace("flat", 0.0, 2),
    ModelSpace("sphere", 1.0, 2),
    ModelSpace("hyperbolic", -1.0, 2),
    ModelSpace("sphere", 4.0, 3),
    ModelSpace("hyperbolic", -0.25, 3),
]
IDS = [f"{s.kind}{s.kappa_curv:g}n{s.n}" for s in SPACES]

seeds = st.integers(min_value=0, max_value=2**32 - 1)


def _tangent(space, rng, p, scale):
    """Random tangent vector kept well inside the injectivity radius."""
    v = space.random_tangent(rng, p, scale=scale)
    if space.kind == "sphere":
        lim = 0.45 * space.injectivity_radius
        v = v * min(1.0, lim / max(float(space.norm(v)), 1e-12))
    return v


@pytest.mark.parametrize("kind,kappa", [("sphere", -1.0), ("flat", 1.0), ("hyperbolic", 0.0)])
def test_kind_must_match_curvature_sign(kind, kappa):
    with pytest.raises(DomainError):
        ModelSpace(kind, kappa, 2)


def test_dimension_one_is_rejected():
    with pytest.raises(DomainError, match="n = 1"):
        ModelSpace("sphere", 1.0, 1)


def test_from_curvature_picks_kind():
    assert ModelSpace.from_curvature(0, 2).kind == "flat"
    assert ModelSpace.from_curvature(2.0, 2).kind == "sphere"
    assert ModelSpace.from_curvature(-2.0, 2).kind == "hyperbolic"


@pytest.mark.parametrize("space", SPACES, ids=IDS)
def test_base_point_and_frame(space):
    x = space.base_point()
    E = space.base_frame()
    np.testing.assert_allclose(space.project_point(x), x, atol=1e-14)
    gram = np.einsum("di,d,dj->ij", E, space.metric_signs, E)
    np.testing.assert_allclose(gram, np.eye(space.n), atol=1e-14)
    np.testing.assert_allclose(space.inner(x[None], E.T), 0.0, atol=1e-14)


@pytest.mark.parametrize("space", SPACES, ids=IDS)
@settings(max_examples=40, deadline=None)
@given(seed=seeds)
def test_exp_log_round_trip(space, seed):
    rng = np.random.default_rng(seed)
    p = space.random_point(rng, spread=0.7)
    v = _tangent(space, rng, p, 0.8)
    q = space.exp_map(p, v)
    np.testing.assert_allclose(space.log_map(p, q), v, atol=1e-9)
    assert space.dist(p, q) == pytest.approx(space.norm(v), abs=1e-9)


@pytest.mark.parametrize("space", SPACES, ids=IDS)
@settings(max_examples=40, deadline=None)
@given(seed=seeds)
def test_parallel_transport_is_an_isometry(space, seed):
    rng = np.random.default_rng(seed)
    p = space.random_point(rng, spread=0.6)
    q = space.exp_map(p, _tangent(space, rng, p, 0.6))
    u = space.random_tangent(rng, p)
    w = space.random_tangent(rng, p)
    Pu = space.parallel_transport(p, q, u)
    Pw = space.parallel_transport(p, q, w)
    assert space.inner(Pu, Pw) == pytest.approx(space.inner(u, w), abs=1e-9)
    if space.kind != "flat":
        assert abs(space.inner(q, Pu)) < 1e-9


@pytest.mark.parametrize("space", SPACES, ids=IDS)
def test_transport_carries_velocity_to_velocity(space):
    rng = np.random.default_rng(3)
    p = space.random_point(rng, spread=0.5)
    v = _tangent(space, rng, p, 0.7)
    q = space.exp_map(p, v)
    # the velocity at q points away from p
    np.testing.assert_allclose(space.parallel_transport(p, q, v), -space.log_map(q, p), atol=1e-9)


def test_sphere_distance_closed_form():
    space = ModelSpace("sphere", 4.0, 2)
    x = space.base_point()
    for theta in (0.1, 1.0, 1.5):
        q = space.exp_map(x, np.array([0.0, theta, 0.0]))
        # on a sphere of radius 1/2 the arc length equals the tangent length
        assert space.dist(x, q) == pytest.approx(theta, rel=1e-12)
        np.testing.assert_allclose(np.linalg.norm(q), 0.5, rtol=1e-14)


def test_sphere_exp_beyond_pi_raises():
    space = ModelSpace("sphere", 1.0, 2)
    with pytest.raises(DomainError):
        space.exp_map(space.base_point(), np.array([0.0, np.pi + 0.1, 0.0]))


def test_sphere_log_of_antipode_raises():
    space = ModelSpace("sphere", 1.0, 2)
    x = space.base_point()
    with pytest.raises(DomainError):
        space.log_map(x, -x)


def test_hyperboloid_constraint():
    space = ModelSpace("hyperbolic", -1.0, 3)
    pts = space.random_point(np.random.default_rng(0), size=50, spread=2.0)
    # the Minkowski form cancels terms of size |p|^2, so rounding scales with it
    scale = np.sum(pts**2, axis=-1)
    assert np.all(np.abs(space.inner(pts, pts) + 1.0) <= 1e-14 * scale + 1e-15)


def test_dist_hessian_eigs_closed_forms():
    s = np.array([0.0, 0.3, 1.0, 1.1])
    _, flat = dist_hessian_eigs(ModelSpace("flat", 0.0, 2), s)
    np.testing.assert_array_equal(flat, 1.0)
    _, sph = dist_hessian_eigs(ModelSpace("sphere", 1.0, 2), s)
    with np.errstate(divide="ignore", invalid="ignore"):
        ref = np.where(s > 0, s / np.tan(s), 1.0)
    np.testing.assert_allclose(sph, ref, rtol=1e-13)
    assert sph[-1] == pytest.approx(EIG_11, rel=1e-13)
    _, hyp = dist_hessian_eigs(ModelSpace("hyperbolic", -1.0, 2), s)
    with np.errstate(divide="ignore", invalid="ignore"):
        ref = np.where(s > 0, s / np.tanh(s), 1.0)
    np.testing.assert_allclose(hyp, ref, rtol=1e-13)


def test_dist_hessian_conjugate_locus():
    with pytest.raises(ConjugatePointError):
        dist_hessian_eigs(ModelSpace("sphere", 1.0, 2), np.pi)
    with pytest.raises(DomainError):
        dist_hessian_eigs(ModelSpace("sphere", 1.0, 2), -0.1)


def test_max_admissible_radius():
    assert max_admissible_radius(ModelSpace("sphere", 1.0, 2)) == pytest.approx(S_STAR, abs=1e-12)
    # scales with the curvature radius
    assert max_admissible_radius(ModelSpace("sphere", 4.0, 2)) == pytest.approx(S_STAR / 2, abs=1e-12)
    assert max_admissible_radius(ModelSpace("hyperbolic", -1.0, 2)) == np.inf


def test_geodesic_setup():
    setup = GeodesicSetup.build(ModelSpace("sphere", 1.0, 2), 1.0, 1.1)
    assert setup.space.dist(setup.x, setup.y) == pytest.approx(1.0, abs=1e-14)
    np.testing.assert_allclose(setup.geodesic(1.0), setup.y, atol=1e-14)
    np.testing.assert_allclose(setup.xi_frame, [1.0, 0.0], atol=1e-14)
    mid = setup.geodesic(0.5)
    assert setup.space.dist(setup.x, mid) == pytest.approx(0.5, abs=1e-14)


@pytest.mark.parametrize("rho,r_tube", [(0.0, 1.0), (1.0, 1.0), (1.2, 1.1)])
def test_geodesic_setup_rejects(rho, r_tube):
    with pytest.raises(DomainError):
        GeodesicSetup.build(ModelSpace("sphere", 1.0, 2), rho, r_tube)


def test_ricci_operator():
    np.testing.assert_allclose(
        RicciData.from_space(ModelSpace("sphere", 2.0, 3)).ricci_operator, 4.0 * np.eye(3)
    )


def test_check_assumptions():
    ok = check_assumptions(GeodesicSetup.build(ModelSpace("sphere", 1.0, 2), 1.0, 1.1))
    assert ok.passed
    assert ok.inf_tangential_eig == pytest.approx(EIG_11, rel=1e-12)
    bad = check_assumptions(GeodesicSetup.build(ModelSpace("sphere", 1.0, 2), 1.0, 1.3))
    assert not bad.passed
    assert bad.clauses == {"clause-1": True, "clause-2": False}
    assert bad.inf_tangential_eig == pytest.approx(EIG_13, rel=1e-12)
    assert any("clause (2)" in m for m in bad.messages)
    flat = check_assumptions(GeodesicSetup.build(ModelSpace("flat", 0.0, 2), 3.0, 50.0))
    assert flat.passed


@pytest.mark.parametrize("kappa", [1.0, -1.0, 0.0])
def test_constant_curvature_profile(kappa):
    setup = GeodesicSetup.build(ModelSpace.from_curvature(kappa, 3), 0.8, 1.0)
    prof = CurvatureProfile.constant_curvature(setup, 32)
    expected = np.diag([0.0, kappa * 0.64, kappa * 0.64])
    np.testing.assert_allclose(prof.values, np.broadcast_to(expected, (33, 3, 3)), atol=1e-14)
    np.testing.assert_allclose(prof.at(0.37), expected, atol=1e-14)
    np.testing.assert_allclose(prof.derivative(1.0), 0.0, atol=1e-12)


def test_profile_rejects_asymmetric():
    vals = np.zeros((17, 2, 2))
    vals[:, 0, 1] = 1.0
    with pytest.raises(DomainError):
        CurvatureProfile(vals)


def test_profile_interpolation_is_linear():
    prof = CurvatureProfile.from_callable(lambda t: np.diag([t, 2 * t]), 16)
    np.testing.assert_allclose(prof.at(0.3), np.diag([0.3, 0.6]), atol=1e-14)
    np.testing.assert_allclose(prof.derivative(1.0), np.diag([1.0, 2.0]), atol=1e-12)
