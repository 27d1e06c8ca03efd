"""Trial functional, H-derivative, COH coefficient and the Monte Carlo estimators."""

import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from geospec.bridge import (
    BridgeConfig,
    BridgePath,
    StepSizeWarning,
    exact_flat_bridge,
    sample_bridges,
)
from geospec.errors import DegenerateSampleError, DomainError
from geospec.geometry import GeodesicSetup, ModelSpace
from geospec.pathops import build_bundle, compute_e0
from geospec.semiclassical import (
    CONVERGENCE_COLUMNS,
    CutoffSpec,
    auto_m_path,
    build_trial,
    cept_diagnostic,
    coh_batch,
    coh_matrix,
    convergence_study,
    derive_seed,
    estimate_rayleigh,
    estimate_xi,
    eval_DF,
    eval_F,
    fsum_mean,
    geodesic_to_target,
    ground_state_gap_check,
    lsi_diagnostic,
    lsi_sides,
    path_hessians,
)
from geospec.semiclassical import _coh_M

FLAT = GeodesicSetup.build(ModelSpace("flat", 0.0, 2), 1.0, 1.1)
SPHERE = GeodesicSetup.build(ModelSpace("sphere", 1.0, 2), 1.0, 1.1)

# E[X^2 log X^2] for a standard normal X: 2 - euler_gamma - log 2 (mpmath)
GAUSS_ENT = 0.729637093492427


@pytest.fixture(autouse=True)
def _quiet_step_warning():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", StepSizeWarning)
        yield


@pytest.fixture(scope="module")
def sphere_trial():
    return build_trial(SPHERE, m=200)


@pytest.fixture(scope="module")
def flat_trial():
    return build_trial(FLAT, m=200)


def _geodesic_path(setup, m):
    t = np.arange(m + 1) / m
    inc = np.tile(setup.xi_frame / m, (m, 1))
    return BridgePath(
        BridgeConfig(1.0, max(m, 50)),
        setup,
        setup.geodesic(t),
        inc,
        np.zeros_like(inc),
        geodesic_to_target(setup, m),
    )


def test_derive_seed_is_stable():
    # frozen values pin the seed derivation across releases
    assert derive_seed(0, 0, 0) == 15793235383387715774
    assert derive_seed(0, 1, 0) == 5836529245451711556
    assert derive_seed(7, 0, 0) == 16920295385781661272
    assert len({derive_seed(1, k, j) for k in range(5) for j in range(3)}) == 15


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=60), st.randoms())
def test_fsum_mean_is_order_independent(xs, rnd):
    ys = list(xs)
    rnd.shuffle(ys)
    assert fsum_mean(xs) == fsum_mean(ys)


def test_fsum_mean_empty():
    with pytest.raises(DegenerateSampleError):
        fsum_mean([])


def test_auto_m_path():
    assert auto_m_path(16) == 200
    assert auto_m_path(64) == 640
    assert auto_m_path(256) == 2560
    assert auto_m_path(20.01) == 201


def test_trial_function(sphere_trial):
    tr = sphere_trial
    assert tr.phi.is_mean_zero()
    assert tr.phi.norm() == pytest.approx(1.0, abs=1e-12)
    assert tr.e0 == pytest.approx(compute_e0(tr.bundle.T).e0, abs=1e-14)
    assert tr.norm_S_sq == pytest.approx(tr.e0, abs=1e-5)
    assert tr.norm_IT_sq == pytest.approx(tr.e0**2, abs=1e-8)
    assert not tr.shortfall
    # the bottom mode is transverse and proportional to cos(pi t)
    s = (np.arange(200) + 0.5) / 200
    ref = np.sqrt(2) * np.cos(np.pi * s)
    c = np.mean(tr.phi.values[:, 1] * ref)
    assert abs(c) == pytest.approx(1.0, abs=1e-3)
    again = build_trial(SPHERE, m=200)
    np.testing.assert_array_equal(again.phi.values, tr.phi.values)


def test_cutoff_profile():
    cut = CutoffSpec(0.5)
    np.testing.assert_allclose(cut.chi([0.0, 1.0, 1.5, 2.0, 3.0]), [1, 1, 0.5, 0, 0])
    assert np.max(np.abs(cut.dchi(np.linspace(0, 3, 3001)))) == pytest.approx(1.5)
    assert cut.lipschitz == pytest.approx(3.0)
    assert cut(0.75) == pytest.approx(0.5)
    with pytest.raises(DomainError):
        CutoffSpec(0.0)


@settings(max_examples=60, deadline=None)
@given(st.floats(0, 3), st.floats(0, 3))
def test_cutoff_is_lipschitz(a, b):
    assert abs(CutoffSpec.chi(a) - CutoffSpec.chi(b)) <= 1.5 * abs(a - b) + 1e-12


def test_flat_derivative_is_the_main_term(flat_trial):
    b = sample_bridges(BridgeConfig(16.0, 200, 3), FLAT, 30)
    DF, rem = eval_DF(b, flat_trial, 16.0)
    np.testing.assert_allclose(DF, np.broadcast_to(4.0 * flat_trial.phi.values, DF.shape), atol=1e-12)
    np.testing.assert_allclose(rem, 0.0, atol=1e-12)


def test_derivative_on_the_geodesic_is_the_main_term():
    """Along ``c`` the path-dependent part reduces to ``T phi``: remainder O(h)."""
    errs = []
    for m in (100, 200, 400):
        tr = build_trial(SPHERE, m=m)
        DF, rem = eval_DF(_geodesic_path(SPHERE, m), tr, 1.0)
        errs.append(np.sqrt(np.mean(np.sum(rem**2, axis=1))))
    assert errs[-1] < 2e-3
    assert errs[0] > errs[1] > errs[2]


def test_flat_F_has_unit_variance(flat_trial):
    b = exact_flat_bridge(BridgeConfig(64.0, 200, 5), FLAT, 6000)
    F = eval_F(b, flat_trial, 64.0)
    # Var F = lam * |phi|^2 / lam for a mean-zero unit phi
    assert np.var(F, ddof=1) == pytest.approx(1.0, abs=4 * math.sqrt(2 / 6000))
    assert abs(np.mean(F)) < 4 / math.sqrt(6000)
    single = eval_F(b.path(0), flat_trial, 64.0)
    assert single == pytest.approx(F[0])


def test_path_hessians_on_the_geodesic():
    H = path_hessians(SPHERE, geodesic_to_target(SPHERE, 50))
    s = 1.0 - np.arange(51) / 50
    with np.errstate(divide="ignore", invalid="ignore"):
        g = np.where(s > 0, s / np.tan(s), 1.0)
    np.testing.assert_allclose(H[:, 0, 0], 1.0, atol=1e-12)
    np.testing.assert_allclose(H[:, 1, 1], g, atol=1e-12)
    np.testing.assert_allclose(H[:, 0, 1], 0.0, atol=1e-12)


def test_flat_coh_equals_sinv_adj(flat_trial):
    """``Hess k = I`` and ``Ric = 0`` in flat space, so ``A(gamma) = (S^-1)*`` exactly."""
    b = sample_bridges(BridgeConfig(16.0, 200, 1), FLAT, 3)
    ref = flat_trial.bundle.S_inv_adj.matrix
    for i in range(3):
        assert coh_matrix(b.path(i), 16.0).distance_to(ref) < 1e-10


def test_coh_on_geodesic_converges_at_rate_one_over_lambda(sphere_trial):
    from geospec.semiclassical import _GeodesicPath

    ref = sphere_trial.bundle.S_inv_adj.matrix
    d = {lam: coh_matrix(_GeodesicPath(SPHERE, 200), lam).distance_to(ref) for lam in (64, 256, 1e9)}
    assert d[64] / d[256] == pytest.approx(4.0, rel=0.05)
    # with the Ricci term gone, what is left is the trapezoid/RK4 difference
    assert d[1e9] < 1e-4


def test_coh_rejects_paths_outside_the_tube():
    tgt = np.tile([1.2, 0.0], (51, 1))
    with pytest.raises(DomainError):
        _coh_M(SPHERE, tgt, 16.0)


def test_xi_estimate(sphere_trial):
    b = sample_bridges(BridgeConfig(64.0, 200, 11), SPHERE, 60)
    xi = estimate_xi(64.0, 60, SPHERE, batch=b)
    norms = coh_batch(b, 64.0, np.flatnonzero(b.in_tube))
    assert xi.xi_hat == pytest.approx(norms.max())
    assert xi.xi_hat > sphere_trial.bundle.S_inv_adj.op_norm() - 0.05
    assert set(xi.to_dict()) >= {"xi_hat", "quantiles", "std"}


def test_flat_exact_quotient_is_one(flat_trial):
    est = estimate_rayleigh(flat_trial, 64.0, 4000, CutoffSpec(0.55), setup=FLAT, seed=3,
                            drift_mode="exact_flat")
    assert abs(est.quotient_over_lambda - 1.0) < 3 * est.quotient_se
    assert est.quotient_se < 0.01
    assert est.acceptance == 1.0


def test_streaming_rayleigh_matches_batch(sphere_trial):
    cfg = BridgeConfig(16.0, 200, 21)
    batch = sample_bridges(cfg, SPHERE, 1200)
    a = estimate_rayleigh(sphere_trial, 16.0, 1200, CutoffSpec(0.55), batch=batch)
    b = estimate_rayleigh(sphere_trial, 16.0, 1200, CutoffSpec(0.55), setup=SPHERE, seed=21,
                          workers=2)
    assert a.to_dict() == pytest.approx(b.to_dict(), rel=1e-12, abs=1e-15)


def test_control_variate_reduces_the_error(sphere_trial):
    est = estimate_rayleigh(sphere_trial, 64.0, 2000, CutoffSpec(0.55), setup=SPHERE,
                            m_path=640, seed=4)
    assert est.control_beta == pytest.approx(1.0, abs=0.1)
    assert est.denominator_se < 0.2 * math.sqrt(2.0 / 2000) * est.denominator
    assert abs(est.quotient_over_lambda - sphere_trial.e0) < 0.03


def test_ground_state_check():
    lo = ground_state_gap_check(SPHERE, 4.0, 1000, seed=1)
    hi = ground_state_gap_check(SPHERE, 4096.0, 200, m_path=200, seed=1)
    assert lo.estimate > 0 and not lo.unsampled
    assert hi.unsampled and hi.estimate == 0.0
    assert lo.delta == pytest.approx(0.22)
    with pytest.raises(DomainError):
        ground_state_gap_check(SPHERE, 4.0, 10, delta=0.6)


def test_lsi_sides_gaussian_oracle():
    F = np.random.default_rng(0).standard_normal(200000)
    lhs, lse, rhs, rse = lsi_sides(F, np.ones_like(F), xi=1.0, lam=1.0)
    assert lhs == pytest.approx(GAUSS_ENT, abs=4 * lse)
    assert rhs == 2.0 and rse == 0.0
    lhs0, *_ = lsi_sides(np.ones(10), np.ones(10), 1.0, 1.0)
    assert lhs0 == pytest.approx(0.0, abs=1e-15)


def test_lsi_diagnostic_holds(sphere_trial):
    rep = lsi_diagnostic(sphere_trial, 16.0, 300, SPHERE, CutoffSpec(0.55), seed=2)
    assert rep.holds
    assert rep.rhs > rep.lhs


def test_cept_diagnostic():
    b = sample_bridges(BridgeConfig(64.0, 64, 5), SPHERE, 20)
    bundle = build_bundle(SPHERE, 64)
    rep = cept_diagnostic(b, 64.0, bundle, n_paths=10)
    assert rep.ratios.size == 10
    assert np.all(rep.sup_C > 0)
    assert rep.spread[0] <= 1.0 <= rep.spread[1]
    with pytest.raises(DomainError):
        cept_diagnostic(b, 64.0, build_bundle(SPHERE, 32))


def test_convergence_study_small():
    run = convergence_study(SPHERE, [8.0, 16.0], 600, seed=3, xi_paths=20)
    assert [list(r) for r in run.rows] == [CONVERGENCE_COLUMNS] * 2
    for r in run.rows:
        assert r["lower_diag"] == pytest.approx(1.0 / r["xi_hat"] ** 2)
        assert r["m_path"] == 200
    again = convergence_study(SPHERE, [8.0, 16.0], 600, seed=3, xi_paths=20)
    assert again.rows == run.rows
