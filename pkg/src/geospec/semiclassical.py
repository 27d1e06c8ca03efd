"""Monte Carlo side of the semiclassical limit.

The trial functional is ``F(gamma) = sqrt(lam) * (int phi . db - <xi, int phi>)``
for the bottom eigenvector ``phi`` of ``I + T``.  Its H-derivative on a
constant curvature space is, with ``Y(u) = int_u^1 phi(s) db(s)^T`` and
``Z = Y - Y^T``,

    D0F'(t) = sqrt(lam) P0[ phi(t) + kappa int_t^1 Z(u) o db(u) ],

which reduces to ``sqrt(lam) (I + T) phi`` along the geodesic.  The
difference is returned as the remainder.

The COH coefficient along a path uses the short-time substitution
``grad V / lam ~ -Hess k / (1 - t)``, so

    Kt(gamma)_t = -(H(gamma_t) - I) / (1 - t) - Ric / (2 lam),

integrated by the trapezoidal Magnus rule for ``N`` and fed to the same
kernel as ``(S^-1)*``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .bridge import (
    BridgeBatch,
    BridgeConfig,
    BridgePath,
    StepSizeWarning,
    map_bridge_batches,
    resample_cells,
    sample_bridges,
    tube_statistics,
)
from .errors import DegenerateSampleError, DomainError
from .geometry import GeodesicSetup, RicciData, dist_hessian_eigs
from .pathops import (
    GridFunction,
    OperatorBundle,
    adjoint_inverse_kernel,
    build_bundle,
    compute_e0,
    mean_zero_projector,
)

__all__ = [
    "TrialFunction",
    "CutoffSpec",
    "CohCoefficient",
    "RayleighEstimate",
    "XiEstimate",
    "GroundStateCheck",
    "LSIReport",
    "CeptReport",
    "CutoffWarning",
    "derive_seed",
    "fsum_mean",
    "build_trial",
    "eval_F",
    "eval_DF",
    "path_hessians",
    "coh_matrix",
    "coh_batch",
    "estimate_xi",
    "estimate_rayleigh",
    "convergence_study",
    "ground_state_gap_check",
    "lsi_sides",
    "lsi_diagnostic",
    "cept_diagnostic",
    "CONVERGENCE_COLUMNS",
    "auto_m_path",
]

CONVERGENCE_COLUMNS = [
    "lambda",
    "upper_quotient",
    "upper_se",
    "lower_diag",
    "xi_hat",
    "e0_ref",
    "acceptance",
    "n_paths",
    "lower_diag_linear",
    "m_path",
]

XI_GRID = 200


def auto_m_path(lam: float, floor: int = 200) -> int:
    """Time steps with ``m / lambda >= 10``, never below ``floor``."""
    return max(int(floor), int(math.ceil(10.0 * float(lam))))


class CutoffWarning(UserWarning):
    """The cutoff is active on a large fraction of paths."""


def derive_seed(root: int, *tags: int) -> int:
    """A 64-bit seed determined by ``root`` and integer tags."""
    ss = np.random.SeedSequence([int(root)] + [int(t) for t in tags])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def fsum_mean(x) -> float:
    """Mean by compensated summation (order independent to rounding)."""
    x = np.asarray(x, dtype=float).ravel()
    if x.size == 0:
        raise DegenerateSampleError("mean of an empty sample")
    return math.fsum(x.tolist()) / x.size


def _fsum_var(x, mean=None) -> float:
    x = np.asarray(x, dtype=float).ravel()
    mu = fsum_mean(x) if mean is None else mean
    return math.fsum(((x - mu) ** 2).tolist()) / max(x.size - 1, 1)


# -- trial function -------------------------------------------------------


@dataclass
class TrialFunction:
    """Bottom eigenvector of ``I + T`` and its characteristic numbers.

    Attributes
    ----------
    phi : GridFunction
        Mean-zero, unit norm.
    psi : ndarray (m+1, n)
        Nodal values of ``U phi``.
    main_term : ndarray (m, n)
        ``(I + T) phi``.
    e0 : float
        Discrete bottom eigenvalue on this grid.
    norm_IT_sq : float
        ``|(I + T) phi|^2`` (equals ``e0^2`` for an exact eigenvector).
    norm_S_sq : float
        ``|S phi|^2`` (equals ``e0``).
    eps_quality : float
        ``max(| |(I+T) phi| - e0 |, | |S phi|^2 - e0 |)``.
    shortfall : bool
        The requested tolerance was not reached.
    """

    phi: GridFunction
    psi: np.ndarray = field(repr=False)
    main_term: np.ndarray = field(repr=False)
    e0: float
    norm_IT_sq: float
    norm_S_sq: float
    S_phi: np.ndarray = field(repr=False)
    eps_quality: float
    eps_requested: float
    shortfall: bool
    bundle: OperatorBundle = field(repr=False)

    @property
    def m(self) -> int:
        return self.phi.m

    @property
    def n(self) -> int:
        return self.phi.n

    def to_dict(self) -> dict:
        return {
            "e0": self.e0,
            "norm_IT_sq": self.norm_IT_sq,
            "norm_S_sq": self.norm_S_sq,
            "eps_quality": self.eps_quality,
            "eps_requested": self.eps_requested,
            "shortfall": self.shortfall,
            "m": self.m,
        }


def build_trial(source, eps: float = 1e-6, m: int | None = None) -> TrialFunction:
    """Trial function from an operator bundle (or a setup plus grid size)."""
    bundle = source if isinstance(source, OperatorBundle) else build_bundle(source, m)
    rep = compute_e0(bundle.T)
    v = rep.eigvec.copy()
    # deterministic sign: largest entry positive
    k = np.unravel_index(np.argmax(np.abs(v)), v.shape)
    v *= np.sign(v[k])
    v -= v.mean(axis=0)
    phi = GridFunction(v / np.sqrt(np.mean(np.sum(v**2, axis=1))))
    main = (bundle.I_plus_T @ phi.stacked).reshape(phi.m, phi.n)
    Sphi = bundle.S.apply(phi)
    nIT = float(np.mean(np.sum(main**2, axis=1)))
    nS = Sphi.norm() ** 2
    q = max(abs(np.sqrt(nIT) - rep.e0), abs(nS - rep.e0))
    psi = np.zeros((phi.m + 1, phi.n))
    psi[1:] = np.cumsum(phi.values, axis=0) / phi.m
    return TrialFunction(
        phi, psi, main, rep.e0, nIT, nS, Sphi.values, q, float(eps), bool(q > eps), bundle
    )


# -- cutoff ---------------------------------------------------------------


@dataclass(frozen=True)
class CutoffSpec:
    """Smooth step ``chi(u)``: 1 for ``u <= 1``, 0 for ``u >= 2``.

    Applied to ``u = sup_dist / kappa_cut``.  Between 1 and 2 it is
    ``1 - 3 v^2 + 2 v^3`` with ``v = u - 1``, whose slope is at most 3/2.
    """

    kappa_cut: float

    def __post_init__(self):
        if not self.kappa_cut > 0:
            raise DomainError("kappa_cut must be positive")

    @staticmethod
    def chi(u):
        v = np.clip(np.asarray(u, dtype=float) - 1.0, 0.0, 1.0)
        return 1.0 - 3.0 * v**2 + 2.0 * v**3

    @staticmethod
    def dchi(u):
        v = np.clip(np.asarray(u, dtype=float) - 1.0, 0.0, 1.0)
        return -6.0 * v + 6.0 * v**2

    @property
    def lipschitz(self) -> float:
        """Lipschitz constant of ``chi(sup_dist / kappa_cut)`` in ``sup_dist``."""
        return 1.5 / self.kappa_cut

    def __call__(self, sup_dist):
        return self.chi(np.asarray(sup_dist) / self.kappa_cut)


# H^1_0 norm of the derivative of the sup-distance is at most
# sup_t sqrt(t (1 - t)) = 1/2 (unit-speed variation of one time slice).
_SUPDIST_GRAD_BOUND = 0.5


# -- F and D0F ------------------------------------------------------------


def _phi_on(trial: TrialFunction, m: int) -> np.ndarray:
    return resample_cells(trial.phi.values, m)


def eval_F(paths, trial: TrialFunction, lam: float, cutoff: CutoffSpec | None = None):
    """``sqrt(lam) (int phi . db - <xi, int phi>)``, times ``chi`` if a cutoff is given."""
    inc = paths.increments
    phi = _phi_on(trial, inc.shape[-2])
    xi = paths.setup.xi_frame
    F = np.sqrt(lam) * (np.einsum("...in,in->...", inc, phi) - float(xi @ phi.mean(axis=0)))
    if cutoff is not None:
        sup = paths.sup_dist if isinstance(paths, BridgeBatch) else paths.sup_dist_to_geodesic
        F = F * cutoff(sup)
    return float(F) if np.ndim(F) == 0 else F


def eval_DF(paths, trial: TrialFunction, lam: float):
    """``D0F'`` on the grid and the remainder after the main term.

    Returns
    -------
    DF, remainder : ndarray, shape (m, n) or (N, m, n)
    """
    setup = paths.setup
    kappa = setup.space.kappa_curv
    single = isinstance(paths, BridgePath)
    inc = paths.increments[None] if single else paths.increments
    m = inc.shape[1]
    n = inc.shape[2]
    phi = _phi_on(trial, m)
    main = (
        trial.main_term
        if trial.m == m
        else resample_cells(trial.main_term, m)
    )
    # Y_k = sum_{l>k} phi_l db_l^T + phi_k db_k^T / 2 (midpoint rule)
    outer = np.einsum("ia,pib->piab", phi, inc)
    tail = np.cumsum(outer[:, ::-1], axis=1)[:, ::-1] - 0.5 * outer
    Z = tail - np.swapaxes(tail, -1, -2)
    g = kappa * np.einsum("piab,pib->pia", Z, inc)
    G = np.cumsum(g[:, ::-1], axis=1)[:, ::-1] - 0.5 * g
    raw = phi[None] + G
    raw = raw - raw.mean(axis=1, keepdims=True)
    DF = np.sqrt(lam) * raw
    rem = DF - np.sqrt(lam) * main[None]
    if single:
        return DF[0], rem[0]
    return DF, rem


# -- COH coefficient ------------------------------------------------------


def path_hessians(setup: GeodesicSetup, to_target: np.ndarray) -> np.ndarray:
    """Hessian of ``d(., y)^2 / 2`` at path points, in the path frame."""
    w = np.asarray(to_target, dtype=float)
    s = np.linalg.norm(w, axis=-1)
    _, g = dist_hessian_eigs(setup.space, s)
    rhat = np.where(s[..., None] > 0, w / np.maximum(s, 1e-300)[..., None], 0.0)
    n = w.shape[-1]
    eye = np.eye(n)
    return g[..., None, None] * eye + (1.0 - g)[..., None, None] * (
        rhat[..., :, None] * rhat[..., None, :]
    )


def _coh_M(setup, to_target, lam):
    """``M(gamma)`` along a batch of paths, shape (P, m+1, n, n)."""
    tgt = np.asarray(to_target, dtype=float)
    if tgt.ndim == 2:
        tgt = tgt[None]
    P, mp1, n = tgt.shape
    m = mp1 - 1
    h = 1.0 / m
    t = np.arange(mp1) / m
    if np.any(np.linalg.norm(tgt, axis=-1) >= setup.r_tube):
        raise DomainError("path leaves the tube; filter with tube_statistics first")
    H = path_hessians(setup, tgt)
    ric = RicciData.from_space(setup.space).ricci_operator
    Kt = np.empty((P, mp1, n, n))
    Kt[:, :m] = -(H[:, :m] - np.eye(n)) / (1.0 - t[:m])[None, :, None, None]
    Kt[:, m] = 2.0 * Kt[:, m - 1] - Kt[:, m - 2]
    Kt -= ric / (2.0 * lam)
    N = np.empty((P, mp1, n, n))
    N[:, 0] = np.eye(n)
    steps = sla.expm(0.5 * h * (Kt[:, :-1] + Kt[:, 1:]))
    for k in range(m):
        N[:, k + 1] = steps[:, k] @ N[:, k]
    M = (1.0 - t)[None, :, None, None] * N
    return M, Kt


@dataclass
class CohCoefficient:
    """``A(gamma) = I + J(gamma)`` on the path grid."""

    A: np.ndarray = field(repr=False)
    op_norm: float
    K: np.ndarray = field(repr=False)
    m: int
    n: int

    def distance_to(self, other: np.ndarray) -> float:
        return float(np.linalg.norm(self.A - other, 2))


def coh_matrix(path, lam: float) -> CohCoefficient:
    """COH coefficient along one path (or any object with ``to_target``)."""
    setup = path.setup
    tgt = path.to_target
    M, Kt = _coh_M(setup, tgt, lam)
    A = adjoint_inverse_kernel(M[0])
    m = M.shape[1] - 1
    n = M.shape[2]
    t = np.arange(m + 1) / m
    K = Kt[0].copy()
    K[:m] -= np.eye(n) / (1.0 - t[:m])[:, None, None]
    K[m] = np.nan
    return CohCoefficient(A, float(np.linalg.norm(A, 2)), K, m, n)


def geodesic_to_target(setup: GeodesicSetup, m: int) -> np.ndarray:
    """``to_target`` of the deterministic geodesic path, ``rho (1 - t) e_1``."""
    t = np.arange(m + 1) / m
    return (1.0 - t)[:, None] * setup.xi_frame[None]


class _GeodesicPath:
    def __init__(self, setup, m):
        self.setup = setup
        self.to_target = geodesic_to_target(setup, m)


def coh_batch(batch: BridgeBatch, lam: float, idx=None) -> np.ndarray:
    """Operator norms of ``A(gamma)`` for the selected paths."""
    idx = np.arange(batch.n_paths) if idx is None else np.asarray(idx)
    norms = np.empty(idx.size)
    chunk = 64
    for a in range(0, idx.size, chunk):
        sel = idx[a : a + chunk]
        M, _ = _coh_M(batch.setup, batch.to_target[sel], lam)
        for j in range(sel.size):
            norms[a + j] = np.linalg.norm(adjoint_inverse_kernel(M[j]), 2)
    return norms


@dataclass
class XiEstimate:
    """Largest COH operator norm over sampled tube paths."""

    lam: float
    xi_hat: float
    op_norms: np.ndarray = field(repr=False)
    quantiles: dict
    std: float
    n_accepted: int

    def to_dict(self) -> dict:
        return {
            "lambda": self.lam,
            "xi_hat": self.xi_hat,
            "quantiles": self.quantiles,
            "std": self.std,
            "n_accepted": self.n_accepted,
        }


def estimate_xi(
    lam: float,
    n_paths: int,
    setup: GeodesicSetup,
    m_path: int = 200,
    seed: int = 0,
    workers: int = 1,
    batch: BridgeBatch | None = None,
) -> XiEstimate:
    """Max of ``|A(gamma)|`` over accepted paths (an MC lower estimate of the esssup)."""
    if batch is None:
        cfg = BridgeConfig(lam, m_path, seed)
        batch = sample_bridges(cfg, setup, n_paths, workers=workers)
    rep = tube_statistics(batch)
    if rep.n_accepted < 100:
        warnings.warn(f"only {rep.n_accepted} tube paths for the xi estimate", RuntimeWarning)
    idx = rep.accepted_idx[:n_paths]
    norms = coh_batch(batch, lam, idx)
    qs = {f"q{int(q * 100):02d}": float(np.quantile(norms, q)) for q in (0.05, 0.5, 0.95)}
    return XiEstimate(float(lam), float(norms.max()), norms, qs, float(np.std(norms)), int(idx.size))


# -- Rayleigh quotient ----------------------------------------------------


@dataclass
class RayleighEstimate:
    """Monte Carlo Rayleigh quotient of the cut-off trial functional."""

    lam: float
    n_paths: int
    n_accepted: int
    acceptance: float
    numerator: float
    numerator_se: float
    denominator: float
    denominator_se: float
    denominator_raw: float
    control_beta: float
    quotient_over_lambda: float
    quotient_se: float
    main_term: float
    remainder_sq: float
    cross_term: float
    cutoff_contribution: float
    cutoff_active_fraction: float
    mean_F: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _ratio_se(a, b):
    """Delta-method SE of ``mean(a) / mean(b)`` from paired samples."""
    N = a.size
    ma, mb = fsum_mean(a), fsum_mean(b)
    va, vb = _fsum_var(a, ma), _fsum_var(b, mb)
    cov = math.fsum(((a - ma) * (b - mb)).tolist()) / max(N - 1, 1)
    r = ma / mb
    var = (va / mb**2 - 2 * r * cov / mb**2 + r**2 * vb / mb**2) / N
    return r, math.sqrt(max(var, 0.0))


def _rayleigh_samples(batch, trial, lam, cutoff):
    """Per-path pieces of the Rayleigh quotient for the accepted paths."""
    acc = np.flatnonzero(batch.in_tube)
    sub = batch.subset(acc)
    if acc.size == 0:
        z = np.zeros(0)
        return dict(Ft=z, num=z, cut=z, c2=z, rsq=z, cross=z, chi=z, Ec2=0.0, n_paths=batch.n_paths)
    F = eval_F(sub, trial, lam)
    DF, rem = eval_DF(sub, trial, lam)
    m = DF.shape[1]
    h = 1.0 / m
    dfn = np.sqrt(h * np.sum(DF**2, axis=(1, 2)))
    if cutoff is None:
        chi = np.ones_like(F)
        dchi = np.zeros_like(F)
    else:
        u = sub.sup_dist / cutoff.kappa_cut
        chi = cutoff.chi(u)
        dchi = np.abs(cutoff.dchi(u)) / cutoff.kappa_cut * _SUPDIST_GRAD_BOUND
    num_s = (chi * dfn + np.abs(F) * dchi) ** 2
    # control variate: the Gaussian functional sqrt(lam) sum (S phi)_i . dW_i
    # has an exactly known second moment and tracks F to O(lam^-1/2)
    a = resample_cells(trial.S_phi, m)
    c = np.sqrt(lam) * np.einsum("pia,ia->p", sub.noise, a)
    main_vec = np.sqrt(lam) * resample_cells(trial.main_term, m)
    return dict(
        Ft=chi * F,
        num=num_s,
        cut=num_s - (chi * dfn) ** 2,
        c2=c**2,
        rsq=h * np.sum(rem**2, axis=(1, 2)),
        cross=2 * h * np.einsum("pia,ia->p", rem, main_vec),
        chi=chi,
        Ec2=lam * float(np.sum(np.sum(a**2, axis=1) * sub.noise_var)),
        n_paths=batch.n_paths,
    )


def _rayleigh_combine(parts, trial, lam):
    cat = {k: np.concatenate([p[k] for p in parts]) for k in parts[0] if k not in ("Ec2", "n_paths")}
    n_total = sum(p["n_paths"] for p in parts)
    N = cat["Ft"].size
    if N < 2:
        raise DegenerateSampleError("fewer than two paths stayed in the tube")
    Ec2 = parts[0]["Ec2"]
    Ft, num_s, c2 = cat["Ft"], cat["num"], cat["c2"]
    mu = fsum_mean(Ft)
    den_raw = (Ft - mu) ** 2 * (N / (N - 1))
    vc = _fsum_var(c2)
    beta = 0.0
    if vc > 0:
        beta = math.fsum(((den_raw - fsum_mean(den_raw)) * (c2 - fsum_mean(c2))).tolist())
        beta /= (N - 1) * vc
    den_s = den_raw - beta * (c2 - Ec2)
    q, qse = _ratio_se(num_s, den_s)
    return RayleighEstimate(
        lam=float(lam),
        n_paths=int(n_total),
        n_accepted=int(N),
        acceptance=N / n_total,
        numerator=fsum_mean(num_s),
        numerator_se=math.sqrt(_fsum_var(num_s) / N),
        denominator=fsum_mean(den_s),
        denominator_se=math.sqrt(_fsum_var(den_s) / N),
        denominator_raw=fsum_mean(den_raw),
        control_beta=beta,
        quotient_over_lambda=q / lam,
        quotient_se=qse / lam,
        main_term=float(lam * trial.norm_IT_sq),
        remainder_sq=fsum_mean(cat["rsq"]),
        cross_term=fsum_mean(cat["cross"]),
        cutoff_contribution=fsum_mean(cat["cut"]),
        cutoff_active_fraction=float(np.mean(cat["chi"] < 1.0)),
        mean_F=mu,
    )


def estimate_rayleigh(
    trial: TrialFunction,
    lam: float,
    n_paths: int,
    cutoff: CutoffSpec | None,
    setup: GeodesicSetup | None = None,
    m_path: int = 200,
    seed: int = 0,
    drift_mode: str = "semiclassical",
    workers: int = 1,
    batch: BridgeBatch | None = None,
) -> RayleighEstimate:
    """Rayleigh quotient ``E|D0 F~|^2 / (lam Var F~)`` over tube paths.

    The numerator uses the product rule for ``chi F`` with the cutoff
    gradient bounded through its Lipschitz constant; that bound is reported
    as ``cutoff_contribution``.  The denominator subtracts the sample mean
    and is variance-reduced by a Gaussian control variate.

    Without a pre-sampled ``batch`` the paths are drawn and reduced one
    batch at a time, so memory does not grow with ``n_paths * m_path``.
    The result equals the one obtained from the concatenated batch.
    """
    if batch is not None:
        parts = [_rayleigh_samples(batch, trial, lam, cutoff)]
    else:
        if setup is None:
            raise DomainError("need a setup or a pre-sampled batch")
        cfg = BridgeConfig(lam, m_path, seed, drift_mode)
        parts = map_bridge_batches(
            lambda b: _rayleigh_samples(b, trial, lam, cutoff), cfg, setup, n_paths, workers
        )
    est = _rayleigh_combine(parts, trial, lam)
    if est.n_accepted < 500:
        warnings.warn("fewer than 500 accepted paths", RuntimeWarning)
    if est.cutoff_active_fraction > 0.2:
        warnings.warn(
            f"cutoff active on {est.cutoff_active_fraction:.0%} of paths: tube too narrow "
            f"for lambda = {lam}",
            CutoffWarning,
        )
    return est


# -- ground state -----------------------------------------------------------


@dataclass
class GroundStateCheck:
    lam: float
    delta: float
    estimate: float
    se: float
    active_fraction: float
    unsampled: bool
    n_accepted: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def ground_state_gap_check(
    setup: GeodesicSetup,
    lam: float,
    n_paths: int,
    delta: float | None = None,
    m_path: int = 200,
    seed: int = 0,
    workers: int = 1,
    batch: BridgeBatch | None = None,
) -> GroundStateCheck:
    """Rayleigh quotient of ``chi(sup_dist / delta)``.

    ``delta`` defaults to ``r_tube / 5``; ``2 delta`` must stay inside the
    tube.  When no path reaches the transition zone the estimate is 0 and
    ``unsampled`` is set.
    """
    delta = setup.r_tube / 5.0 if delta is None else float(delta)
    if not 0 < 2 * delta < setup.r_tube:
        raise DomainError("need 0 < 2 delta < r_tube")
    if batch is None:
        batch = sample_bridges(BridgeConfig(lam, m_path, seed), setup, n_paths, workers=workers)
    rep = tube_statistics(batch)
    u = batch.sup_dist[rep.accepted_idx] / delta
    chi = CutoffSpec.chi(u)
    grad = (CutoffSpec.dchi(u) / delta * _SUPDIST_GRAD_BOUND) ** 2
    active = float(np.mean(u > 1.0))
    unsampled = not np.any(grad > 0)
    if unsampled:
        return GroundStateCheck(float(lam), delta, 0.0, 0.0, active, True, rep.n_accepted)
    q, se = _ratio_se(grad, chi**2)
    return GroundStateCheck(float(lam), delta, q, se, active, False, rep.n_accepted)


# -- log-Sobolev -----------------------------------------------------------


@dataclass
class LSIReport:
    lam: float
    lhs: float
    lhs_se: float
    rhs: float
    rhs_se: float
    xi_hat: float
    slack: float
    holds: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def lsi_sides(F, DF_sq, xi: float, lam: float):
    """Both sides of ``Ent(F^2) <= (2 xi / lam) E|D0 F|^2`` with SEs."""
    F = np.asarray(F, dtype=float)
    DF_sq = np.asarray(DF_sq, dtype=float)
    N = F.size
    m2 = fsum_mean(F**2)
    if m2 == 0.0:
        ent = np.zeros_like(F)
    else:
        r = F**2 / m2
        ent = np.where(r > 0, F**2 * np.log(np.where(r > 0, r, 1.0)), 0.0)
    lhs = fsum_mean(ent)
    rhs_s = 2.0 * xi / lam * DF_sq
    rhs = fsum_mean(rhs_s)
    return lhs, math.sqrt(_fsum_var(ent) / N), rhs, math.sqrt(_fsum_var(rhs_s) / N)


def lsi_diagnostic(
    trial: TrialFunction,
    lam: float,
    n_paths: int,
    setup: GeodesicSetup,
    cutoff: CutoffSpec | None = None,
    xi: float | None = None,
    m_path: int = 200,
    seed: int = 0,
    workers: int = 1,
    batch: BridgeBatch | None = None,
) -> LSIReport:
    """Monte Carlo check of the log-Sobolev inequality for the trial functional."""
    if batch is None:
        batch = sample_bridges(BridgeConfig(lam, m_path, seed), setup, n_paths, workers=workers)
    rep = tube_statistics(batch)
    sub = batch.subset(rep.accepted_idx)
    if xi is None:
        xi = estimate_xi(lam, min(200, rep.n_accepted), setup, batch=sub).xi_hat
    F = eval_F(sub, trial, lam)
    DF, _ = eval_DF(sub, trial, lam)
    h = 1.0 / DF.shape[1]
    dsq = h * np.sum(DF**2, axis=(1, 2))
    if cutoff is not None:
        u = sub.sup_dist / cutoff.kappa_cut
        chi = cutoff.chi(u)
        dchi = np.abs(cutoff.dchi(u)) / cutoff.kappa_cut * _SUPDIST_GRAD_BOUND
        dsq = (chi * np.sqrt(dsq) + np.abs(F) * dchi) ** 2
        F = chi * F
    lhs, lse, rhs, rse = lsi_sides(F, dsq, xi, lam)
    slack = rhs - lhs
    holds = bool(slack >= -3.0 * math.hypot(lse, rse))
    return LSIReport(float(lam), lhs, lse, rhs, rse, float(xi), slack, holds)


# -- perturbation diagnostic -----------------------------------------------


@dataclass
class CeptReport:
    """``|J(gamma) - J0|`` against ``sup_t |C_eps(t)|`` along sampled paths."""

    lam: float
    delta_exp: float
    sup_C: np.ndarray = field(repr=False)
    dist_J: np.ndarray = field(repr=False)
    ratios: np.ndarray = field(repr=False)
    fitted_C: float
    spread: tuple

    def to_dict(self) -> dict:
        return {
            "lambda": self.lam,
            "delta_exp": self.delta_exp,
            "fitted_C": self.fitted_C,
            "spread": list(self.spread),
            "n_paths": int(self.ratios.size),
        }


def cept_diagnostic(
    batch: BridgeBatch,
    lam: float,
    bundle: OperatorBundle,
    delta_exp: float = 0.6,
    n_paths: int = 100,
) -> CeptReport:
    """Assemble ``C_eps(t) = (1-t)^delta (K(gamma)_t - K(t))`` along tube paths.

    ``K(gamma) - K = -(H(gamma) - H(c)) / (1 - t) - Ric / (2 lam)`` with both
    Hessians in their own parallel frames.  ``bundle`` must live on the
    path grid; its ``J0`` is the reference.
    """
    setup = batch.setup
    rep = tube_statistics(batch)
    idx = rep.accepted_idx[:n_paths]
    m = batch.m
    if bundle.m != m:
        raise DomainError("bundle grid must match the path grid")
    t = np.arange(m + 1) / m
    Hc = path_hessians(setup, geodesic_to_target(setup, m))
    Hg = path_hessians(setup, batch.to_target[idx])
    ric = RicciData.from_space(setup.space).ricci_operator
    u = (1.0 - t[:m])[None, :, None, None]
    C = -(Hg[:, :m] - Hc[None, :m]) * u ** (delta_exp - 1.0) - u**delta_exp * ric / (2.0 * lam)
    supC = np.max(np.linalg.norm(C, ord=2, axis=(2, 3)), axis=1)
    M, _ = _coh_M(setup, batch.to_target[idx], lam)
    ref = bundle.J0.matrix + np.eye(m * bundle.n)
    dJ = np.array([np.linalg.norm(adjoint_inverse_kernel(M[j]) - ref, 2) for j in range(idx.size)])
    ratios = dJ / supC
    med = float(np.median(ratios))
    spread = (float(ratios.min() / med), float(ratios.max() / med))
    return CeptReport(float(lam), float(delta_exp), supC, dJ, ratios, med, spread)


# -- convergence study -------------------------------------------------------


@dataclass
class ConvergenceRun:
    rows: list
    rayleigh: list
    xi: list
    trial: TrialFunction = field(repr=False)
    meta: dict = field(default_factory=dict)


def convergence_study(
    setup: GeodesicSetup,
    lambdas,
    n_paths: int,
    m_path: int | None = None,
    seed: int = 0,
    kappa_cut: float | None = None,
    xi_paths: int = 200,
    drift_mode: str = "semiclassical",
    workers: int = 1,
    eps: float = 1e-6,
    m_xi: int = XI_GRID,
) -> ConvergenceRun:
    """Rayleigh upper estimate, ``1/xi^2`` lower diagnostic and ``e0`` per lambda.

    Columns are those of ``CONVERGENCE_COLUMNS``; ``upper_quotient``,
    ``lower_diag = 1/xi_hat^2`` and ``lower_diag_linear = 1/xi_hat`` are all
    divided by lambda so that each compares directly with ``e0_ref``.

    ``m_path = None`` picks :func:`auto_m_path` per lambda, which keeps the
    Euler-Maruyama bias of the quotient (roughly ``9/m``) below 1%.  The COH
    norms behind ``xi_hat`` need dense ``(m n)^2`` matrices, so they use
    their own ``xi_paths`` bridges on an ``m_xi`` grid.
    """
    trial = build_trial(setup, eps=eps, m=XI_GRID)
    cutoff = CutoffSpec(kappa_cut if kappa_cut is not None else setup.r_tube / 2.0)
    rows, rays, xis = [], [], []
    for k, lam in enumerate(lambdas):
        m_k = auto_m_path(lam) if m_path is None else int(m_path)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", CutoffWarning)
            est = estimate_rayleigh(
                trial,
                lam,
                n_paths,
                cutoff,
                setup=setup,
                m_path=m_k,
                seed=derive_seed(seed, k, 0),
                drift_mode=drift_mode,
                workers=workers,
            )
        if est.cutoff_active_fraction > 0.2:
            warnings.warn(
                f"cutoff active on {est.cutoff_active_fraction:.0%} of paths at lambda = {lam}",
                CutoffWarning,
            )
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", StepSizeWarning)
            xi = estimate_xi(
                lam, xi_paths, setup, m_path=m_xi, seed=derive_seed(seed, k, 1), workers=workers
            )
        rays.append(est)
        xis.append(xi)
        rows.append(
            {
                "lambda": float(lam),
                "upper_quotient": est.quotient_over_lambda,
                "upper_se": est.quotient_se,
                "lower_diag": 1.0 / xi.xi_hat**2,
                "xi_hat": xi.xi_hat,
                "e0_ref": trial.e0,
                "acceptance": est.acceptance,
                "n_paths": int(n_paths),
                "lower_diag_linear": 1.0 / xi.xi_hat,
                "m_path": m_k,
            }
        )
    meta = {
        "seed": int(seed),
        "m_path": None if m_path is None else int(m_path),
        "m_xi": int(m_xi),
        "kappa_cut": cutoff.kappa_cut,
        "xi_paths": int(xi_paths),
        "drift_mode": drift_mode,
        "trial": trial.to_dict(),
    }
    return ConvergenceRun(rows, rays, xis, trial, meta)
