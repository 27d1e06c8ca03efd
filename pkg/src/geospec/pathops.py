"""Discretised path-space operators on L^2([0, 1] -> R^n).

Grid functions are piecewise constant on the cells ``[t_k, t_{k+1}]`` of a
uniform grid with ``m`` cells and carry the quadrature inner product
``<phi, psi> = (1/m) sum_k phi_k . psi_k``.  With uniform weights the
adjoint of a matrix is its transpose and the operator norm is the
spectral norm.  Stacked coordinates put cell ``k``, component ``a`` at
index ``k n + a``.

All operators are built from the nodal samples ``F_k`` of a fundamental
solution (``f`` from the Jacobi field, or ``M = (1 - t) N``), with
``F_m = 0``.  Writing ``Phi_k = h sum_{j<k} phi_j`` for the nodal values of
``U phi``, the scheme uses

    Q_k = F_k F_{k+1}^-1,   B_k = Q_k^{-1/2},   X_k^-1 = F_{k+1}^-1 B_k,
    Kd_k = (F_{k+1} - F_k) F_k^-1 / h,

for ``k <= m - 2``, and ``B_{m-1} = X_{m-1}^-1 = 0``.  Then

    (S phi)_k        = B_k^-1 (phi_k - Kd_k Phi_k),
    (S^-1 psi)_k     = B_k psi_k + (F_{k+1} - F_k) sum_{j<k} X_j^-1 psi_j,
    ((S^-1)* phi)_k  = B_k^T phi_k + X_k^-T sum_{i>k} (F_{i+1} - F_i)^T phi_i,
    (T phi)_j        = P0[-h sum_{i>j} R(t_i) Phi_i].

``B_k`` is the discrete counterpart of the square-root factor that makes
``|S phi|^2 = <(I + T) phi, phi>`` hold by summation by parts, which is
what keeps the identity residuals at O(h^2).  Every formula is invariant
under ``F -> F G`` for constant invertible ``G``, so the ``f`` route and the
``M`` route define the same operators up to integration error.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import DomainError, NumericalError
from .geometry import CurvatureProfile, GeodesicSetup
from .jacobi import CoefficientFamily, OdeGrid, build_K_family, solve_jacobi

__all__ = [
    "GridFunction",
    "DiscretizedOperator",
    "SpectralReport",
    "OperatorBundle",
    "apply_U",
    "apply_U_inv",
    "mean_zero_projector",
    "adjoint_inverse_kernel",
    "build_S",
    "build_S_inv",
    "build_S_adj",
    "build_S_inv_adj",
    "build_T",
    "compute_e0",
    "verify_identities",
    "build_J_eps",
    "build_bundle",
    "richardson",
]

L2 = "L2"
L2_0 = "L2_0"
MEAN_TOL = 1e-10


@dataclass(frozen=True)
class GridFunction:
    """Cell values of a piecewise-constant function, shape ``(m, n)``."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or not np.all(np.isfinite(v)):
            raise DomainError("grid function values must be finite with shape (m, n)")
        object.__setattr__(self, "values", v)

    @classmethod
    def from_callable(cls, fn, m: int) -> "GridFunction":
        """Sample ``fn`` (vectorised over times) at the cell midpoints."""
        s = (np.arange(m) + 0.5) / m
        return cls(np.asarray(fn(s), dtype=float).reshape(m, -1))

    @property
    def m(self) -> int:
        return self.values.shape[0]

    @property
    def n(self) -> int:
        return self.values.shape[1]

    @property
    def stacked(self) -> np.ndarray:
        return self.values.reshape(-1)

    def inner(self, other: "GridFunction") -> float:
        return float(np.sum(self.values * other.values)) / self.m

    def norm(self) -> float:
        return float(np.sqrt(self.inner(self)))

    def mean(self) -> np.ndarray:
        return self.values.mean(axis=0)

    def is_mean_zero(self, tol: float = MEAN_TOL) -> bool:
        return bool(np.linalg.norm(self.mean()) <= tol * max(1.0, self.norm()))


def _as_values(phi, m, n):
    if isinstance(phi, GridFunction):
        v = phi.values
    else:
        v = np.asarray(phi, dtype=float).reshape(m, n)
    if v.shape != (m, n):
        raise DomainError(f"grid function has shape {v.shape}, expected {(m, n)}")
    return v


def apply_U(phi: GridFunction) -> np.ndarray:
    """Nodal values ``(U phi)(t_k) = h sum_{j<k} phi_j`` for ``k = 0..m``."""
    v = phi.values
    out = np.zeros((v.shape[0] + 1, v.shape[1]))
    out[1:] = np.cumsum(v, axis=0) / v.shape[0]
    return out


def apply_U_inv(nodal) -> GridFunction:
    """Difference quotients of nodal values; inverts :func:`apply_U` exactly."""
    nodal = np.asarray(nodal, dtype=float)
    m = nodal.shape[0] - 1
    return GridFunction(np.diff(nodal, axis=0) * m)


def mean_zero_projector(m: int, n: int) -> np.ndarray:
    """Orthogonal projector onto mean-zero grid functions."""
    return np.kron(np.eye(m) - np.full((m, m), 1.0 / m), np.eye(n))


def _mean_zero_basis(m: int, n: int) -> np.ndarray:
    """Orthonormal (Euclidean) basis of the mean-zero subspace, ``(mn, (m-1)n)``."""
    # Helmert basis: column k is (1, ..., 1, -k, 0, ...)/sqrt(k(k+1))
    H = np.zeros((m, m - 1))
    for k in range(1, m):
        H[:k, k - 1] = 1.0
        H[k, k - 1] = -k
        H[:, k - 1] /= np.sqrt(k * (k + 1.0))
    return np.kron(H, np.eye(n))


@dataclass
class DiscretizedOperator:
    """Dense matrix acting on stacked grid functions.

    ``domain`` and ``codomain`` are ``'L2'`` or ``'L2_0'``.  An operator
    whose domain is ``L2_0`` refuses inputs with nonzero mean.
    """

    matrix: np.ndarray = field(repr=False)
    m: int
    n: int
    domain: str = L2
    codomain: str = L2
    name: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        N = self.m * self.n
        if self.matrix.shape != (N, N):
            raise DomainError(f"matrix shape {self.matrix.shape} does not match m n = {N}")
        if not np.all(np.isfinite(self.matrix)):
            raise NumericalError(f"operator {self.name!r} has non-finite entries")
        self._norm = None

    def apply(self, phi) -> GridFunction:
        v = _as_values(phi, self.m, self.n)
        if self.domain == L2_0 and not GridFunction(v).is_mean_zero():
            raise DomainError(
                f"{self.name or 'operator'} is defined on mean-zero functions only"
            )
        return GridFunction((self.matrix @ v.reshape(-1)).reshape(self.m, self.n))

    def compose(self, other: "DiscretizedOperator", name: str = "") -> "DiscretizedOperator":
        """``self o other``; domain is that of ``other``."""
        if (self.m, self.n) != (other.m, other.n):
            raise DomainError("grid mismatch")
        return DiscretizedOperator(
            self.matrix @ other.matrix,
            self.m,
            self.n,
            other.domain,
            self.codomain,
            name or f"{self.name}*{other.name}",
        )

    def op_norm(self) -> float:
        """Operator norm for the quadrature inner product."""
        if self._norm is None:
            try:
                self._norm = float(np.linalg.norm(self.matrix, 2))
            except np.linalg.LinAlgError as exc:
                raise NumericalError(f"SVD failed for {self.name!r}") from exc
        return self._norm

    def blocks(self) -> np.ndarray:
        """View as ``(m, m, n, n)`` blocks."""
        return self.matrix.reshape(self.m, self.n, self.m, self.n).transpose(0, 2, 1, 3)


def _from_blocks(blocks: np.ndarray) -> np.ndarray:
    m, _, n, _ = blocks.shape
    return blocks.transpose(0, 2, 1, 3).reshape(m * n, m * n)


def _sqrtm_batch(Q: np.ndarray):
    """Principal square roots of a stack of matrices and of their inverses."""
    w, V = np.linalg.eig(Q)
    ok = np.all(np.abs(np.angle(w)) < np.pi / 2) and np.all(np.linalg.cond(V) < 1e8)
    if ok:
        Vi = np.linalg.inv(V)
        sq = np.real(V @ (np.sqrt(w)[..., None] * Vi))
        isq = np.real(V @ ((1.0 / np.sqrt(w))[..., None] * Vi))
        return sq, isq
    sq = np.stack([np.real(sla.sqrtm(q)) for q in Q])
    return sq, np.linalg.inv(sq)


@dataclass
class _Parts:
    F: np.ndarray
    dF: np.ndarray
    B: np.ndarray
    Binv: np.ndarray
    Xinv: np.ndarray
    G: np.ndarray  # h B_k^-1 Kd_k = B_k^-1 dF_k F_k^-1


def _parts(F: np.ndarray) -> _Parts:
    F = np.asarray(F, dtype=float)
    m = F.shape[0] - 1
    n = F.shape[1]
    if np.max(np.abs(F[m])) > 1e-12 * max(1.0, np.max(np.abs(F[0]))):
        raise DomainError("fundamental solution must vanish at t = 1")
    dF = F[1:] - F[:-1]
    B = np.zeros((m, n, n))
    Binv = np.zeros((m, n, n))
    Xinv = np.zeros((m, n, n))
    G = np.zeros((m, n, n))
    try:
        Finv = np.linalg.inv(F[:m])
        Q = F[: m - 1] @ Finv[1:m]
        Qh, Qih = _sqrtm_batch(Q)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("fundamental solution is singular before t = 1") from exc
    B[: m - 1] = Qih
    Binv[: m - 1] = Qh
    Xinv[: m - 1] = Finv[1:m] @ Qih
    G[: m - 1] = Qh @ dF[: m - 1] @ Finv[: m - 1]
    return _Parts(F, dF, B, Binv, Xinv, G)


def _strict(m):
    k = np.arange(m)
    return k[:, None] > k[None, :]


def adjoint_inverse_kernel(F: np.ndarray, project: bool = True) -> np.ndarray:
    """Matrix of ``phi -> B^T phi + X^-T sum_{i>k} dF_i^T phi_i``.

    With ``F = f`` this is ``(S^-1)*``; with ``F = M(gamma)`` it is the COH
    coefficient ``A(gamma) = I + J(gamma)``.  ``project`` composes with the
    mean-zero projector so constants map to zero exactly.
    """
    p = _parts(F)
    m, n = p.B.shape[0], p.B.shape[1]
    blocks = np.einsum("kba,icb->kiac", p.Xinv, p.dF)
    blocks *= _strict(m).T[:, :, None, None]
    blocks[np.arange(m), np.arange(m)] = np.swapaxes(p.B, 1, 2)
    mat = _from_blocks(blocks)
    if project:
        mat = mat @ mean_zero_projector(m, n)
    return mat


def _check_family(family: CoefficientFamily):
    if not isinstance(family, CoefficientFamily):
        raise DomainError("expected a CoefficientFamily")
    return family.m, family.n


def build_S(family: CoefficientFamily) -> DiscretizedOperator:
    """``S phi = phi - f' f^-1 U phi`` on mean-zero functions."""
    m, n = _check_family(family)
    p = _parts(family.f)
    blocks = -np.broadcast_to(p.G[:, None], (m, m, n, n)).copy()
    blocks *= _strict(m)[:, :, None, None]
    blocks[np.arange(m), np.arange(m)] = p.Binv
    mat = _from_blocks(blocks) @ mean_zero_projector(m, n)
    return DiscretizedOperator(mat, m, n, L2_0, L2, "S")


def build_S_inv(family: CoefficientFamily) -> DiscretizedOperator:
    """``S^-1 psi = psi + f' int_0^t f^-1 psi``; its range is mean-zero."""
    m, n = _check_family(family)
    p = _parts(family.f)
    blocks = np.einsum("kab,jbc->kjac", p.dF, p.Xinv)
    blocks *= _strict(m)[:, :, None, None]
    blocks[np.arange(m), np.arange(m)] = p.B
    return DiscretizedOperator(_from_blocks(blocks), m, n, L2, L2_0, "S_inv")


def build_S_adj(family: CoefficientFamily) -> DiscretizedOperator:
    """Adjoint of ``S`` from its explicit tail-integral form."""
    m, n = _check_family(family)
    p = _parts(family.f)
    blocks = -np.broadcast_to(np.swapaxes(p.G, 1, 2)[None, :], (m, m, n, n)).copy()
    blocks *= _strict(m).T[:, :, None, None]
    blocks[np.arange(m), np.arange(m)] = np.swapaxes(p.Binv, 1, 2)
    mat = mean_zero_projector(m, n) @ _from_blocks(blocks)
    return DiscretizedOperator(mat, m, n, L2, L2_0, "S_adj")


def build_S_inv_adj(
    family: CoefficientFamily, form: str = "f", project: bool = True
) -> DiscretizedOperator:
    """``(S^-1)*`` from the ``f`` form or the ``M``/``K`` form.

    Both forms share one kernel; ``form='M'`` feeds it the solution of the
    ``N`` equation instead of the Jacobi field, so comparing them tests
    ``M = f f(0)^-1`` and the series regularisation near ``t = 1``.
    """
    m, n = _check_family(family)
    if form == "f":
        F = family.f
    elif form == "M":
        F = family.M
    else:
        raise DomainError("form must be 'f' or 'M'")
    mat = adjoint_inverse_kernel(F, project=project)
    return DiscretizedOperator(mat, m, n, L2, L2, f"S_inv_adj[{form}]")


def build_T(profile: CurvatureProfile, grid: OdeGrid | None = None) -> DiscretizedOperator:
    """Curvature operator ``T`` on mean-zero functions.

    Its quadratic form is the nodal quadrature of
    ``-int_0^1 <R(t) U phi(t), U phi(t)> dt``.
    """
    m = profile.m if grid is None else grid.m
    n = profile.n
    h = 1.0 / m
    R = profile.at(np.arange(m + 1) / m)
    # C_p = sum_{i=p}^{m-1} R_i, C_m = 0
    C = np.zeros((m + 1, n, n))
    C[:m] = np.cumsum(R[:m][::-1], axis=0)[::-1]
    k = np.arange(m)
    idx = np.maximum(k[:, None], k[None, :]) + 1
    blocks = -h * h * C[idx]
    P = mean_zero_projector(m, n)
    mat = P @ _from_blocks(blocks) @ P
    return DiscretizedOperator(mat, m, n, L2_0, L2_0, "T")


@dataclass
class SpectralReport:
    """Bottom of the spectrum of ``I + T`` on mean-zero functions."""

    e0: float
    m: int
    n: int
    op_norm_sinv_adj: float | None = None
    e0_transverse: float | None = None
    spectrum: list = field(default_factory=list)
    residuals: dict = field(default_factory=dict)
    eigvec: np.ndarray | None = field(default=None, repr=False)

    @property
    def inv_norm_sq(self):
        if self.op_norm_sinv_adj is None:
            return None
        return 1.0 / self.op_norm_sinv_adj**2

    @property
    def duality_gap(self):
        """``e0 |(S^-1)*|^2 - 1``."""
        if self.op_norm_sinv_adj is None:
            return None
        return self.e0 * self.op_norm_sinv_adj**2 - 1.0

    def to_dict(self) -> dict:
        return {
            "e0": float(self.e0),
            "e0_transverse": None if self.e0_transverse is None else float(self.e0_transverse),
            "m": int(self.m),
            "n": int(self.n),
            "op_norm_sinv_adj": None
            if self.op_norm_sinv_adj is None
            else float(self.op_norm_sinv_adj),
            "inv_norm_sq": None if self.inv_norm_sq is None else float(self.inv_norm_sq),
            "duality_gap": None if self.duality_gap is None else float(self.duality_gap),
            "spectrum": [float(x) for x in self.spectrum],
            "residuals": {k: float(v) for k, v in self.residuals.items()},
        }


def _compressed_identity_plus_T(T_op):
    Q = _mean_zero_basis(T_op.m, T_op.n)
    A = np.eye(T_op.m * T_op.n) + T_op.matrix
    A = 0.5 * (A + A.T)
    return Q, Q.T @ A @ Q


def compute_e0(
    T_op: DiscretizedOperator,
    sinv_adj: DiscretizedOperator | None = None,
    n_spectrum: int = 8,
) -> SpectralReport:
    """Smallest eigenvalue of the symmetrised ``I + T`` on mean-zero functions.

    ``e0_transverse`` is the same minimum over functions orthogonal to the
    first frame axis (the direction of ``xi``).
    """
    m, n = T_op.m, T_op.n
    Q, A = _compressed_identity_plus_T(T_op)
    try:
        w, V = np.linalg.eigh(A)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigensolve failed for m={m}, n={n}") from exc
    if not np.all(np.isfinite(w)):
        raise NumericalError("eigensolve returned non-finite values")
    vec = (Q @ V[:, 0]).reshape(m, n)
    e0_tr = None
    if n > 1:
        keep = np.arange(A.shape[0]) % n != 0
        e0_tr = float(np.linalg.eigvalsh(A[np.ix_(keep, keep)])[0])
    rep = SpectralReport(
        e0=float(w[0]),
        m=m,
        n=n,
        e0_transverse=e0_tr,
        spectrum=[float(x) for x in w[:n_spectrum]],
        eigvec=vec,
    )
    if sinv_adj is not None:
        rep.op_norm_sinv_adj = sinv_adj.op_norm()
        rep.residuals["duality"] = abs(rep.duality_gap)
    return rep


def _inverse_I_plus_T(T_op):
    Q, A = _compressed_identity_plus_T(T_op)
    return Q @ np.linalg.solve(A, Q.T)


@dataclass
class OperatorBundle:
    """All operators assembled on one grid."""

    family: CoefficientFamily = field(repr=False)
    S: DiscretizedOperator = field(repr=False)
    S_inv: DiscretizedOperator = field(repr=False)
    S_adj: DiscretizedOperator = field(repr=False)
    S_inv_adj: DiscretizedOperator = field(repr=False)
    S_inv_adj_M: DiscretizedOperator = field(repr=False)
    T: DiscretizedOperator = field(repr=False)
    J0: DiscretizedOperator = field(repr=False)

    @property
    def m(self) -> int:
        return self.S.m

    @property
    def n(self) -> int:
        return self.S.n

    @property
    def I_plus_T(self) -> np.ndarray:
        return mean_zero_projector(self.m, self.n) + self.T.matrix


def build_bundle(source, m: int | None = None) -> OperatorBundle:
    """Build every operator from a setup (with ``m``) or a coefficient family."""
    if isinstance(source, GeodesicSetup):
        if m is None:
            raise DomainError("grid size m is required when building from a setup")
        grid = OdeGrid(m)
        profile = CurvatureProfile.constant_curvature(source, m)
        family = build_K_family(solve_jacobi(profile, grid), grid)
    else:
        family = source
    return OperatorBundle(
        family,
        build_S(family),
        build_S_inv(family),
        build_S_adj(family),
        build_S_inv_adj(family, "f"),
        build_S_inv_adj(family, "M"),
        build_T(family.profile, family.grid),
        build_J_eps(family, None),
    )


def _norm2(a):
    return float(np.linalg.norm(a, 2))


def verify_identities(bundle: OperatorBundle, spectral: SpectralReport | None = None) -> dict:
    """Operator-norm residuals of the factorisation identities.

    Keys
    ----
    SadjS_minus_IplusT, SinvAdj_IplusT_minus_S, S_Sinv_minus_I (on all of
    L^2), Sinv_S_minus_I_L20, IplusT_inv_minus_Sinv_SinvAdj, duality,
    SinvAdj_f_minus_M, I_plus_J0_minus_SinvAdj and J0_minus_SinvAdj (the two
    readings of the perturbation statement at zero perturbation), and
    S_Sinv_minus_I_offlast, the ``S S^-1`` residual on functions vanishing
    on the last cell.
    """
    b = bundle
    m, n = b.m, b.n
    N = m * n
    I = np.eye(N)
    P = mean_zero_projector(m, n)
    IT = b.I_plus_T
    SS = b.S.matrix @ b.S_inv.matrix
    keep = np.arange(N) < (m - 1) * n
    res = {
        "SadjS_minus_IplusT": _norm2(b.S_adj.matrix @ b.S.matrix - IT),
        "SinvAdj_IplusT_minus_S": _norm2(b.S_inv_adj.matrix @ IT - b.S.matrix),
        "S_Sinv_minus_I": _norm2(SS - I),
        "S_Sinv_minus_I_offlast": _norm2((SS - I)[:, keep]),
        "Sinv_S_minus_I_L20": _norm2(b.S_inv.matrix @ b.S.matrix - P),
        "IplusT_inv_minus_Sinv_SinvAdj": _norm2(
            _inverse_I_plus_T(b.T) - b.S_inv.matrix @ b.S_inv_adj.matrix
        ),
        "SinvAdj_f_minus_M": _norm2(b.S_inv_adj.matrix - b.S_inv_adj_M.matrix),
        "I_plus_J0_minus_SinvAdj": _norm2(I + b.J0.matrix - b.S_inv_adj.matrix),
        "J0_minus_SinvAdj": _norm2(b.J0.matrix - b.S_inv_adj.matrix),
    }
    if spectral is None:
        spectral = compute_e0(b.T, b.S_inv_adj)
    if spectral.op_norm_sinv_adj is None:
        spectral.op_norm_sinv_adj = b.S_inv_adj.op_norm()
    res["duality"] = abs(spectral.duality_gap)
    spectral.residuals.update(res)
    return res


def _sample_perturbation(C_eps, grid: OdeGrid, n: int) -> np.ndarray:
    if callable(C_eps):
        C = np.stack([np.asarray(C_eps(s), dtype=float) for s in grid.midpoints])
    else:
        C = np.asarray(C_eps, dtype=float)
    if C.shape != (grid.m, n, n):
        raise DomainError(f"perturbation samples must have shape {(grid.m, n, n)}")
    if np.max(np.abs(C - np.swapaxes(C, 1, 2))) > 1e-12 * max(1.0, np.max(np.abs(C))):
        raise DomainError("perturbation samples must be symmetric")
    return C


def build_J_eps(
    family: CoefficientFamily,
    C_eps=None,
    delta_exp: float = 0.6,
    small_eps: float = 0.25,
) -> DiscretizedOperator:
    """``J_eps`` for ``Kt_eps = Kt + C_eps / (1 - t)^delta``.

    ``N_eps = N V`` where ``V' = (1-t)^-delta N^-1 C_eps N V``; ``V`` is
    integrated by an exponential midpoint rule with the weight
    ``(1-t)^-delta`` integrated exactly over each cell.  Then
    ``M_eps = (1 - t) N_eps`` and ``I + J_eps`` is the adjoint-inverse
    kernel of ``M_eps``.  With ``C_eps = None`` this is ``J_0``.

    Parameters
    ----------
    C_eps : array (m, n, n), callable or None
        Symmetric perturbation sampled at cell midpoints.
    delta_exp : float
        Exponent in (0, 1).
    small_eps : float
        ``meta['small_eps_regime']`` is False when ``sup |C_eps|`` exceeds it.
    """
    if not 0.0 < delta_exp < 1.0:
        raise DomainError("delta_exp must lie in (0, 1)")
    m, n = _check_family(family)
    grid = family.grid
    t = grid.t
    N_eps = family.N
    eps = 0.0
    if C_eps is not None:
        C = _sample_perturbation(C_eps, grid, n)
        eps = float(np.max(np.linalg.norm(C, ord=2, axis=(1, 2))))
        a = 1.0 - delta_exp
        w = ((1.0 - t[:-1]) ** a - (1.0 - t[1:]) ** a) / a
        Nbar = 0.5 * (family.N[:-1] + family.N[1:])
        Gk = np.linalg.solve(Nbar, C @ Nbar) * w[:, None, None]
        E = sla.expm(Gk)
        V = np.empty((m + 1, n, n))
        V[0] = np.eye(n)
        for k in range(m):
            V[k + 1] = E[k] @ V[k]
        N_eps = family.N @ V
    M_eps = (1.0 - t)[:, None, None] * N_eps
    mat = adjoint_inverse_kernel(M_eps) - np.eye(m * n)
    meta = {
        "eps": eps,
        "delta_exp": float(delta_exp),
        "small_eps_regime": bool(eps <= small_eps),
    }
    return DiscretizedOperator(mat, m, n, L2, L2, "J_eps", meta)


def richardson(values, ms) -> float:
    """Extrapolate ``v(m) = v* + c2 m^-2 + c4 m^-4 + ...`` from doubling grids."""
    v = [float(x) for x in values]
    ms = [int(x) for x in ms]
    if len(v) != len(ms) or len(v) < 2:
        raise DomainError("need at least two grid levels")
    if any(b != 2 * a for a, b in zip(ms, ms[1:])):
        raise DomainError("grid sizes must double")
    p = 2
    while len(v) > 1:
        f = 2.0**p
        v = [(f * b - a) / (f - 1.0) for a, b in zip(v, v[1:])]
        p += 2
    return v[0]
