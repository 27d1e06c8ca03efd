"""Jacobi fields along the reference geodesic and the derived coefficients.

The Jacobi equation ``W'' + R(1 - t) W = 0`` with ``W(0) = 0`` and
``W'(0) = I`` is integrated by classical RK4 on the first order system.
From ``W`` we get the distance Hessian ``A(t) = t W'(t) W(t)^-1`` and the
reversed field ``f(t) = W(1 - t)``, from which

    K(t) = f'(t) f(t)^-1,   Kt(t) = K(t) + I/(1 - t),
    N' = Kt N, N(0) = I,    M(t) = (1 - t) N(t).

``K`` is singular at ``t = 1`` while ``Kt`` is smooth.  Near 1 we use the
Taylor expansion of ``W`` at 0, which gives, with ``u = 1 - t``,

    Kt(t) = (u/3) R(1) - (u^2/4) R'(1) + O(u^3).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConjugatePointError, DomainError
from .geometry import CurvatureProfile

__all__ = [
    "OdeGrid",
    "JacobiSolution",
    "CoefficientFamily",
    "solve_jacobi",
    "hessian_k",
    "riccati_residual",
    "k_tilde_direct",
    "k_tilde_series",
    "build_K_family",
]

SWITCH_DELTA = 1e-3


@dataclass(frozen=True)
class OdeGrid:
    """Uniform grid ``t_i = i/m`` on [0, 1]."""

    m: int

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 16:
            raise DomainError("grid needs an integer m >= 16")

    @property
    def h(self) -> float:
        return 1.0 / self.m

    @property
    def t(self) -> np.ndarray:
        return np.arange(self.m + 1) / self.m

    @property
    def midpoints(self) -> np.ndarray:
        return (np.arange(self.m) + 0.5) / self.m


def _rk4_step(profile, W, V, u, du):
    """One RK4 step of (W, V)' = (V, -R(1 - u) W) from ``u`` to ``u + du``."""

    def acc(s, X):
        return -profile.reversed_at(s) @ X

    k1w, k1v = V, acc(u, W)
    k2w, k2v = V + 0.5 * du * k1v, acc(u + 0.5 * du, W + 0.5 * du * k1w)
    k3w, k3v = V + 0.5 * du * k2v, acc(u + 0.5 * du, W + 0.5 * du * k2w)
    k4w, k4v = V + du * k3v, acc(u + du, W + du * k3w)
    W1 = W + du / 6.0 * (k1w + 2 * k2w + 2 * k3w + k4w)
    V1 = V + du / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v)
    return W1, V1


@dataclass
class JacobiSolution:
    """Grid samples of the Jacobi field and its derivative.

    Attributes
    ----------
    W, Wp : ndarray, shape (m+1, n, n)
        ``W(t_i)`` and ``W'(t_i)``.
    logdet : ndarray, shape (m+1,)
        ``log|det W(t_i)|`` (``-inf`` at ``t = 0``).
    cond : ndarray, shape (m+1,)
        Condition number of ``W(t_i)`` (``inf`` at ``t = 0``).
    """

    profile: CurvatureProfile
    grid: OdeGrid
    W: np.ndarray = field(repr=False)
    Wp: np.ndarray = field(repr=False)
    logdet: np.ndarray = field(repr=False)
    cond: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.W.shape[1]

    @property
    def f(self) -> np.ndarray:
        """``f(t_i) = W(1 - t_i)``."""
        return self.W[::-1]

    @property
    def fp(self) -> np.ndarray:
        """``f'(t_i) = -W'(1 - t_i)``."""
        return -self.Wp[::-1]

    @property
    def max_cond(self) -> float:
        return float(np.max(self.cond[1:]))

    def wronskian_residual(self) -> float:
        """``max |W'^T W - W^T W'|``; zero for exact solutions."""
        Wt = np.swapaxes(self.W, 1, 2)
        Vt = np.swapaxes(self.Wp, 1, 2)
        return float(np.max(np.abs(Vt @ self.W - Wt @ self.Wp)))

    def state_at(self, u):
        """``(W(u), W'(u))`` at an arbitrary time via an RK4 sub-step."""
        u = float(u)
        if not 0.0 <= u <= 1.0:
            raise DomainError("time must lie in [0, 1]")
        m = self.grid.m
        i = min(int(np.floor(u * m)), m - 1)
        du = u - i / m
        if du == 0.0:
            return self.W[i].copy(), self.Wp[i].copy()
        return _rk4_step(self.profile, self.W[i], self.Wp[i], i / m, du)


def solve_jacobi(profile: CurvatureProfile, grid: OdeGrid) -> JacobiSolution:
    """Integrate the Jacobi equation driven by the reversed profile.

    Raises
    ------
    ConjugatePointError
        If ``W(t)`` is numerically singular for some grid ``t > 0`` (smallest
        singular value below ``1e-10 t``) or ``det W`` changes sign between
        two nodes.
    """
    n = profile.n
    m = grid.m
    h = grid.h
    W = np.empty((m + 1, n, n))
    V = np.empty((m + 1, n, n))
    W[0] = 0.0
    V[0] = np.eye(n)
    for i in range(m):
        W[i + 1], V[i + 1] = _rk4_step(profile, W[i], V[i], i * h, h)
    if not np.all(np.isfinite(W)):
        raise ConjugatePointError("Jacobi integration produced non-finite values")
    sv = np.linalg.svd(W[1:], compute_uv=False)
    t = grid.t[1:]
    sign, ld = np.linalg.slogdet(W[1:])
    # W(t) ~ t I near 0, so det W > 0 until the first conjugate point; a sign
    # change catches a zero crossed between two nodes
    bad = (sv[:, -1] <= 1e-10 * t) | (sign <= 0)
    if np.any(bad):
        tb = t[np.argmax(bad)]
        raise ConjugatePointError(f"W(t) is singular near t = {tb:.4g}: conjugate point")
    logdet = np.concatenate([[-np.inf], ld])
    cond = np.concatenate([[np.inf], sv[:, 0] / sv[:, -1]])
    return JacobiSolution(profile, grid, W, V, logdet, cond)


def hessian_k(sol: JacobiSolution, t) -> np.ndarray:
    """Distance Hessian ``A(t) = t W'(t) W(t)^-1`` in the parallel frame.

    ``A`` extends continuously to ``t = 0`` with ``A(0) = I``.  Accepts a
    scalar or a 1-d array of times.
    """
    ts = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any((ts < 0) | (ts > 1)):
        raise DomainError("time must lie in [0, 1]")
    out = np.empty((ts.size, sol.n, sol.n))
    for k, tk in enumerate(ts):
        if tk == 0.0:
            out[k] = np.eye(sol.n)
            continue
        Wt, Vt = sol.state_at(tk)
        out[k] = tk * np.linalg.solve(Wt.T, Vt.T).T
    return out[0] if np.ndim(t) == 0 else out


def riccati_residual(sol: JacobiSolution) -> float:
    """Max residual of ``A' + t R(1-t) + A^2/t - A/t`` at interior nodes.

    ``A'`` is taken by central differences, so the result is O(h^2).
    """
    m = sol.grid.m
    h = sol.grid.h
    t = sol.grid.t
    A = t[1:, None, None] * np.linalg.solve(
        np.swapaxes(sol.W[1:], 1, 2), np.swapaxes(sol.Wp[1:], 1, 2)
    ).swapaxes(1, 2)
    A = np.concatenate([np.eye(sol.n)[None], A])
    i = np.arange(1, m)
    dA = (A[i + 1] - A[i - 1]) / (2 * h)
    ti = t[i][:, None, None]
    res = dA + ti * sol.profile.reversed_at(t[i]) + (A[i] @ A[i]) / ti - A[i] / ti
    return float(np.max(np.linalg.norm(res, ord=2, axis=(1, 2))))


def k_tilde_direct(sol: JacobiSolution, t: float) -> np.ndarray:
    """``K(t) + I/(1-t)`` from the Jacobi field; loses digits as ``t -> 1``."""
    u = 1.0 - float(t)
    if u <= 0.0:
        raise DomainError("direct evaluation needs t < 1")
    Wu, Vu = sol.state_at(u)
    K = -np.linalg.solve(Wu.T, Vu.T).T
    return K + np.eye(sol.n) / u


def k_tilde_series(profile: CurvatureProfile, t: float) -> np.ndarray:
    """Second order expansion ``(u/3) R(1) - (u^2/4) R'(1)`` with ``u = 1 - t``."""
    u = 1.0 - float(t)
    return (u / 3.0) * profile.at(1.0) - (u * u / 4.0) * profile.derivative(1.0)


def _k_tilde(sol, t, switch_delta):
    if 1.0 - t >= switch_delta:
        return k_tilde_direct(sol, t)
    return k_tilde_series(sol.profile, t)


@dataclass
class CoefficientFamily:
    """``f, f', K, Kt, N, M`` sampled at the grid nodes.

    ``K`` is ``nan`` at ``t = 1``; ``K_tilde_mid`` holds ``Kt`` at the cell
    midpoints (used by the RK4 integration of ``N``).
    """

    grid: OdeGrid
    profile: CurvatureProfile
    switch_delta: float
    f: np.ndarray = field(repr=False)
    fp: np.ndarray = field(repr=False)
    K: np.ndarray = field(repr=False)
    K_tilde: np.ndarray = field(repr=False)
    K_tilde_mid: np.ndarray = field(repr=False)
    N: np.ndarray = field(repr=False)
    M: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.f.shape[1]

    @property
    def m(self) -> int:
        return self.grid.m

    def m_residual(self) -> float:
        """``max_i |M(t_i) - f(t_i) f(0)^-1|`` (two independent routes)."""
        direct = self.f @ np.linalg.inv(self.f[0])
        return float(np.max(np.abs(self.M - direct)))

    def n_bounds(self):
        """``(max |N|, max |N^-1|)`` in operator norm over the grid."""
        a = np.linalg.norm(self.N, ord=2, axis=(1, 2)).max()
        b = np.linalg.norm(np.linalg.inv(self.N), ord=2, axis=(1, 2)).max()
        return float(a), float(b)


def build_K_family(
    sol: JacobiSolution, grid: OdeGrid | None = None, switch_delta: float = SWITCH_DELTA
) -> CoefficientFamily:
    """Assemble ``K, Kt, N, M`` on the grid of ``sol``.

    ``Kt`` is taken from ``f' f^-1 + I/(1-t)`` when ``1 - t >= switch_delta``
    and from the series expansion otherwise.
    """
    if grid is not None and grid.m != sol.grid.m:
        raise DomainError("grid does not match the Jacobi solution")
    if not 0.0 < switch_delta < 0.5:
        raise DomainError("switch_delta must lie in (0, 1/2)")
    grid = sol.grid
    m, n, h = grid.m, sol.n, grid.h
    t = grid.t
    f, fp = sol.f, sol.fp
    K = np.full((m + 1, n, n), np.nan)
    K[:m] = np.linalg.solve(np.swapaxes(f[:m], 1, 2), np.swapaxes(fp[:m], 1, 2)).swapaxes(1, 2)
    Kt = np.stack([_k_tilde(sol, ti, switch_delta) for ti in t])
    Kt_mid = np.stack([_k_tilde(sol, s, switch_delta) for s in grid.midpoints])
    N = np.empty((m + 1, n, n))
    N[0] = np.eye(n)
    for i in range(m):
        X = N[i]
        k1 = Kt[i] @ X
        k2 = Kt_mid[i] @ (X + 0.5 * h * k1)
        k3 = Kt_mid[i] @ (X + 0.5 * h * k2)
        k4 = Kt[i + 1] @ (X + h * k3)
        N[i + 1] = X + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    M = (1.0 - t)[:, None, None] * N
    return CoefficientFamily(grid, sol.profile, switch_delta, f, fp, K, Kt, Kt_mid, N, M)
