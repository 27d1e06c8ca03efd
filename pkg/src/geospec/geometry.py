"""Constant-curvature model spaces and geodesic data.

Three model spaces are supported, all in embedded coordinates:

* ``flat``: Euclidean space R^n, points and tangents in R^n.
* ``sphere``: the round sphere of radius ``1/sqrt(kappa)`` in R^(n+1).
* ``hyperbolic``: the upper sheet of the hyperboloid
  ``<p, p>_L = -1/|kappa|`` in Minkowski space R^(1,n).

Coordinate 0 is the distinguished axis for the curved spaces: the base
point sits at ``radius * e_0`` and its tangent space is spanned by
``e_1, ..., e_n``.  All maps are vectorised over leading axes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .errors import ConjugatePointError, DomainError

__all__ = [
    "ModelSpace",
    "GeodesicSetup",
    "CurvatureProfile",
    "RicciData",
    "AssumptionReport",
    "exp_map",
    "log_map",
    "parallel_transport",
    "dist_hessian_eigs",
    "max_admissible_radius",
    "check_assumptions",
]

KINDS = ("flat", "sphere", "hyperbolic")
_ANTIPODE_TOL = 1e-9


def _sinc(theta):
    """sin(theta)/theta, stable at 0."""
    return np.sinc(np.asarray(theta) / np.pi)


def _sinhc(theta):
    """sinh(theta)/theta, stable at 0."""
    theta = np.asarray(theta, dtype=float)
    small = np.abs(theta) < 1e-4
    safe = np.where(small, 1.0, theta)
    return np.where(small, 1.0 + theta**2 / 6.0, np.sinh(safe) / safe)


@dataclass(frozen=True)
class ModelSpace:
    """A complete simply connected space of constant sectional curvature.

    Parameters
    ----------
    kind : {'flat', 'sphere', 'hyperbolic'}
    kappa_curv : float
        Sectional curvature; its sign must match ``kind``.
    n : int
        Intrinsic dimension, at least 2.
    """

    kind: str
    kappa_curv: float
    n: int

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DomainError(f"unknown space kind {self.kind!r}")
        k = float(self.kappa_curv)
        if not np.isfinite(k):
            raise DomainError("curvature must be finite")
        expected = {"flat": k == 0.0, "sphere": k > 0.0, "hyperbolic": k < 0.0}
        if not expected[self.kind]:
            raise DomainError(
                f"kind {self.kind!r} is inconsistent with curvature {k}"
            )
        if int(self.n) != self.n or self.n < 2:
            raise DomainError(
                "dimension n must be an integer >= 2; for n = 1 the transverse "
                "curvature block is empty and e0 = 1 trivially"
            )
        object.__setattr__(self, "kappa_curv", k)
        object.__setattr__(self, "n", int(self.n))

    @classmethod
    def from_curvature(cls, kappa: float, n: int) -> "ModelSpace":
        """Pick the model space whose kind matches the sign of ``kappa``."""
        kind = "flat" if kappa == 0 else ("sphere" if kappa > 0 else "hyperbolic")
        return cls(kind, kappa, n)

    # -- basic data -------------------------------------------------------

    @property
    def radius(self) -> float:
        """Curvature radius ``1/sqrt(|kappa|)`` (inf when flat)."""
        if self.kind == "flat":
            return np.inf
        return 1.0 / np.sqrt(abs(self.kappa_curv))

    @property
    def ambient_dim(self) -> int:
        return self.n if self.kind == "flat" else self.n + 1

    @property
    def injectivity_radius(self) -> float:
        return np.pi * self.radius if self.kind == "sphere" else np.inf

    @property
    def metric_signs(self) -> np.ndarray:
        """Diagonal of the ambient metric."""
        g = np.ones(self.ambient_dim)
        if self.kind == "hyperbolic":
            g[0] = -1.0
        return g

    def inner(self, u, v):
        """Ambient inner product (Minkowski for the hyperboloid)."""
        return np.sum(np.asarray(u) * self.metric_signs * np.asarray(v), axis=-1)

    def norm(self, v):
        """Norm of tangent vectors."""
        return np.sqrt(np.maximum(self.inner(v, v), 0.0))

    def base_point(self) -> np.ndarray:
        p = np.zeros(self.ambient_dim)
        if self.kind != "flat":
            p[0] = self.radius
        return p

    def base_frame(self) -> np.ndarray:
        """Orthonormal basis of the tangent space at ``base_point`` as columns."""
        E = np.zeros((self.ambient_dim, self.n))
        off = 0 if self.kind == "flat" else 1
        E[off:, :] = np.eye(self.n)
        return E

    # -- projections ------------------------------------------------------

    def project_point(self, p):
        """Pull an ambient vector back onto the model space."""
        p = np.array(p, dtype=float)
        if self.kind == "sphere":
            return p * (self.radius / np.linalg.norm(p, axis=-1, keepdims=True))
        if self.kind == "hyperbolic":
            spatial = p[..., 1:]
            p[..., 0] = np.sqrt(self.radius**2 + np.sum(spatial**2, axis=-1))
        return p

    def project_tangent(self, p, v):
        """Remove the normal component of ``v`` at ``p``."""
        v = np.asarray(v, dtype=float)
        if self.kind == "flat":
            return v
        p = np.asarray(p, dtype=float)
        # <p, p> = +R^2 on the sphere and -R^2 on the hyperboloid
        pp = self.radius**2 * (1.0 if self.kind == "sphere" else -1.0)
        return v - (self.inner(p, v) / pp)[..., None] * p

    # -- maps -------------------------------------------------------------

    def dist(self, p, q):
        """Geodesic distance, computed from chord lengths for stability."""
        p = np.asarray(p, dtype=float)
        q = np.asarray(q, dtype=float)
        d = p - q
        if self.kind == "flat":
            return np.linalg.norm(d, axis=-1)
        R = self.radius
        chord = self.norm(d)
        if self.kind == "sphere":
            return 2.0 * R * np.arcsin(np.clip(chord / (2.0 * R), 0.0, 1.0))
        return 2.0 * R * np.arcsinh(chord / (2.0 * R))

    def exp_map(self, p, v):
        """Endpoint of the geodesic from ``p`` with initial velocity ``v``.

        Raises
        ------
        DomainError
            On the sphere when ``|v|`` reaches the injectivity radius.
        """
        p = np.asarray(p, dtype=float)
        v = self.project_tangent(p, v)
        if self.kind == "flat":
            return p + v
        R = self.radius
        theta = self.norm(v) / R
        if self.kind == "sphere":
            if np.any(theta >= np.pi):
                raise DomainError("tangent vector exceeds the injectivity radius")
            q = np.cos(theta)[..., None] * p + _sinc(theta)[..., None] * v
        else:
            q = np.cosh(theta)[..., None] * p + _sinhc(theta)[..., None] * v
        return self.project_point(q)

    def log_map(self, p, q):
        """Initial velocity of the minimal geodesic from ``p`` to ``q``.

        Raises
        ------
        DomainError
            On the sphere when ``q`` is (numerically) antipodal to ``p``.
        """
        p = np.asarray(p, dtype=float)
        q = np.asarray(q, dtype=float)
        if self.kind == "flat":
            return q - p
        R = self.radius
        theta = self.dist(p, q) / R
        u = self.project_tangent(p, q)
        if self.kind == "sphere":
            if np.any(theta >= np.pi - _ANTIPODE_TOL):
                raise DomainError("points are antipodal; log is undefined")
            scale = 1.0 / _sinc(theta)
        else:
            scale = 1.0 / _sinhc(theta)
        # |u| = R sin(theta) (R sinh(theta)), so the rescaled u has length R theta
        return self.project_tangent(p, scale[..., None] * u)

    def parallel_transport(self, p, q, v):
        """Transport ``v`` (tangent at ``p``) along the minimal geodesic to ``q``.

        ``v`` may carry a trailing frame axis: shape ``(..., D)`` or
        ``(..., D, k)`` for ``k`` vectors stored as columns.
        """
        p = np.asarray(p, dtype=float)
        q = np.asarray(q, dtype=float)
        v = np.asarray(v, dtype=float)
        if self.kind == "flat":
            return v.copy()
        cols = v.ndim == p.ndim + 1
        if cols:
            # frame columns become a batch axis
            v = np.swapaxes(v, -1, -2)
            p = p[..., None, :]
            q = q[..., None, :]
        pq = self.inner(p, q)
        R2 = self.radius**2
        if self.kind == "sphere":
            if np.any(pq <= -R2 * (1.0 - 1e-15)):
                raise DomainError("points are antipodal; transport is undefined")
            coef = -self.inner(q, v) / (R2 + pq)
        else:
            coef = self.inner(q, v) / (R2 - pq)
        out = self.project_tangent(q, v + coef[..., None] * (p + q))
        return np.swapaxes(out, -1, -2) if cols else out

    def frame_coords(self, E, v):
        """Coordinates of tangent vectors ``v`` in the frame ``E`` (columns)."""
        return np.einsum("...dk,...d->...k", E, self.metric_signs * np.asarray(v))

    def orthonormalize(self, p, E):
        """Re-orthonormalise a frame at ``p`` by Gram-Schmidt.

        Returns
        -------
        E : ndarray
            Corrected frame, same shape as the input.
        drift : float
            Largest entry of ``|E^T G E - I|`` before the correction.
        """
        E = self.project_tangent(
            np.asarray(p)[..., None, :], np.swapaxes(np.asarray(E, float), -1, -2)
        )
        gram = np.einsum("...id,d,...jd->...ij", E, self.metric_signs, E)
        drift = float(np.max(np.abs(gram - np.eye(self.n)))) if E.size else 0.0
        out = np.empty_like(E)
        for k in range(self.n):
            e = E[..., k, :]
            for j in range(k):
                e = e - self.inner(out[..., j, :], e)[..., None] * out[..., j, :]
            out[..., k, :] = e / self.norm(e)[..., None]
        return np.swapaxes(out, -1, -2), drift

    def random_tangent(self, rng, p, scale=1.0):
        """Tangent vectors at ``p`` whose length is that of an n-dim Gaussian."""
        p = np.asarray(p, dtype=float)
        v = self.project_tangent(p, rng.standard_normal(p.shape))
        length = np.linalg.norm(rng.standard_normal(p.shape[:-1] + (self.n,)), axis=-1)
        nv = np.maximum(self.norm(v), 1e-300)
        return v * (scale * length / nv)[..., None]

    def random_point(self, rng, size=None, spread=1.0):
        """Random points obtained by shooting from the base point."""
        shape = (() if size is None else (size,)) + (self.ambient_dim,)
        base = np.broadcast_to(self.base_point(), shape)
        v = self.random_tangent(rng, base, spread)
        if self.kind == "sphere":
            lim = 0.9 * self.injectivity_radius
            nv = self.norm(v)[..., None]
            v = np.where(nv > lim, v * lim / np.maximum(nv, 1e-300), v)
        return self.exp_map(base, v)


def exp_map(space: ModelSpace, p, v):
    """Functional form of :meth:`ModelSpace.exp_map`."""
    return space.exp_map(p, v)


def log_map(space: ModelSpace, p, q):
    """Functional form of :meth:`ModelSpace.log_map`."""
    return space.log_map(p, q)


def parallel_transport(space: ModelSpace, p, q, v):
    """Functional form of :meth:`ModelSpace.parallel_transport`."""
    return space.parallel_transport(p, q, v)


def dist_hessian_eigs(space: ModelSpace, s):
    """Eigenvalues of the Hessian of ``d(., y)^2 / 2`` at distance ``s``.

    Returns
    -------
    radial, tangential : ndarray
        The radial eigenvalue is 1.  The tangential one is
        ``a s cot(a s)`` on the sphere and ``a s coth(a s)`` on hyperbolic
        space with ``a = sqrt(|kappa|)``, and 1 when flat.

    Raises
    ------
    DomainError
        For negative or non-finite ``s``.
    ConjugatePointError
        On the sphere, for ``s`` at or beyond the conjugate distance ``pi / a``.
    """
    s = np.asarray(s, dtype=float)
    if np.any(s < 0) or not np.all(np.isfinite(s)):
        raise DomainError("distance must be finite and non-negative")
    radial = np.ones_like(s)
    if space.kind == "flat":
        return radial, np.ones_like(s)
    a = np.sqrt(abs(space.kappa_curv))
    x = a * s
    if space.kind == "sphere":
        if np.any(x >= np.pi):
            raise ConjugatePointError("distance reaches the conjugate locus")
        tang = np.cos(x) / _sinc(x)
    else:
        tang = np.cosh(x) / _sinhc(x)
    return radial, tang


def max_admissible_radius(space: ModelSpace) -> float:
    """Largest tube radius on which the tangential Hessian stays above 1/2."""
    if space.kind != "sphere":
        return np.inf
    root = brentq(lambda s: s / np.tan(s) - 0.5, 1e-6, np.pi / 2, xtol=1e-15)
    return root * space.radius


@dataclass(frozen=True)
class GeodesicSetup:
    """Endpoints, initial velocity and tube radius of the reference geodesic.

    ``x`` is the base point of the model space and ``y = exp_x(xi)`` with
    ``xi = rho * frame[:, 0]``.
    """

    space: ModelSpace
    rho: float
    r_tube: float
    x: np.ndarray = field(repr=False)
    y: np.ndarray = field(repr=False)
    xi: np.ndarray = field(repr=False)
    frame: np.ndarray = field(repr=False)

    @classmethod
    def build(cls, space: ModelSpace, rho: float, r_tube: float) -> "GeodesicSetup":
        rho = float(rho)
        r_tube = float(r_tube)
        if not rho > 0:
            raise DomainError("rho must be positive")
        if not r_tube > rho:
            raise DomainError("the tube must contain x: need rho < r_tube")
        if space.kind == "sphere" and rho >= space.injectivity_radius:
            raise DomainError("rho must be below the injectivity radius")
        x = space.base_point()
        frame = space.base_frame()
        xi = rho * frame[:, 0]
        y = space.exp_map(x, xi)
        return cls(space, rho, r_tube, x, y, xi, frame)

    @property
    def n(self) -> int:
        return self.space.n

    @property
    def xi_frame(self) -> np.ndarray:
        """``xi`` in frame coordinates, i.e. ``rho * e_1``."""
        return self.space.frame_coords(self.frame, self.xi)

    def geodesic(self, t):
        """Points ``c(t) = exp_x(t xi)``; ``t`` may be an array."""
        t = np.asarray(t, dtype=float)
        return self.space.exp_map(
            np.broadcast_to(self.x, t.shape + self.x.shape), t[..., None] * self.xi
        )

    def ricci(self) -> "RicciData":
        return RicciData.from_space(self.space)


@dataclass(frozen=True)
class RicciData:
    """Ricci operator in an orthonormal frame (constant curvature)."""

    ricci_operator: np.ndarray

    @classmethod
    def from_space(cls, space: ModelSpace) -> "RicciData":
        return cls(space.kappa_curv * (space.n - 1) * np.eye(space.n))


@dataclass(frozen=True)
class CurvatureProfile:
    """Samples of ``R(t)`` on a uniform grid of [0, 1].

    Between nodes ``R`` is interpolated linearly, which is exact for
    constant curvature.
    """

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 3 or v.shape[1] != v.shape[2] or v.shape[0] < 2:
            raise DomainError("profile values must have shape (m+1, n, n)")
        if not np.all(np.isfinite(v)):
            raise DomainError("profile values must be finite")
        if np.max(np.abs(v - np.swapaxes(v, 1, 2))) > 1e-12:
            raise DomainError("curvature samples must be symmetric")
        object.__setattr__(self, "values", v)

    @classmethod
    def constant_curvature(cls, setup: GeodesicSetup, m: int) -> "CurvatureProfile":
        """``R = kappa (rho^2 I - xi xi^T)`` in the parallel frame."""
        xi = setup.xi_frame
        R = setup.space.kappa_curv * (setup.rho**2 * np.eye(setup.n) - np.outer(xi, xi))
        R = 0.5 * (R + R.T)
        return cls(np.broadcast_to(R, (m + 1,) + R.shape).copy())

    @classmethod
    def from_callable(cls, fn, m: int) -> "CurvatureProfile":
        t = np.arange(m + 1) / m
        return cls(np.stack([np.asarray(fn(ti), dtype=float) for ti in t]))

    @property
    def m(self) -> int:
        return self.values.shape[0] - 1

    @property
    def n(self) -> int:
        return self.values.shape[1]

    @property
    def t(self) -> np.ndarray:
        return np.arange(self.m + 1) / self.m

    def at(self, t):
        """Linear interpolation of ``R`` at times ``t`` in [0, 1]."""
        t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
        x = t * self.m
        i = np.minimum(np.floor(x).astype(int), self.m - 1)
        w = (x - i)[..., None, None]
        return (1.0 - w) * self.values[i] + w * self.values[i + 1]

    def reversed_at(self, t):
        """The reversed profile ``R(1 - t)``."""
        return self.at(1.0 - np.asarray(t, dtype=float))

    def derivative(self, t):
        """Slope of the interpolant (one-sided at nodes, from the left at 1)."""
        t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
        i = np.clip(np.ceil(t * self.m).astype(int) - 1, 0, self.m - 1)
        return (self.values[i + 1] - self.values[i]) * self.m

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.values)


@dataclass
class AssumptionReport:
    """Outcome of :func:`check_assumptions`.

    ``clauses`` maps clause ids to pass/fail.  ``clause-1``: the tube
    contains ``x`` and its closure avoids the cut locus of ``y``.
    ``clause-2``: the tangential Hessian of ``d(., y)^2/2`` exceeds 1/2 on
    the tube.
    """

    clauses: dict
    inf_tangential_eig: float
    max_admissible_r_tube: float
    messages: list

    @property
    def passed(self) -> bool:
        return all(self.clauses.values())

    def to_dict(self) -> dict:
        return {
            "clauses": dict(self.clauses),
            "inf_tangential_eig": float(self.inf_tangential_eig),
            "max_admissible_r_tube": float(self.max_admissible_r_tube),
            "messages": list(self.messages),
            "passed": self.passed,
        }


def check_assumptions(setup: GeodesicSetup) -> AssumptionReport:
    """Check the tube hypotheses clause by clause (report only)."""
    space = setup.space
    r = setup.r_tube
    msgs = []
    c1 = setup.rho < r and r < space.injectivity_radius
    if not c1:
        msgs.append(
            "assumption clause (1) violated: need rho < r_tube and r_tube below "
            f"the cut distance {space.injectivity_radius:.6g}"
        )
    if space.kind == "sphere":
        if r >= space.injectivity_radius:
            inf_eig = -np.inf
        else:
            # s cot s decreases on (0, pi): the infimum sits at the tube boundary
            inf_eig = float(dist_hessian_eigs(space, r)[1])
    else:
        inf_eig = 1.0
    c2 = inf_eig > 0.5
    r_max = max_admissible_radius(space)
    if not c2:
        msgs.append(
            "assumption clause (2) violated: tangential Hessian of d(.,y)^2/2 "
            f"drops to {inf_eig:.6g} <= 1/2 on the tube; r_tube must stay "
            f"below {r_max:.6g}"
        )
    return AssumptionReport({"clause-1": bool(c1), "clause-2": bool(c2)}, inf_eig, r_max, msgs)
