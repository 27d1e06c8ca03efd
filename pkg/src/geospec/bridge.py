"""Pinned Brownian bridges on the model spaces.

Paths are generated by Euler-Maruyama in a frame carried along by
parallel transport.  The bridge drift is the leading short-time term
``log_gamma(y) / (1 - t)``, which is exact on flat space.  The last step
is forced onto ``y`` and the implied increment is recorded.

Seeds
-----
Paths are drawn in batches of ``BATCH_SIZE``.  Batch ``b`` draws from
``SeedSequence(seed, spawn_key=(b, 0))``; paths rejected for leaving the
chart are redrawn from ``spawn_key=(b, attempt)``.  The stream depends
only on ``(seed, b, attempt)``, so results do not depend on the number of
workers.
"""

from __future__ import annotations

import csv
import gzip
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateSampleError, DomainError, NumericalError
from .geometry import GeodesicSetup, ModelSpace
from .pathops import GridFunction

__all__ = [
    "BATCH_SIZE",
    "BridgeConfig",
    "BridgePath",
    "BridgeBatch",
    "TubeReport",
    "StepSizeWarning",
    "sample_bridge",
    "sample_bridges",
    "iter_bridge_batches",
    "map_bridge_batches",
    "exact_flat_bridge",
    "stochastic_integral",
    "resample_cells",
    "tube_statistics",
    "develop",
    "write_path_csv",
]

BATCH_SIZE = 500
DRIFT_MODES = ("semiclassical", "exact_flat")


class StepSizeWarning(UserWarning):
    """The time step is coarse compared with the bridge variance."""


@dataclass(frozen=True)
class BridgeConfig:
    """Sampler settings.

    Parameters
    ----------
    lam : float
        Inverse variance parameter.
    m_steps : int
        Number of time steps, at least 50.
    seed : int
        Root seed (64-bit).
    drift_mode : {'semiclassical', 'exact_flat'}
    pin_mode : {'force_last_step'}
    retry_budget : int
        Redraws allowed per batch for paths that leave the chart.
    """

    lam: float
    m_steps: int = 200
    seed: int = 0
    drift_mode: str = "semiclassical"
    pin_mode: str = "force_last_step"
    retry_budget: int = 10

    def __post_init__(self):
        if not (np.isfinite(self.lam) and self.lam > 0):
            raise DomainError("lambda must be positive")
        if int(self.m_steps) != self.m_steps or self.m_steps < 50:
            raise DomainError("m_steps must be an integer >= 50")
        if self.drift_mode not in DRIFT_MODES:
            raise DomainError(f"unknown drift mode {self.drift_mode!r}")
        if self.pin_mode != "force_last_step":
            raise DomainError(f"unknown pin mode {self.pin_mode!r}")
        if not 0 <= int(self.seed) < 2**64:
            raise DomainError("seed must be a 64-bit unsigned integer")

    @property
    def h(self) -> float:
        return 1.0 / self.m_steps


@dataclass
class BridgeBatch:
    """A collection of bridge paths on a common grid.

    Attributes
    ----------
    points : (N, m+1, D)
        Embedded path points, ``points[:, 0] = x`` and ``points[:, m] = y``.
    increments : (N, m, n)
        Anti-development increments ``db_i`` in the transported frame.
    noise : (N, m, n)
        Gaussian parts of the increments (zero on the forced last step).
    to_target : (N, m+1, n)
        Frame coordinates of ``log_gamma_i(y)``.
    sup_dist : (N,)
        ``max_i d(gamma_i, c(t_i))``.
    in_tube : (N,)
        All points within ``r_tube`` of ``y``.
    noise_var : (m,)
        Per-component variance of the Gaussian part of each step.
    """

    config: BridgeConfig
    setup: GeodesicSetup = field(repr=False)
    points: np.ndarray = field(repr=False)
    increments: np.ndarray = field(repr=False)
    noise: np.ndarray = field(repr=False)
    to_target: np.ndarray = field(repr=False)
    sup_dist: np.ndarray = field(repr=False)
    in_tube: np.ndarray = field(repr=False)
    noise_var: np.ndarray = field(repr=False)
    frame_drift: float = 0.0
    retries: int = 0

    @property
    def n_paths(self) -> int:
        return self.points.shape[0]

    @property
    def m(self) -> int:
        return self.increments.shape[1]

    @property
    def t(self) -> np.ndarray:
        return np.arange(self.m + 1) / self.m

    def subset(self, idx) -> "BridgeBatch":
        idx = np.asarray(idx)
        return BridgeBatch(
            self.config,
            self.setup,
            self.points[idx],
            self.increments[idx],
            self.noise[idx],
            self.to_target[idx],
            self.sup_dist[idx],
            self.in_tube[idx],
            self.noise_var,
            self.frame_drift,
            self.retries,
        )

    def path(self, i: int) -> "BridgePath":
        return BridgePath(
            self.config,
            self.setup,
            self.points[i],
            self.increments[i],
            self.noise[i],
            self.to_target[i],
            float(self.sup_dist[i]),
            bool(self.in_tube[i]),
        )


@dataclass
class BridgePath:
    """A single bridge path; ``frames`` is kept by :func:`sample_bridge`."""

    config: BridgeConfig
    setup: GeodesicSetup = field(repr=False)
    points: np.ndarray = field(repr=False)
    increments: np.ndarray = field(repr=False)
    noise: np.ndarray = field(repr=False)
    to_target: np.ndarray = field(repr=False)
    sup_dist_to_geodesic: float = 0.0
    in_tube: bool = True
    frames: np.ndarray | None = field(default=None, repr=False)

    @property
    def m(self) -> int:
        return self.increments.shape[0]

    @property
    def t(self) -> np.ndarray:
        return np.arange(self.m + 1) / self.m

    def development(self) -> np.ndarray:
        """``b(t_j) = sum_{i<j} db_i``, shape ``(m+1, n)``."""
        b = np.zeros((self.m + 1, self.increments.shape[1]))
        b[1:] = np.cumsum(self.increments, axis=0)
        return b


def _rng(seed, batch, attempt):
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(batch, attempt)))


def _run_semiclassical(space: ModelSpace, setup, cfg, Z, keep_frames):
    """Integrate a batch; returns arrays and a per-path failure mask."""
    B, m, n = Z.shape
    h = cfg.h
    sd = np.sqrt(h / cfg.lam)
    t = np.arange(m + 1) / m
    D = space.ambient_dim
    y = setup.y
    chart_limit = 0.9 * space.injectivity_radius
    pts = np.empty((B, m + 1, D))
    inc = np.zeros((B, m, n))
    noise = np.zeros((B, m, n))
    tgt = np.zeros((B, m + 1, n))
    frames = np.empty((B, m + 1, D, n)) if keep_frames else None
    failed = np.zeros(B, dtype=bool)
    gamma = np.broadcast_to(setup.x, (B, D)).copy()
    E = np.broadcast_to(setup.frame, (B, D, n)).copy()
    drift_max = 0.0
    pts[:, 0] = gamma
    for i in range(m):
        if keep_frames:
            frames[:, i] = E
        d = space.dist(gamma, y)
        bad = ~np.isfinite(d) | (d >= chart_limit)
        if np.any(bad):
            failed |= bad
            gamma[bad] = setup.x
            E[bad] = setup.frame
        w = space.frame_coords(E, space.log_map(gamma, np.broadcast_to(y, gamma.shape)))
        tgt[:, i] = w
        if i == m - 1:
            db = w
        else:
            noise[:, i] = sd * Z[:, i]
            db = w * (h / (1.0 - t[i])) + noise[:, i]
        inc[:, i] = db
        u = np.einsum("bdk,bk->bd", E, db)
        step_bad = space.norm(u) >= 0.5 * space.injectivity_radius
        if np.any(step_bad):
            failed |= step_bad
            u[step_bad] = 0.0
        new = space.exp_map(gamma, u) if i < m - 1 else np.broadcast_to(y, gamma.shape).copy()
        E = space.parallel_transport(gamma, new, E)
        E, drift = space.orthonormalize(new, E)
        drift_max = max(drift_max, drift)
        gamma = new
        pts[:, i + 1] = gamma
    if keep_frames:
        frames[:, m] = E
    return pts, inc, noise, tgt, frames, failed, drift_max


def _run_exact_flat(setup, cfg, Z):
    B, m, n = Z.shape
    h = cfg.h
    t = np.arange(m + 1) / m
    x = setup.x
    y = setup.y
    pts = np.empty((B, m + 1, n))
    pts[:, 0] = x
    noise = np.zeros((B, m, n))
    g = np.broadcast_to(x, (B, n)).copy()
    for i in range(m):
        if i == m - 1:
            new = np.broadcast_to(y, g.shape).copy()
        else:
            sd = np.sqrt(h * (1.0 - t[i + 1]) / ((1.0 - t[i]) * cfg.lam))
            noise[:, i] = sd * Z[:, i]
            new = g + (y - g) * (h / (1.0 - t[i])) + noise[:, i]
        pts[:, i + 1] = new
        g = new
    inc = np.diff(pts, axis=1)
    tgt = y - pts
    return pts, inc, noise, tgt, None, np.zeros(B, dtype=bool), 0.0


def _sample_batch(cfg, setup, size, batch, keep_frames=False):
    space = setup.space
    n = space.n
    m = cfg.m_steps
    exact = cfg.drift_mode == "exact_flat"
    run = (lambda Z: _run_exact_flat(setup, cfg, Z)) if exact else (
        lambda Z: _run_semiclassical(space, setup, cfg, Z, keep_frames)
    )
    Z = _rng(cfg.seed, batch, 0).standard_normal((size, m, n))
    out = list(run(Z))
    failed = out[5]
    retries = 0
    attempt = 0
    while np.any(failed):
        attempt += 1
        if attempt > cfg.retry_budget:
            raise NumericalError(
                f"bridge paths kept leaving the chart after {cfg.retry_budget} retries "
                f"(seed={cfg.seed}, batch={batch})"
            )
        idx = np.flatnonzero(failed)
        retries += idx.size
        Zr = _rng(cfg.seed, batch, attempt).standard_normal((idx.size, m, n))
        sub = run(Zr)
        for k in (0, 1, 2, 3):
            out[k][idx] = sub[k]
        if keep_frames:
            out[4][idx] = sub[4]
        out[6] = max(out[6], sub[6])
        failed = np.zeros(size, dtype=bool)
        failed[idx] = sub[5]
    return out, retries


def _finish(cfg, setup, pts, inc, noise, tgt, drift, retries):
    space = setup.space
    m = inc.shape[1]
    c = setup.geodesic(np.arange(m + 1) / m)
    sup = np.max(space.dist(pts, c[None]), axis=1)
    dist_y = np.linalg.norm(tgt, axis=-1)
    in_tube = np.all(dist_y < setup.r_tube, axis=1)
    return BridgeBatch(
        cfg, setup, pts, inc, noise, tgt, sup, in_tube, _noise_var(cfg), drift, retries
    )


def _noise_var(cfg):
    m = cfg.m_steps
    h = cfg.h
    var = np.full(m, h / cfg.lam)
    if cfg.drift_mode == "exact_flat":
        t = np.arange(m + 1) / m
        var = h * (1.0 - t[1:]) / ((1.0 - t[:-1]) * cfg.lam)
    var[m - 1] = 0.0
    return var


def _validate(cfg, setup):
    if cfg.drift_mode == "exact_flat" and setup.space.kind != "flat":
        raise DomainError("the exact Gaussian bridge exists on flat space only")
    if cfg.m_steps / cfg.lam < 10:
        warnings.warn(
            f"coarse time step: m/lambda = {cfg.m_steps / cfg.lam:.3g} < 10",
            StepSizeWarning,
            stacklevel=3,
        )


def _batch_sizes(n_paths, batch_size):
    if n_paths < 1:
        raise DomainError("n_paths must be positive")
    sizes = [batch_size] * (n_paths // batch_size)
    if n_paths % batch_size:
        sizes.append(n_paths % batch_size)
    return sizes


def iter_bridge_batches(
    cfg: BridgeConfig,
    setup: GeodesicSetup,
    n_paths: int,
    batch_size: int = BATCH_SIZE,
):
    """Yield the batches of :func:`sample_bridges` one at a time.

    The concatenation of the yielded batches equals ``sample_bridges`` with
    the same arguments; memory stays bounded by one batch.
    """
    _validate(cfg, setup)
    for b, size in enumerate(_batch_sizes(n_paths, batch_size)):
        out, retries = _sample_batch(cfg, setup, size, b)
        yield _finish(cfg, setup, *out[:4], out[6], retries)


def map_bridge_batches(
    fn,
    cfg: BridgeConfig,
    setup: GeodesicSetup,
    n_paths: int,
    workers: int = 1,
    batch_size: int = BATCH_SIZE,
) -> list:
    """``[fn(batch) for batch in iter_bridge_batches(...)]`` on a thread pool.

    Each batch is dropped once ``fn`` has reduced it; results keep batch order.
    """
    _validate(cfg, setup)
    sizes = _batch_sizes(n_paths, batch_size)

    def job(b):
        out, retries = _sample_batch(cfg, setup, sizes[b], b)
        return fn(_finish(cfg, setup, *out[:4], out[6], retries))

    if workers > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(job, range(len(sizes))))
    return [job(b) for b in range(len(sizes))]


def sample_bridges(
    cfg: BridgeConfig,
    setup: GeodesicSetup,
    n_paths: int,
    workers: int = 1,
    batch_size: int = BATCH_SIZE,
) -> BridgeBatch:
    """Draw ``n_paths`` bridges; batches may run on a thread pool."""
    _validate(cfg, setup)
    sizes = _batch_sizes(n_paths, batch_size)

    def job(b):
        return _sample_batch(cfg, setup, sizes[b], b)

    if workers > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(job, range(len(sizes))))
    else:
        parts = [job(b) for b in range(len(sizes))]
    cat = [np.concatenate([p[0][k] for p in parts]) for k in range(4)]
    drift = max(p[0][6] for p in parts)
    retries = sum(p[1] for p in parts)
    return _finish(cfg, setup, *cat, drift, retries)


def sample_bridge(cfg: BridgeConfig, setup: GeodesicSetup) -> BridgePath:
    """One path with its frames (first path of batch 0 of the seed)."""
    _validate(cfg, setup)
    out, retries = _sample_batch(cfg, setup, 1, 0, keep_frames=cfg.drift_mode != "exact_flat")
    batch = _finish(cfg, setup, out[0], out[1], out[2], out[3], out[6], retries)
    path = batch.path(0)
    if out[4] is not None:
        path.frames = out[4][0]
    else:
        path.frames = np.broadcast_to(setup.frame, (cfg.m_steps + 1,) + setup.frame.shape).copy()
    return path


def exact_flat_bridge(cfg: BridgeConfig, setup: GeodesicSetup, n_paths: int | None = None):
    """Exact Gaussian bridge on flat space (the sampler oracle).

    Returns a :class:`BridgePath` when ``n_paths`` is None, else a batch.
    """
    if setup.space.kind != "flat":
        raise DomainError("the exact Gaussian bridge exists on flat space only")
    cfg = BridgeConfig(cfg.lam, cfg.m_steps, cfg.seed, "exact_flat", cfg.pin_mode, cfg.retry_budget)
    if n_paths is None:
        return sample_bridge(cfg, setup)
    return sample_bridges(cfg, setup, n_paths)


def resample_cells(values: np.ndarray, m_new: int) -> np.ndarray:
    """Cell averages of a piecewise-constant function on a new uniform grid."""
    v = np.asarray(values, dtype=float)
    m = v.shape[0]
    if m == m_new:
        return v.copy()
    cum = np.zeros((m + 1,) + v.shape[1:])
    cum[1:] = np.cumsum(v, axis=0) / m
    tn = np.arange(m_new + 1) / m_new
    to = np.arange(m + 1) / m
    C = np.stack([np.interp(tn, to, cum[:, a]) for a in range(v.shape[1])], axis=1)
    return np.diff(C, axis=0) * m_new


def stochastic_integral(paths, phi, xi_frame=None):
    """``int phi . db - <xi, int phi>`` by left-point sums.

    ``paths`` is a :class:`BridgePath` (returns a float) or a
    :class:`BridgeBatch` (returns an array).  ``xi_frame`` defaults to the
    setup's ``xi`` in frame coordinates.
    """
    vals = phi.values if isinstance(phi, GridFunction) else np.asarray(phi, dtype=float)
    inc = paths.increments
    m = inc.shape[-2]
    vals = resample_cells(vals, m)
    xi = paths.setup.xi_frame if xi_frame is None else np.asarray(xi_frame, dtype=float)
    pairing = np.einsum("...in,in->...", inc, vals)
    out = pairing - float(xi @ vals.mean(axis=0))
    return float(out) if np.ndim(out) == 0 else out


@dataclass
class TubeReport:
    """Tube membership summary."""

    n_total: int
    n_accepted: int
    accepted_idx: np.ndarray = field(repr=False)
    hist_counts: np.ndarray = field(repr=False)
    hist_edges: np.ndarray = field(repr=False)

    @property
    def acceptance(self) -> float:
        return self.n_accepted / self.n_total

    @property
    def acceptance_se(self) -> float:
        p = self.acceptance
        return float(np.sqrt(p * (1 - p) / self.n_total))

    def to_dict(self) -> dict:
        return {
            "n_total": int(self.n_total),
            "n_accepted": int(self.n_accepted),
            "acceptance": float(self.acceptance),
            "hist_counts": [int(c) for c in self.hist_counts],
            "hist_edges": [float(e) for e in self.hist_edges],
        }


def tube_statistics(paths, bins: int = 20, require_accepted: bool = True) -> TubeReport:
    """Acceptance fraction, sup-distance histogram and accepted indices."""
    if isinstance(paths, BridgeBatch):
        in_tube = paths.in_tube
        sup = paths.sup_dist
    else:
        paths = list(paths)
        if not paths:
            raise DegenerateSampleError("empty path collection")
        in_tube = np.array([p.in_tube for p in paths])
        sup = np.array([p.sup_dist_to_geodesic for p in paths])
    if in_tube.size == 0:
        raise DegenerateSampleError("empty path collection")
    idx = np.flatnonzero(in_tube)
    if require_accepted and idx.size == 0:
        raise DegenerateSampleError("no sampled path stayed inside the tube")
    counts, edges = np.histogram(sup, bins=bins)
    return TubeReport(int(in_tube.size), int(idx.size), idx, counts, edges)


def develop(space: ModelSpace, x, frame, increments):
    """Roll increments back onto the manifold: ``gamma_{i+1} = exp(E_i db_i)``."""
    x = np.asarray(x, dtype=float)
    E = np.asarray(frame, dtype=float)
    pts = [x]
    g = x
    for db in np.asarray(increments):
        new = space.exp_map(g, E @ db)
        E = space.orthonormalize(new, space.parallel_transport(g, new, E))[0]
        pts.append(new)
        g = new
    return np.array(pts)


def write_path_csv(path: BridgePath, filename, compress: bool = False) -> None:
    """Dump ``t``, the embedded point and the increment of the following step."""
    D = path.points.shape[1]
    n = path.increments.shape[1]
    opener = gzip.open if compress else open
    with opener(filename, "wt", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"gamma_{k}" for k in range(D)] + [f"db_{k}" for k in range(n)])
        for i, ti in enumerate(path.t):
            db = path.increments[i] if i < path.m else [""] * n
            w.writerow([repr(float(ti))] + [repr(float(v)) for v in path.points[i]]
                       + [v if v == "" else repr(float(v)) for v in db])
