"""Command line front end: configuration, orchestration and reporting.

Every subcommand resolves a :class:`RunConfig` (defaults, then a TOML file,
then ``GEOSPEC_SEED``, then flags), runs, and writes its artifacts plus a
``manifest.json`` into the output directory.  Exit codes: 0 success,
1 numerical-quality failure, 2 invalid input.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import platform
import sys
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy
import scipy.stats

from . import __version__
from .bridge import (
    BridgeConfig,
    StepSizeWarning,
    exact_flat_bridge,
    sample_bridge,
    sample_bridges,
    tube_statistics,
    write_path_csv,
)
from .errors import (
    ConfigError,
    ConjugatePointError,
    DegenerateSampleError,
    DomainError,
    GeospecError,
    NumericalError,
)
from .geometry import (
    CurvatureProfile,
    GeodesicSetup,
    ModelSpace,
    check_assumptions,
)
from .jacobi import OdeGrid, build_K_family, riccati_residual, solve_jacobi
from .pathops import build_bundle, compute_e0, richardson, verify_identities
from .reporting import (
    dumps_json,
    git_blob_hash,
    sha256_file,
    svg_line_plot,
    write_csv,
)
from .semiclassical import (
    CONVERGENCE_COLUMNS,
    CutoffSpec,
    auto_m_path,
    build_trial,
    convergence_study,
    derive_seed,
    estimate_rayleigh,
    ground_state_gap_check,
)

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

__all__ = ["RunConfig", "load_config", "main", "EXIT_OK", "EXIT_QUALITY", "EXIT_INPUT"]

log = logging.getLogger("geospec")

SCHEMA_VERSION = 1
EXIT_OK, EXIT_QUALITY, EXIT_INPUT = 0, 1, 2
FORMATS = ("csv", "json", "svg")

# residuals gated at 1e-3; S S^-1 - I is reported but carries a one-cell
# floor on the grid, so its off-last-cell version is the gated one
IDENTITY_GATES = (
    "SadjS_minus_IplusT",
    "SinvAdj_IplusT_minus_S",
    "S_Sinv_minus_I_offlast",
    "IplusT_inv_minus_Sinv_SinvAdj",
)
IDENTITY_TOL = 1e-3
DUALITY_TOL = 1e-4


# -- configuration -----------------------------------------------------------


@dataclass
class SpaceConfig:
    kind: str = "sphere"
    kappa_curv: float = 1.0
    n: int = 2


@dataclass
class SetupConfig:
    rho: float = 1.0
    r_tube: float = 1.1


@dataclass
class GridConfig:
    m_operator: int = 256
    m_path: int | str = "auto"


@dataclass
class McConfig:
    lambdas: list = field(default_factory=lambda: [16.0, 64.0, 256.0])
    n_paths: int = 10000
    seed: int = 0
    workers: int = 0


@dataclass
class TrialConfig:
    eps: float = 1e-6
    kappa_cut: float | None = None


@dataclass
class OutputConfig:
    directory: str = "geospec-out"
    formats: list = field(default_factory=lambda: list(FORMATS))


@dataclass
class RunConfig:
    """Fully resolved run configuration.

    ``mc.workers = 0`` means one worker per CPU; ``grids.m_path = "auto"``
    picks ``max(200, 10 lambda)`` per lambda; ``trial.kappa_cut = None``
    means ``r_tube / 2``.
    """

    schema_version: int = SCHEMA_VERSION
    space: SpaceConfig = field(default_factory=SpaceConfig)
    setup: SetupConfig = field(default_factory=SetupConfig)
    grids: GridConfig = field(default_factory=GridConfig)
    mc: McConfig = field(default_factory=McConfig)
    trial: TrialConfig = field(default_factory=TrialConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    _SECTIONS = {
        "space": SpaceConfig,
        "setup": SetupConfig,
        "grids": GridConfig,
        "mc": McConfig,
        "trial": TrialConfig,
        "output": OutputConfig,
    }

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a table")
        cfg = cls()
        for key, value in data.items():
            if key == "schema_version":
                if value != SCHEMA_VERSION:
                    raise ConfigError(
                        f"schema_version {value!r} is not supported (expected {SCHEMA_VERSION})"
                    )
                continue
            if key not in cls._SECTIONS:
                raise ConfigError(f"unknown config section [{key}]")
            if not isinstance(value, dict):
                raise ConfigError(f"[{key}] must be a table")
            section = getattr(cfg, key)
            names = {f.name for f in dataclasses.fields(section)}
            for k, v in value.items():
                if k not in names:
                    raise ConfigError(f"unknown key {key}.{k}")
                setattr(section, k, v)
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            **{k: dataclasses.asdict(getattr(self, k)) for k in self._SECTIONS},
        }

    @property
    def workers(self) -> int:
        return self.mc.workers or (os.cpu_count() or 1)

    def m_path_for(self, lam: float) -> int:
        mp = self.grids.m_path
        return auto_m_path(lam) if mp == "auto" else int(mp)

    def validate(self) -> None:
        """Type and range checks; geometric preconditions are left to the modules."""

        def num(section, name, kind=float, positive=True, allow_zero=False):
            v = getattr(section, name)
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ConfigError(f"{name} must be a number, got {v!r}")
            if kind is int and int(v) != v:
                raise ConfigError(f"{name} must be an integer, got {v!r}")
            v = kind(v)
            if positive and not (v > 0 or (allow_zero and v == 0)):
                raise ConfigError(f"{name} must be positive, got {v!r}")
            setattr(section, name, v)

        s = self.space
        if s.kind not in ("flat", "sphere", "hyperbolic"):
            raise ConfigError(f"space.kind must be flat, sphere or hyperbolic, got {s.kind!r}")
        num(s, "kappa_curv", positive=False)
        num(s, "n", int)
        num(self.setup, "rho")
        num(self.setup, "r_tube")
        num(self.grids, "m_operator", int)
        if self.grids.m_path != "auto":
            num(self.grids, "m_path", int)
            if self.grids.m_path < 50:
                raise ConfigError("grids.m_path must be >= 50")
        lams = self.mc.lambdas
        if not isinstance(lams, list) or not lams:
            raise ConfigError("mc.lambdas must be a non-empty list")
        try:
            self.mc.lambdas = [float(x) for x in lams]
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"mc.lambdas must be numbers: {exc}") from None
        if any(x <= 0 for x in self.mc.lambdas):
            raise ConfigError("mc.lambdas must be positive")
        num(self.mc, "n_paths", int)
        num(self.mc, "seed", int, positive=False)
        if not 0 <= self.mc.seed < 2**64:
            raise ConfigError("mc.seed must fit in 64 unsigned bits")
        num(self.mc, "workers", int, allow_zero=True)
        num(self.trial, "eps")
        if self.trial.kappa_cut is not None:
            num(self.trial, "kappa_cut")
        if not isinstance(self.output.directory, str) or not self.output.directory:
            raise ConfigError("output.directory must be a non-empty string")
        bad = set(self.output.formats) - set(FORMATS)
        if bad:
            raise ConfigError(f"unknown output formats {sorted(bad)}")

    def build_space(self) -> ModelSpace:
        s = self.space
        return ModelSpace(s.kind, s.kappa_curv, s.n)

    def build_setup(self) -> GeodesicSetup:
        return GeodesicSetup.build(self.build_space(), self.setup.rho, self.setup.r_tube)


def load_config(path=None, env=None) -> tuple[RunConfig, bytes | None]:
    """Read a TOML config (or defaults) and apply ``GEOSPEC_SEED``.

    Returns the config and the raw file bytes (for the manifest hash).
    """
    env = os.environ if env is None else env
    raw = None
    data = {}
    if path is not None:
        try:
            raw = Path(path).read_bytes()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        try:
            data = tomllib.loads(raw.decode("utf-8"))
        except (tomllib.TOMLDecodeError, UnicodeDecodeError) as exc:
            raise ConfigError(f"config {path} is not valid TOML: {exc}") from None
    cfg = RunConfig.from_dict(data)
    if env.get("GEOSPEC_SEED"):
        try:
            cfg.mc.seed = int(env["GEOSPEC_SEED"])
        except ValueError:
            raise ConfigError(f"GEOSPEC_SEED must be an integer, got {env['GEOSPEC_SEED']!r}") from None
        cfg.validate()
    return cfg, raw


def _apply_flags(cfg: RunConfig, ns) -> RunConfig:
    over = {
        ("space", "kind"): ns.kind,
        ("space", "kappa_curv"): ns.kappa,
        ("space", "n"): ns.dim,
        ("setup", "rho"): ns.rho,
        ("setup", "r_tube"): ns.r_tube,
        ("grids", "m_operator"): ns.m_operator,
        ("grids", "m_path"): ns.m_path,
        ("mc", "lambdas"): ns.lambdas,
        ("mc", "n_paths"): ns.n_paths,
        ("mc", "seed"): ns.seed,
        ("mc", "workers"): ns.workers,
        ("trial", "eps"): ns.eps,
        ("trial", "kappa_cut"): ns.kappa_cut,
        ("output", "directory"): ns.out,
        ("output", "formats"): ns.formats,
    }
    for (sec, key), v in over.items():
        if v is not None:
            setattr(getattr(cfg, sec), key, v)
    cfg.validate()
    return cfg


# -- output handling ---------------------------------------------------------


class Output:
    """Writes artifacts inside one directory and records their hashes."""

    def __init__(self, directory, formats):
        self.root = Path(directory).resolve()
        self.formats = set(formats)
        self.files: list[str] = []

    def _target(self, name: str) -> Path:
        p = (self.root / name).resolve()
        if p.parent != self.root and self.root not in p.parents:
            raise ConfigError(f"refusing to write outside {self.root}: {name}")
        p.parent.mkdir(parents=True, exist_ok=True)
        self.files.append(name)
        return p

    def wants(self, fmt: str) -> bool:
        return fmt in self.formats

    def json(self, name, obj):
        if self.wants("json"):
            self._target(name).write_text(dumps_json(obj), encoding="utf-8")

    def csv(self, name, rows, columns):
        if self.wants("csv"):
            write_csv(rows, columns, self._target(name))

    def svg(self, name, text):
        if self.wants("svg"):
            self._target(name).write_text(text, encoding="utf-8")

    def path_csv(self, name, path):
        if self.wants("csv"):
            write_path_csv(path, self._target(name))

    def manifest(self, command, cfg, raw_config, timings, extra=None):
        """``manifest.json`` (hashed, deterministic) and ``timings.json`` (not hashed)."""
        self.root.mkdir(parents=True, exist_ok=True)
        hashes = {f: sha256_file(self.root / f) for f in sorted(set(self.files))}
        man = {
            "command": command,
            "config": cfg.to_dict(),
            "resolved": {
                "kappa_cut": cfg.trial.kappa_cut
                if cfg.trial.kappa_cut is not None
                else cfg.setup.r_tube / 2.0,
                "m_path": {repr(float(l)): cfg.m_path_for(l) for l in cfg.mc.lambdas},
            },
            "versions": {
                "geospec": __version__,
                "numpy": np.__version__,
                "scipy": scipy.__version__,
                "python": platform.python_version(),
            },
            "input_config_git_hash": git_blob_hash(raw_config) if raw_config is not None else None,
            "outputs": hashes,
            "unhashed": ["timings.json"],
        }
        if extra:
            man.update(extra)
        (self.root / "manifest.json").write_text(dumps_json(man), encoding="utf-8")
        (self.root / "timings.json").write_text(
            dumps_json({"command": command, "stages_seconds": timings}), encoding="utf-8"
        )


class _Stages:
    def __init__(self):
        self.t = {}

    def __call__(self, name):
        stages = self

        class _C:
            def __enter__(self):
                self.t0 = time.perf_counter()

            def __exit__(self, *exc):
                stages.t[name] = round(time.perf_counter() - self.t0, 3)

        return _C()


# -- commands ----------------------------------------------------------------


def cmd_geometry(cfg, out, stages):
    with stages("assumptions"):
        setup = cfg.build_setup()
        rep = check_assumptions(setup)
    out.json("geometry.json", {"assumptions": rep.to_dict(), "setup": _setup_dict(setup)})
    if not rep.passed:
        for msg in rep.messages:
            print(msg, file=sys.stderr)
        return EXIT_INPUT, {"passed": False}
    print(
        f"assumptions hold: inf tangential eigenvalue {rep.inf_tangential_eig:.6g}, "
        f"max admissible r_tube {rep.max_admissible_r_tube:.6g}"
    )
    return EXIT_OK, {"passed": True}


def _setup_dict(setup):
    return {
        "kind": setup.space.kind,
        "kappa_curv": setup.space.kappa_curv,
        "n": setup.space.n,
        "rho": setup.rho,
        "r_tube": setup.r_tube,
        "x": setup.x,
        "y": setup.y,
    }


def _identity_quality(res):
    bad = [k for k in IDENTITY_GATES if res[k] > IDENTITY_TOL]
    if res["duality"] > DUALITY_TOL:
        bad.append("duality")
    return bad


def cmd_spectrum(cfg, out, stages):
    setup = cfg.build_setup()
    m = cfg.grids.m_operator
    with stages("operators"):
        bundle = build_bundle(setup, m)
    with stages("spectrum"):
        spec = compute_e0(bundle.T, bundle.S_inv_adj)
    with stages("identities"):
        res = verify_identities(bundle, spec)
    out.json("spectrum.json", {"m": m, "setup": _setup_dict(setup), "spectral": spec.to_dict()})
    rows = [{"identity": k, "residual": v, "gated": k in IDENTITY_GATES or k == "duality"}
            for k, v in sorted(res.items())]
    out.csv("identities.csv", rows, ["identity", "residual", "gated"])
    print(f"e0 = {spec.e0:.10g}  transverse = {spec.e0_transverse:.10g}  (m = {m})")
    print(f"duality gap = {spec.duality_gap:.3g}")
    for r in rows:
        print(f"  {r['identity']:<32s} {r['residual']:.3e}")
    bad = _identity_quality(res)
    if bad:
        print(f"quality failure: {', '.join(bad)}", file=sys.stderr)
        return EXIT_QUALITY, {"e0": spec.e0}
    return EXIT_OK, {"e0": spec.e0}


def _m_ladder(m):
    return [m // 4, m // 2, m] if m // 4 >= 16 else [m]


def cmd_identities(cfg, out, stages):
    setup = cfg.build_setup()
    ms = _m_ladder(cfg.grids.m_operator)
    table = {}
    with stages("identities"):
        for m in ms:
            bundle = build_bundle(setup, m)
            table[m] = verify_identities(bundle, compute_e0(bundle.T, bundle.S_inv_adj))
    keys = sorted(table[ms[-1]])
    rows = []
    for k in keys:
        vals = [table[m][k] for m in ms]
        shrinking = all(b < a or b < 1e-12 for a, b in zip(vals, vals[1:]))
        row = {"identity": k, "shrinking": shrinking}
        row.update({f"m{m}": table[m][k] for m in ms})
        rows.append(row)
    out.csv("identities.csv", rows, ["identity"] + [f"m{m}" for m in ms] + ["shrinking"])
    out.json("identities.json", {"ms": ms, "residuals": {str(m): table[m] for m in ms}})
    for r in rows:
        vals = "  ".join(f"{r[f'm{m}']:.3e}" for m in ms)
        print(f"{r['identity']:<32s} {vals}  {'shrinking' if r['shrinking'] else 'flat'}")
    bad = _identity_quality(table[ms[-1]])
    bad += [r["identity"] + " (not shrinking)" for r in rows
            if r["identity"] in IDENTITY_GATES and not r["shrinking"]]
    if bad:
        print(f"quality failure: {', '.join(bad)}", file=sys.stderr)
        return EXIT_QUALITY, {}
    return EXIT_OK, {}


def cmd_bridge(cfg, out, stages):
    setup = cfg.build_setup()
    report = []
    for k, lam in enumerate(cfg.mc.lambdas):
        m = cfg.m_path_for(lam)
        bc = BridgeConfig(lam, m, derive_seed(cfg.mc.seed, k, 0))
        with stages(f"sample_lambda_{lam:g}"):
            batch = sample_bridges(bc, setup, cfg.mc.n_paths, workers=cfg.workers)
        tube = tube_statistics(batch, require_accepted=False)
        entry = {
            "lambda": lam,
            "m_path": m,
            "seed": bc.seed,
            "tube": tube.to_dict(),
            "frame_drift": batch.frame_drift,
            "retries": batch.retries,
        }
        if setup.space.kind == "flat":
            ex = exact_flat_bridge(
                BridgeConfig(lam, m, derive_seed(cfg.mc.seed, k, 3), "exact_flat"),
                setup,
                cfg.mc.n_paths,
            )
            mid = m // 2
            ks = [
                scipy.stats.ks_2samp(batch.to_target[:, mid, a], ex.to_target[:, mid, a]).pvalue
                for a in range(setup.space.n)
            ]
            entry["ks_midpoint_pvalues"] = ks
        report.append(entry)
        print(
            f"lambda = {lam:g}: acceptance {tube.acceptance:.4f} +- {tube.acceptance_se:.4f}"
            + (f", KS p = {min(entry['ks_midpoint_pvalues']):.3g}" if "ks_midpoint_pvalues" in entry else "")
        )
        if k == 0:
            out.path_csv("path_example.csv", sample_bridge(bc, setup))
    out.json("bridge.json", {"setup": _setup_dict(setup), "runs": report})
    if any(min(e.get("ks_midpoint_pvalues", [1.0])) < 0.01 for e in report):
        print("quality failure: semiclassical and exact bridges differ (KS p < 0.01)", file=sys.stderr)
        return EXIT_QUALITY, {}
    return EXIT_OK, {}


def cmd_semiclassical(cfg, out, stages):
    setup = cfg.build_setup()
    mp = None if cfg.grids.m_path == "auto" else cfg.grids.m_path
    with stages("convergence_study"):
        run = convergence_study(
            setup,
            cfg.mc.lambdas,
            cfg.mc.n_paths,
            m_path=mp,
            seed=cfg.mc.seed,
            kappa_cut=cfg.trial.kappa_cut,
            workers=cfg.workers,
            eps=cfg.trial.eps,
        )
    gs = []
    with stages("ground_state"), warnings.catch_warnings():
        warnings.simplefilter("ignore", StepSizeWarning)
        for k, lam in enumerate(cfg.mc.lambdas):
            gs.append(
                ground_state_gap_check(
                    setup, lam, cfg.mc.n_paths, seed=derive_seed(cfg.mc.seed, k, 2),
                    workers=cfg.workers,
                ).to_dict()
            )
    out.csv("convergence.csv", run.rows, CONVERGENCE_COLUMNS)
    out.json(
        "convergence.json",
        {
            "rows": run.rows,
            "rayleigh": [r.to_dict() for r in run.rayleigh],
            "xi": [x.to_dict() for x in run.xi],
            "ground_state": gs,
            "meta": run.meta,
        },
    )
    lam = [r["lambda"] for r in run.rows]
    out.svg(
        "convergence.svg",
        svg_line_plot(
            lam,
            [
                {
                    "y": [r["upper_quotient"] for r in run.rows],
                    "err": [r["upper_se"] for r in run.rows],
                    "label": "Rayleigh quotient / lambda",
                },
                {"y": [r["lower_diag"] for r in run.rows], "label": "1 / (lambda xi^2)"},
            ],
            hlines=[(run.trial.e0, f"e0 = {run.trial.e0:.5f}")],
            title="semiclassical convergence",
            xlabel="lambda",
            ylabel="per lambda",
            logx=True,
        ),
    )
    e0 = run.trial.e0
    print(f"e0 = {e0:.6f}")
    for r in run.rows:
        print(
            f"lambda = {r['lambda']:g}: quotient/lambda = {r['upper_quotient']:.5f} "
            f"+- {r['upper_se']:.5f}, 1/xi^2 = {r['lower_diag']:.5f}, m_path = {r['m_path']}"
        )
    return EXIT_OK, {}


def cmd_sweep(cfg, out, stages):
    """e0 and duality along the m-doubling ladder, with Richardson extrapolation."""
    setup = cfg.build_setup()
    ms = _m_ladder(cfg.grids.m_operator)
    rows = []
    with stages("sweep"):
        for m in ms:
            bundle = build_bundle(setup, m)
            sp = compute_e0(bundle.T, bundle.S_inv_adj)
            rows.append(
                {
                    "m": m,
                    "e0": sp.e0,
                    "e0_transverse": sp.e0_transverse,
                    "op_norm_sinv_adj": sp.op_norm_sinv_adj,
                    "duality_gap": sp.duality_gap,
                }
            )
    ext = richardson([r["e0"] for r in rows], ms) if len(ms) > 1 else rows[-1]["e0"]
    ext_t = (
        richardson([r["e0_transverse"] for r in rows], ms) if len(ms) > 1 else rows[-1]["e0_transverse"]
    )
    cols = ["m", "e0", "e0_transverse", "op_norm_sinv_adj", "duality_gap"]
    out.csv("sweep.csv", rows, cols)
    out.json("sweep.json", {"rows": rows, "e0_richardson": ext, "e0_transverse_richardson": ext_t})
    out.svg(
        "sweep.svg",
        svg_line_plot(
            ms,
            [{"y": [r["e0"] for r in rows], "label": "e0(m)"},
             {"y": [r["e0_transverse"] for r in rows], "label": "transverse e0(m)"}],
            hlines=[(ext, f"Richardson {ext:.6f}")],
            title="e0 under grid refinement",
            xlabel="m",
            ylabel="e0",
            logx=True,
        ),
    )
    for r in rows:
        print(f"m = {r['m']}: e0 = {r['e0']:.10f}, transverse = {r['e0_transverse']:.10f}")
    print(f"Richardson: e0 = {ext:.10f}, transverse = {ext_t:.10f}")
    return EXIT_OK, {"e0_richardson": ext}


def _selftest_checks(cfg):
    """Small-size invariant suite; yields ``(name, passed, detail)``."""
    seed = cfg.mc.seed
    flat = GeodesicSetup.build(ModelSpace("flat", 0.0, 2), 1.0, 1.1)
    sph = GeodesicSetup.build(ModelSpace("sphere", 1.0, 2), 1.0, 1.1)
    hyp = GeodesicSetup.build(ModelSpace("hyperbolic", -1.0, 2), 1.0, 1.1)

    rep = check_assumptions(sph)
    yield "assumptions sphere r_tube=1.1", rep.passed, f"max r_tube {rep.max_admissible_r_tube:.5f}"
    bad = check_assumptions(GeodesicSetup.build(ModelSpace("sphere", 1.0, 2), 1.0, 1.3))
    yield "assumptions sphere r_tube=1.3 rejected", not bad.passed, "clause (2)"

    prof = CurvatureProfile.constant_curvature(sph, 64)
    sol = solve_jacobi(prof, OdeGrid(64))
    t = sol.grid.t
    w_exact = np.sin(t)
    err = float(np.max(np.abs(sol.W[:, 1, 1] - w_exact)))
    yield "Jacobi closed form (m=64)", err < 1e-6, f"max error {err:.2e}"
    rr = riccati_residual(sol)
    yield "Riccati residual (m=64)", rr < 1e-2, f"{rr:.2e}"
    fam = build_K_family(sol)
    mr = fam.m_residual()
    yield "M = f f(0)^-1 (m=64)", mr < 1e-6, f"{mr:.2e}"

    for name, setup in (("flat", flat), ("sphere", sph), ("hyperbolic", hyp)):
        b = build_bundle(setup, 64)
        sp = compute_e0(b.T, b.S_inv_adj)
        res = verify_identities(b, sp)
        worst = max(res[k] for k in IDENTITY_GATES)
        yield f"identities {name} (m=64)", worst <= IDENTITY_TOL, f"max residual {worst:.2e}"
        yield f"duality {name} (m=64)", sp.duality_gap <= DUALITY_TOL, f"gap {sp.duality_gap:.2e}"
    e0s = [compute_e0(build_bundle(sph, m).T).e0 for m in (32, 64, 128)]
    ext = richardson(e0s, [32, 64, 128])
    ref = 1.0 - 1.0 / np.pi**2
    yield "sphere e0 Richardson", abs(ext - ref) < 5e-4, f"{ext:.6f} vs {ref:.6f}"

    n = 1000
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        trial = build_trial(flat, m=200)
        ex = exact_flat_bridge(BridgeConfig(64.0, 200, derive_seed(seed, 0, 3), "exact_flat"), flat, n)
        est = estimate_rayleigh(trial, 64.0, n, CutoffSpec(0.55), batch=ex)
        z = abs(est.quotient_over_lambda - 1.0) / est.quotient_se
        yield "flat exact quotient", z < 3.0, f"{est.quotient_over_lambda:.4f} +- {est.quotient_se:.4f}"
        sc = sample_bridges(BridgeConfig(64.0, 200, derive_seed(seed, 0, 0)), flat, n)
        p = scipy.stats.ks_2samp(sc.to_target[:, 100, 1], ex.to_target[:, 100, 1]).pvalue
        yield "flat KS semiclassical vs exact", p > 0.01, f"p = {p:.3g}"
        trial_s = build_trial(sph, m=200)
        q = estimate_rayleigh(trial_s, 64.0, n, CutoffSpec(0.55), setup=sph, m_path=640, seed=seed)
        yield (
            "sphere quotient near e0 (lambda=64)",
            abs(q.quotient_over_lambda - ref) < 0.05,
            f"{q.quotient_over_lambda:.4f} +- {q.quotient_se:.4f}",
        )


def cmd_selftest(cfg, out, stages):
    results = []
    with stages("selftest"):
        for name, ok, detail in _selftest_checks(cfg):
            results.append({"check": name, "passed": bool(ok), "detail": detail})
            print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    out.json("selftest.json", {"seed": cfg.mc.seed, "checks": results})
    n_fail = sum(not r["passed"] for r in results)
    print(f"{len(results) - n_fail}/{len(results)} checks passed")
    return (EXIT_QUALITY if n_fail else EXIT_OK), {}


COMMANDS = {
    "geometry-check": (cmd_geometry, "check the curvature assumptions on the tube"),
    "spectrum": (cmd_spectrum, "e0, the (S^-1)* norm and the identity residuals"),
    "identities": (cmd_identities, "operator identity residuals under grid doubling"),
    "bridge": (cmd_bridge, "sample bridges and report tube statistics"),
    "semiclassical": (cmd_semiclassical, "Rayleigh quotient convergence study"),
    "sweep": (cmd_sweep, "e0 along the grid ladder with Richardson extrapolation"),
    "selftest": (cmd_selftest, "small-size invariant suite"),
}


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="geospec", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"geospec {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config", help="TOML config file")
    common.add_argument("--kind", choices=["flat", "sphere", "hyperbolic"])
    common.add_argument("--kappa", type=float, help="sectional curvature")
    common.add_argument("--dim", type=int, help="manifold dimension n")
    common.add_argument("--rho", type=float, help="distance d(x, y)")
    common.add_argument("--r-tube", type=float, help="tube radius around y")
    common.add_argument("--m-operator", type=int, help="operator grid size")
    common.add_argument("--m-path", type=_m_path_arg, help="path time steps or 'auto'")
    common.add_argument("--lambdas", type=_float_list, help="comma separated lambdas")
    common.add_argument("--n-paths", type=int)
    common.add_argument("--seed", type=int)
    common.add_argument("--workers", type=int, help="worker threads (0: one per CPU)")
    common.add_argument("--eps", type=float, help="trial function quality target")
    common.add_argument("--kappa-cut", type=float, help="cutoff scale")
    common.add_argument("-o", "--out", help="output directory")
    common.add_argument("--formats", type=lambda s: s.split(","), help="subset of csv,json,svg")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name, (_, help_) in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=help_, description=help_)
    return p


def _m_path_arg(s):
    return s if s == "auto" else int(s)


def _float_list(s):
    return [float(v) for v in s.split(",") if v.strip()]


def main(argv=None) -> int:
    try:
        ns = _parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code not in (0, None) else EXIT_OK
    logging.basicConfig(
        level=logging.INFO if ns.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    fn = COMMANDS[ns.command][0]
    stages = _Stages()
    try:
        cfg, raw = load_config(ns.config)
        cfg = _apply_flags(cfg, ns)
        out = Output(cfg.output.directory, cfg.output.formats)
        code, extra = fn(cfg, out, stages)
        out.manifest(ns.command, cfg, raw, stages.t, {"summary": extra, "exit_code": code})
        return code
    except (ConfigError, DomainError, ConjugatePointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (NumericalError, DegenerateSampleError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_QUALITY
    except GeospecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_QUALITY


if __name__ == "__main__":
    sys.exit(main())
