"""Numerical verification of the semiclassical spectral gap on pinned path spaces.

Submodules
----------
geometry
    Constant-curvature model spaces, geodesic setup, curvature profiles.
jacobi
    Jacobi fields, the distance Hessian and the coefficient family K, N, M.
pathops
    Discretised path-space operators S, S^-1, S*, (S^-1)*, T and e0.
bridge
    Pinned Brownian bridge sampling with tube bookkeeping.
semiclassical
    Trial functions, Rayleigh quotients and the COH coefficient.
cli
    Command line driver.
"""

from .errors import (
    ConfigError,
    ConjugatePointError,
    DegenerateSampleError,
    DomainError,
    GeospecError,
    NumericalError,
)
from .geometry import (
    AssumptionReport,
    CurvatureProfile,
    GeodesicSetup,
    ModelSpace,
    RicciData,
    check_assumptions,
    dist_hessian_eigs,
    exp_map,
    log_map,
    parallel_transport,
)

__version__ = "0.1.0"
