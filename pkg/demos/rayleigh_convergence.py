"""Monte Carlo Rayleigh quotient against the Hessian bound on the sphere.

A small version of the convergence study: the upper estimate divided by
lambda should approach ``e0`` as lambda grows, and ``1/xi^2`` is printed
next to it as the lower diagnostic.

    python demos/rayleigh_convergence.py
"""

import warnings

from geospec.geometry import GeodesicSetup, ModelSpace
from geospec.semiclassical import convergence_study

# only a handful of paths feed xi_hat here; silence the small-sample warning
warnings.filterwarnings("ignore", message="only .* tube paths")

setup = GeodesicSetup.build(ModelSpace("sphere", 1.0, 2), 1.0, 1.1)
run = convergence_study(setup, [16.0, 64.0], n_paths=3000, seed=0, xi_paths=40)
print(f"e0 = {run.trial.e0:.5f}")
for r in run.rows:
    print(
        f"lambda {r['lambda']:5.0f} (m = {r['m_path']}): "
        f"quotient/lambda {r['upper_quotient']:.4f} +- {r['upper_se']:.4f}  "
        f"1/xi^2 {r['lower_diag']:.4f}  acceptance {r['acceptance']:.3f}"
    )
