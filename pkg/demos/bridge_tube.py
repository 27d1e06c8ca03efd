"""Semiclassical bridges on the unit sphere and how they fill the tube.

Samples bridges at three values of lambda, prints the tube acceptance and
the spread of the sup distance to the geodesic, then writes one path to CSV.

    python demos/bridge_tube.py [outdir]
"""

import sys
import warnings
from pathlib import Path

import numpy as np

from geospec.bridge import BridgeConfig, StepSizeWarning, sample_bridges, tube_statistics, write_path_csv
from geospec.geometry import GeodesicSetup, ModelSpace

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo-out")
out.mkdir(exist_ok=True)
setup = GeodesicSetup.build(ModelSpace("sphere", 1.0, 2), 1.0, 1.1)

for lam in (4.0, 16.0, 64.0):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", StepSizeWarning)
        batch = sample_bridges(BridgeConfig(lam, 200, seed=1), setup, 2000)
    rep = tube_statistics(batch)
    q = np.quantile(batch.sup_dist, [0.5, 0.9, 0.99])
    print(f"lambda {lam:5.0f}: acceptance {rep.acceptance:.3f}  sup-distance quantiles {np.round(q, 3)}")

write_path_csv(batch.path(0), out / "sphere_bridge.csv")
print(f"wrote {out / 'sphere_bridge.csv'}")
