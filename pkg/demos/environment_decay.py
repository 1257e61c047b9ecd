"""How fast two coupled environments forget where they started.

Independent spin flips coalesce at rate one, so the discrepancy at the
origin decays like exp(-t). A stack of layers with rates 1/n decays only
polynomially; the log-log slope should sit near -gamma.
"""

import numpy as np

from rwdre import TorusLattice
from rwdre.environments import LayerSpec, make_layered_engine, make_resampling_engine, stack_decay_bound
from rwdre.estimators import estimate_env_decay
from rwdre.integrals import loglog_slope

lattice = TorusLattice(1, 8)
grid = np.array([0.5, 1.0, 2.0, 4.0])

_, kernel = make_resampling_engine(1.0)
curve = estimate_env_decay(kernel, None, grid, 4000, "extremal", lattice=lattice, seed=2)
for t, e, s in curve.rows():
    print(f"t={t:4.1f}  estimate {e:.4f} +- {s:.4f}   exp(-t) {np.exp(-t):.4f}")

spec = LayerSpec.power_law(3.0, 50)
engine, kernel = make_layered_engine(spec)
grid = np.geomspace(5, 50, 8)
exact = engine.exact_decay(grid)
print("layered stack, gamma = 3")
print(f"  exact log-log slope over [5, 50]: {loglog_slope(grid, exact):.3f}")
print(f"  bound at t=50: {stack_decay_bound(spec, 50.0).bound:.3e}, exact {exact[-1]:.3e}")
