"""Two walkers driven by the same clocks on two different environments.

They stay together until one of them sees a rate the other does not. The
chance they never separate is bounded below by an explicit constant, which
we compare with simulation on a torus large enough to rule out wrapping.
"""

from rwdre import LocalFunction, RateFunction, TorusLattice
from rwdre.coupling import decoupling_lower_bound, required_torus_side
from rwdre.environments import make_resampling_engine
from rwdre.estimators import estimate_decoupling

eps = 0.1
alpha = RateFunction({+1: LocalFunction.from_callable([0], lambda b: 1 + eps * b[0]), -1: 1.0})
engine, kernel = make_resampling_engine(1.0)
horizon = 50.0
lattice = TorusLattice(1, required_torus_side(alpha, horizon))

est = estimate_decoupling(alpha, kernel, horizon, 2000, lattice=lattice, seed=3)
print(f"torus side {lattice.L}, horizon {horizon}")
print(f"P(no decoupling) estimate {est.p_hat:.4f} +- {est.se:.4f}")
print(f"lower bound               {decoupling_lower_bound(alpha, engine):.4f}")
