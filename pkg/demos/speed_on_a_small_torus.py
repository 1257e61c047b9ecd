"""Speed of a biased walker on spins that resample at rate one.

The walker jumps right at rate 1 + eta(x) and left at rate 1. On a
three-site torus the environment seen from the walker is a finite Markov
chain, so the speed is known exactly; we compare it with trajectories.
"""

from rwdre import LocalFunction, RateFunction, TorusLattice
from rwdre.environments import make_resampling_engine
from rwdre.estimators import estimate_speed
from rwdre.oracle import build_env_generator, build_ep_generator, exact_speed, stationary_distribution

lattice = TorusLattice(1, 3)
engine, kernel = make_resampling_engine(1.0)
alpha = RateFunction({+1: LocalFunction.from_callable([0], lambda b: 1 + b[0]), -1: 1.0})

G = build_ep_generator(build_env_generator(engine, lattice), alpha)
v_exact = exact_speed(stationary_distribution(G), alpha)[0]
print(f"exact speed on L=3:      {v_exact:.6f}")

est = estimate_speed(alpha, kernel, 2000.0, 16, lattice=lattice, seed=1, strict_torus=False)
print(f"trajectory estimate:     {est.v[0]:.4f} +- {est.v_se[0]:.4f}")
print(f"stationary mean drift:   {est.v_stationary[0]:.4f}")
