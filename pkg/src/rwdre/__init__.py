"""Random walks in dynamic random environments.

Event-driven simulation of a walker and of two coupled walkers on top of a
coupled pair of environments, Monte Carlo estimators for decay curves,
speed, diffusion and rate continuity, and an exact generator-level oracle
for tiny tori.
"""

from .lattice import (
    Configuration,
    LocalFunction,
    RateFunction,
    SiteMetric,
    TorusLattice,
    rate_distance,
    rate_norms,
    shift,
    site_distance,
    triple_norm,
)
from .rng import stream

__version__ = "0.1.0"

__all__ = [
    "Configuration",
    "LocalFunction",
    "RateFunction",
    "SiteMetric",
    "TorusLattice",
    "rate_distance",
    "rate_norms",
    "shift",
    "site_distance",
    "stream",
    "triple_norm",
    "__version__",
]
