"""Environment engines and their synchronous coupling kernels.

An :class:`EnvironmentEngine` is an immutable description of a
translation-invariant spin dynamics; a :class:`CouplingKernel` couples two
copies of it by sharing every clock and every uniform (site clock, new
value, heat-bath uniform). The pair is Markov, so each marginal restarts
as the original process at any stopping time.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import zeta

from . import _kernels as K
from .lattice import Configuration, SiteMetric, TorusLattice

__all__ = [
    "EnvironmentEngine",
    "CouplingKernel",
    "LayerSpec",
    "StackBound",
    "make_resampling_engine",
    "make_glauber_engine",
    "make_layered_engine",
    "make_frozen_engine",
    "stack_decay_bound",
    "evolve",
    "evolve_pair",
    "snapshots",
    "EnvState",
]


@dataclass(frozen=True)
class LayerSpec:
    """Per-layer flip rates and stack-distance weights of a layered environment.

    ``tail_mass`` is the total weight of the layers beyond ``n_layers`` that
    the truncation discards. ``tail_exponent`` is the power-law exponent of
    the untruncated stack decay when it is known in closed form.
    """

    rates: tuple[float, ...]
    weights: tuple[float, ...]
    tail_mass: float = 0.0
    tail_exponent: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "rates", tuple(float(r) for r in self.rates))
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        if len(self.rates) != len(self.weights) or not self.rates:
            raise ValueError("rates and weights must be non-empty and of equal length")
        if any(r <= 0 for r in self.rates):
            raise ValueError("layer rates must be positive")
        self.metric  # validates the weights

    @property
    def n_layers(self) -> int:
        return len(self.rates)

    @property
    def metric(self) -> SiteMetric:
        if self.n_layers == 1 and self.tail_mass == 0.0:
            return SiteMetric("weighted", self.weights)
        return SiteMetric("weighted", self.weights, self.tail_mass)

    @classmethod
    def power_law(cls, gamma: float, n_layers: int) -> "LayerSpec":
        """Layer ``n`` flips at rate ``1/n`` with weight ``n**(-gamma-1) / zeta(gamma+1)``.

        The untruncated stack decays like ``t**(-gamma)``.
        """
        if gamma <= 0 or n_layers < 1:
            raise ValueError("need gamma > 0 and n_layers >= 1")
        n = np.arange(1, n_layers + 1, dtype=float)
        w = n ** (-gamma - 1.0) / zeta(gamma + 1.0)
        tail = 1.0 - float(w.sum())
        return cls(tuple(1.0 / n), tuple(w), tail, -float(gamma))

    @classmethod
    def single(cls, rate: float) -> "LayerSpec":
        return cls((rate,), (1.0,))


class StackBound(NamedTuple):
    bound: np.ndarray | float
    tail_mass: float


def stack_decay_bound(spec: LayerSpec, t) -> StackBound:
    """``2 * sum_n w_n exp(-rate_n t)`` over the kept layers, plus the discarded weight."""
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0):
        raise ValueError("t must be non-negative")
    r = np.asarray(spec.rates)
    w = np.asarray(spec.weights)
    value = 2.0 * (w * np.exp(-np.multiply.outer(t_arr, r))).sum(axis=-1)
    return StackBound(float(value) if np.ndim(value) == 0 else value, spec.tail_mass)


@dataclass(frozen=True)
class EnvironmentEngine:
    """Translation-invariant single-site dynamics.

    ``kind`` selects the simulation path: ``"product"`` engines have
    independent memoryless sites (resampling, layered, frozen) and
    ``"glauber"`` is nearest-neighbour heat-bath dynamics.
    """

    name: str
    kind: str
    layer_rates: tuple[float, ...] = (1.0,)
    beta: float = 0.0
    rate: float = 0.0
    metric: SiteMetric = SiteMetric()
    layer_spec: LayerSpec | None = None

    @property
    def n_layers(self) -> int:
        return len(self.layer_rates) if self.kind == "product" else 1

    @property
    def kind_code(self) -> int:
        return K.PRODUCT if self.kind == "product" else K.GLAUBER

    def exact_decay(self, t):
        """Closed-form ``E rho(eta1_t(0), eta2_t(0))`` for the all-differ pair, if known.

        For product engines the synchronous coupling kills a layer discrepancy
        at the first ring of that layer's clock, so the curve is exact.
        Returns ``None`` where no closed form exists (Glauber at beta > 0).
        """
        t = np.asarray(t, dtype=float)
        if self.kind == "product":
            r = np.asarray(self.layer_rates)
            w = self.metric.weight_array
            return (w * np.exp(-np.multiply.outer(t, r))).sum(axis=-1)
        if self.beta == 0.0:
            return np.exp(-self.rate * t)
        return None

    @property
    def decay_tail_exponent(self) -> float | None:
        if self.layer_spec is not None:
            return self.layer_spec.tail_exponent
        if self.kind == "product":
            return -np.inf if min(self.layer_rates) > 0 else 0.0
        if self.beta == 0.0:
            return -np.inf
        return None

    def total_rate(self, lattice: TorusLattice) -> float:
        if self.kind == "product":
            return float(sum(self.layer_rates)) * lattice.n_sites
        return self.rate * lattice.n_sites

    def stationary_config(self, lattice: TorusLattice, rng: np.random.Generator) -> Configuration:
        """Draw an initial configuration (the exact stationary law for product engines)."""
        return Configuration.random(lattice, rng, self.n_layers)


@dataclass(frozen=True)
class CouplingKernel:
    engine: EnvironmentEngine
    coalescing: bool = True
    description: str = "synchronous: shared clocks and shared uniforms"


def make_resampling_engine(lam: float):
    """Each site resamples to a fair bit at rate ``lam``."""
    if not lam > 0:
        raise ValueError(f"resampling rate must be positive, got {lam}")
    eng = EnvironmentEngine(f"resampling(lam={lam!r})", "product", (float(lam),))
    return eng, CouplingKernel(eng)


def make_frozen_engine():
    """Rate-zero environment; configurations never change."""
    eng = EnvironmentEngine("frozen", "product", (0.0,))
    return eng, CouplingKernel(eng)


def make_glauber_engine(beta: float, lam: float = 1.0):
    """Heat-bath Ising dynamics: each site is redrawn from its conditional law at rate ``lam``."""
    if beta < 0:
        raise ValueError(f"inverse temperature must be non-negative, got {beta}")
    if not lam > 0:
        raise ValueError(f"update rate must be positive, got {lam}")
    eng = EnvironmentEngine(f"glauber(beta={beta!r}, lam={lam!r})", "glauber", (float(lam),),
                            beta=float(beta), rate=float(lam))
    return eng, CouplingKernel(eng, description="monotone heat-bath: shared clocks and uniforms")


def make_layered_engine(spec: LayerSpec):
    """Independent stack of resampling layers, each coupled synchronously."""
    eng = EnvironmentEngine(
        f"layered(n_layers={spec.n_layers})", "product", spec.rates,
        metric=spec.metric, layer_spec=spec,
    )
    return eng, CouplingKernel(eng, description="independent product of synchronous layer couplings")


# -- simulation state ---------------------------------------------------------


class EnvState:
    """Mutable kernel-side state of one environment or an environment pair."""

    def __init__(self, engine: EnvironmentEngine, eta: Configuration, xi: Configuration | None = None,
                 t0: float = 0.0):
        if eta.n_layers != engine.n_layers:
            raise ValueError(
                f"configuration has {eta.n_layers} layers, engine {engine.name} expects {engine.n_layers}"
            )
        self.engine = engine
        self.lattice = eta.lattice
        self.paired = xi is not None
        if xi is not None and (xi.lattice != eta.lattice or xi.n_layers != eta.n_layers):
            raise ValueError("paired configurations are not compatible")
        self.env1 = eta.states.copy()
        self.env2 = xi.states.copy() if xi is not None else np.zeros((1, 1), dtype=np.uint8)
        self.tlast = np.full(self.env1.shape, float(t0))
        n = self.lattice.n_sites
        self.pair2 = np.arange(n, dtype=np.int64)
        self.inv2 = np.arange(n, dtype=np.int64)
        self.nbr = self.lattice.neighbours()
        self.strides = self.lattice.strides
        self.rates = np.asarray(engine.layer_rates, dtype=float)

    def materialize(self, t: float, genv: np.random.Generator) -> None:
        if self.engine.kind == "product":
            K.materialize(float(t), self.env1, self.env2, self.tlast, self.pair2, self.rates,
                          genv, self.paired)

    def configs(self) -> tuple[Configuration, Configuration | None]:
        a = Configuration(self.lattice, self.env1.copy())
        b = Configuration(self.lattice, self.env2.copy()) if self.paired else None
        return a, b


def snapshots(engine: EnvironmentEngine, eta: Configuration, xi: Configuration | None,
              grid, rng: np.random.Generator):
    """Configurations (or pairs) at every time of an increasing ``grid``.

    Returns arrays of shape ``(len(grid), n_layers, n_sites)``; the second is
    ``None`` for a single chain.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or np.any(grid < 0) or np.any(np.diff(grid) < 0):
        raise ValueError("grid must be non-negative and non-decreasing")
    st = EnvState(engine, eta, xi)
    shape = (len(grid),) + st.env1.shape
    rec1 = np.empty(shape, dtype=np.uint8)
    rec2 = np.empty(shape if st.paired else (len(grid), 1, 1), dtype=np.uint8)
    K.run_env(rng, engine.kind_code, eta.lattice.L, st.nbr, st.rates, engine.beta, engine.rate,
              st.env1, st.env2, st.tlast, st.pair2, st.paired, 0.0, grid, rec1, rec2)
    return rec1, (rec2 if st.paired else None)


def evolve(engine: EnvironmentEngine, config: Configuration, t: float,
           rng: np.random.Generator) -> Configuration:
    """Exact continuous-time evolution of one environment for duration ``t``."""
    if t < 0:
        raise ValueError("t must be non-negative")
    if t == 0:
        return config.copy()
    rec1, _ = snapshots(engine, config, None, [t], rng)
    return Configuration(config.lattice, rec1[0])


def evolve_pair(kernel: CouplingKernel, eta: Configuration, xi: Configuration, t: float,
                rng: np.random.Generator) -> tuple[Configuration, Configuration]:
    """Exact joint evolution of a coupled pair for duration ``t``."""
    if t < 0:
        raise ValueError("t must be non-negative")
    if t == 0:
        return eta.copy(), xi.copy()
    rec1, rec2 = snapshots(kernel.engine, eta, xi, [t], rng)
    return Configuration(eta.lattice, rec1[0]), Configuration(eta.lattice, rec2[0])
