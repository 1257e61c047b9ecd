"""Two walkers on a coupled environment pair, driven by shared Poisson clocks.

Jump ``z`` has a clock ringing at ``lam_z = sup_eta alpha(eta, z)``. On a
ring both walkers test the same uniform ``U`` and walker ``i`` jumps iff
``U lam_z < alpha(theta_{-X_i} eta_i, z)``. The sandwich walkers ``Y+`` and
``Y-`` jump by ``max(z, 0)`` and ``min(z, 0)`` on every ring, so they depend
on the clock stream only.

Walker displacements are unwrapped integers; the environment lives on the
torus and is read at ``X mod L``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import _kernels as K
from .environments import CouplingKernel, EnvironmentEngine, EnvState, LayerSpec
from .integrals import DivergentIntegralError, Weight, callable_integral, fit_tail, grid_integral, tail_integral
from .lattice import Configuration, LocalFunction, RateFunction, shift

__all__ = [
    "TorusTooSmallError",
    "WalkTrajectory",
    "CoupledWalkSystem",
    "Decoupling",
    "required_torus_side",
    "build_coupled_system",
    "advance",
    "decoupling_time",
    "restart_coupling",
    "run_with_restarts",
    "decoupling_lower_bound",
    "spread_integral",
]

TORUS_SAFETY = 4.0


class TorusTooSmallError(ValueError):
    """The torus would alias the range the walkers can explore before the horizon."""

    def __init__(self, L: int, required: int):
        super().__init__(f"torus side {L} is too small for the horizon; need L >= {required}")
        self.required = required


def required_torus_side(alpha: RateFunction, horizon: float) -> int:
    """Smallest side ``L`` with ``L > 2 * r * Lambda * T * 4``.

    ``r`` is the largest jump (sup norm) and ``Lambda`` the total clock rate.
    """
    r = int(np.abs(alpha.jumps).max())
    lam_total = alpha.norms().total_rate
    return int(math.floor(2.0 * r * lam_total * horizon * TORUS_SAFETY)) + 1


@dataclass
class WalkTrajectory:
    """Jump times and unwrapped positions of one walker (first row = start)."""

    times: np.ndarray
    positions: np.ndarray
    decoupled: np.ndarray

    def position_at(self, t: float) -> np.ndarray:
        i = int(np.searchsorted(self.times, t, side="right")) - 1
        return self.positions[max(i, 0)]


class Decoupling(NamedTuple):
    tau: float
    censored: bool


@dataclass
class _Record:
    grid: np.ndarray
    X1: np.ndarray
    X2: np.ndarray
    f1: np.ndarray
    f2: np.ndarray
    decoupled: np.ndarray
    drift_sum: np.ndarray
    f_sum: float
    n_avg: int
    next_sample: float


@dataclass
class CoupledWalkSystem:
    kernel: CouplingKernel
    rates: RateFunction
    env: EnvState
    X1: np.ndarray
    X2: np.ndarray
    x0: np.ndarray
    y0: np.ndarray
    gclk: np.random.Generator
    genv: np.random.Generator
    paired: bool = True
    Yp: np.ndarray = field(default=None)
    Ym: np.ndarray = field(default=None)
    tstate: np.ndarray = field(default=None)
    istate: np.ndarray = field(default=None)
    restarts_since: float = 0.0

    def __post_init__(self):
        d = self.rates.d
        if self.Yp is None:
            self.Yp = np.zeros(d, dtype=np.int64)
            self.Ym = np.zeros(d, dtype=np.int64)
        if self.tstate is None:
            self.tstate = np.array([0.0, np.inf, 0.0])
            self.istate = np.zeros(5, dtype=np.int64)
        self._jumps = self.rates.jumps
        lam = self.rates.tables.max(axis=1)
        self._lam = lam.astype(float)
        self._lamcum = np.cumsum(self._lam)
        self._roffs, self._rlayers = _window_arrays(self.rates.window, d)
        self._dtable = np.ascontiguousarray(self.rates.drift_table())

    # state accessors

    @property
    def t(self) -> float:
        return float(self.tstate[0])

    @property
    def tau(self) -> float:
        return float(self.tstate[1])

    @property
    def decoupled(self) -> bool:
        return bool(self.istate[0])

    @property
    def n_decouplings(self) -> int:
        return int(self.istate[1])

    @property
    def n_restarts(self) -> int:
        return int(self.istate[3])

    @property
    def sandwich_violations(self) -> int:
        return int(self.istate[2])

    @property
    def decoupling_jump_sum(self) -> float:
        return float(self.tstate[2])

    def environment_process(self, which: int = 1) -> Configuration:
        """``theta_{-X} eta`` for walker ``which`` at the current time."""
        self.env.materialize(self.t, self.genv)
        eta1, eta2 = self.env.configs()
        if which == 1:
            return shift(eta1, -self.X1)
        return shift(eta2, -self.X2)

    def _run(self, T_end, grid=None, f: LocalFunction | None = None, avg_start=None, avg_dt=0.0,
             restart=False, stop_at_decouple=False, record_events=False):
        d = self.rates.d
        grid = np.zeros(0) if grid is None else np.asarray(grid, dtype=float)
        if len(grid) and grid[0] < self.t:
            raise ValueError("recording grid starts before the current time")
        f = f if f is not None else LocalFunction.constant(0.0)
        foffs, flayers = _window_arrays(f.window, d)
        m = len(grid)
        rec_X1 = np.zeros((m, d), dtype=np.int64)
        rec_X2 = np.zeros((m, d), dtype=np.int64)
        rec_f1 = np.zeros(m)
        rec_f2 = np.zeros(m)
        rec_dec = np.zeros(m, dtype=np.uint8)
        avg_next = np.array([self.t if avg_start is None else float(avg_start)])
        avg_sum = np.zeros(d + 1)
        avg_count = np.zeros(1, dtype=np.int64)
        if record_events:
            mean = self._lamcum[-1] * max(T_end - self.t, 0.0)
            cap = int(mean + 10.0 * math.sqrt(mean) + 64)
        else:
            cap = 0
        ev_buf = np.zeros((cap, 2 + 2 * d))
        ev_n = np.zeros(1, dtype=np.int64)
        self.istate[4] = 0
        eng = self.kernel.engine
        status = K.run_walk(
            self.gclk, self.genv, eng.kind_code, self.env.lattice.L, self.env.strides,
            self.env.nbr, self.env.rates, eng.beta, eng.rate,
            self.env.env1, self.env.env2, self.env.tlast, self.env.pair2, self.env.inv2,
            self.X1, self.X2, self.Yp, self.Ym, self.x0, self.y0, self.tstate, self.istate,
            self._jumps, self._lam, self._lamcum, self._roffs, self._rlayers, self.rates.tables,
            foffs, flayers, f.table, self._dtable,
            grid, rec_X1, rec_X2, rec_f1, rec_f2, rec_dec,
            avg_next, float(avg_dt), float(T_end), avg_sum, avg_count,
            float(T_end), self.paired, restart, stop_at_decouple, ev_buf, ev_n,
        )
        if status == K.BUFFER_FULL:
            raise RuntimeError("event buffer overflow while recording a trajectory")
        if self.sandwich_violations:
            raise AssertionError(
                f"sandwich property violated {self.sandwich_violations} times; this is a bug"
            )
        rec = _Record(grid, rec_X1, rec_X2, rec_f1, rec_f2, rec_dec.astype(bool),
                      avg_sum[:d].copy(), float(avg_sum[d]), int(avg_count[0]), float(avg_next[0]))
        return rec, ev_buf[: int(ev_n[0])]


def _window_arrays(window, d):
    offs = np.zeros((len(window), d), dtype=np.int64)
    layers = np.zeros(len(window), dtype=np.int64)
    for k, (off, layer) in enumerate(window):
        offs[k] = off
        layers[k] = layer
    return offs, layers


def build_coupled_system(eta: Configuration, x, xi: Configuration | None, y, alpha: RateFunction,
                         kernel: CouplingKernel, rng: np.random.Generator | tuple,
                         horizon: float | None = None, strict_torus: bool = True) -> CoupledWalkSystem:
    """Extend an environment coupling by two walkers started at ``x`` and ``y``.

    ``rng`` is either a pair ``(clock_stream, env_stream)`` or one generator
    from which the two are spawned. With ``strict_torus`` and a ``horizon``
    the builder refuses tori that the walkers could wrap around; pass
    ``strict_torus=False`` when the finite torus itself is the model.
    ``xi=None`` builds a single walker.
    """
    lat = eta.lattice
    if alpha.d != lat.d:
        raise ValueError(f"rates are {alpha.d}-dimensional, lattice is {lat.d}-dimensional")
    if strict_torus and horizon is not None:
        need = required_torus_side(alpha, horizon)
        if lat.L < need:
            raise TorusTooSmallError(lat.L, need)
    for off, layer in alpha.window:
        if layer >= kernel.engine.n_layers:
            raise ValueError(f"rate window reads layer {layer}; engine has {kernel.engine.n_layers}")
    if isinstance(rng, tuple):
        gclk, genv = rng
    else:
        gclk, genv = (np.random.Generator(type(rng.bit_generator)(s)) for s in rng.bit_generator.seed_seq.spawn(2))
    env = EnvState(kernel.engine, eta, xi)
    x = np.array(np.atleast_1d(x), dtype=np.int64)
    y = np.array(np.atleast_1d(y if y is not None else x), dtype=np.int64)
    return CoupledWalkSystem(kernel, alpha, env, x.copy(), y.copy(), x.copy(), y.copy(),
                             gclk, genv, paired=xi is not None)


def advance(system: CoupledWalkSystem, horizon: float) -> tuple[WalkTrajectory, WalkTrajectory | None]:
    """Simulate the joint system up to time ``horizon`` and return both trajectories."""
    if horizon < system.t:
        raise ValueError("horizon is before the current time")
    d = system.rates.d
    t0, X10, X20, dec0 = system.t, system.X1.copy(), system.X2.copy(), system.decoupled
    _, ev = system._run(horizon, record_events=True)
    times = np.concatenate([[t0], ev[:, 0]])
    dec = np.concatenate([[dec0], ev[:, 1 + 2 * d].astype(bool)])
    p1 = np.vstack([X10[None, :], ev[:, 1:1 + d].astype(np.int64)])
    tr1 = WalkTrajectory(times, p1, dec)
    if not system.paired:
        return tr1, None
    p2 = np.vstack([X20[None, :], ev[:, 1 + d:1 + 2 * d].astype(np.int64)])
    return tr1, WalkTrajectory(times, p2, dec)


def decoupling_time(system: CoupledWalkSystem, T_max: float) -> Decoupling:
    """Run until the walkers first make different jumps, or until ``T_max``."""
    if not system.paired:
        raise ValueError("decoupling needs two walkers")
    if system.decoupled:
        return Decoupling(system.tau, False)
    system._run(T_max, stop_at_decouple=True)
    if system.decoupled:
        return Decoupling(system.tau, False)
    return Decoupling(float(T_max), True)


def restart_coupling(system: CoupledWalkSystem) -> CoupledWalkSystem:
    """Re-pair the environments around the two walkers after a decoupling.

    Copy 1 site ``X1 + x`` is coupled with copy 2 site ``X2 + x`` from now on;
    positions are kept, the restart counter is incremented and the system
    is ready to measure its next decoupling time.
    """
    if not system.decoupled:
        raise RuntimeError("restart_coupling called before the walkers decoupled")
    system.env.materialize(system.t, system.genv)
    K.set_pairing(system.X2 - system.X1, system.env.lattice.L, system.env.strides,
                  system.env.pair2, system.env.inv2)
    system.istate[0] = 0
    system.istate[3] += 1
    system.tstate[1] = np.inf
    system.restarts_since = system.t
    return system


def run_with_restarts(system: CoupledWalkSystem, horizon: float) -> CoupledWalkSystem:
    """Run to ``horizon``, restarting the environment coupling at every decoupling.

    Afterwards ``system.n_restarts`` counts the restarts and
    ``system.decoupling_jump_sum`` is the summed size of the jumps that
    separated the walkers, an upper bound on ``|X1 - X2|`` for walkers
    started together.
    """
    if not system.paired:
        raise ValueError("restarts need two walkers")
    system._run(horizon, restart=True)
    return system


# -- analytic decoupling bound -------------------------------------------------


def spread_integral(decay, spread_rate: float, d: int) -> tuple[float, float]:
    """``int_0^inf (spread_rate t + 1)^d g(t) dt`` with a tail bound.

    ``decay`` may be an :class:`EnvironmentEngine` with a closed-form decay,
    a :class:`LayerSpec`, a callable ``g(t)`` (optionally with a
    ``tail_exponent`` attribute) or a :class:`~rwdre.estimators.DecayCurve`.
    """
    w = Weight("spread", rate=float(spread_rate), d=int(d))
    if hasattr(decay, "grid") and hasattr(decay, "estimate"):
        fit = fit_tail(decay.grid, decay.estimate)
        if fit.exponent >= -(d + 1):
            raise DivergentIntegralError(
                f"fitted decay exponent {fit.exponent:.3g} is not below -(d+1) = {-(d + 1)}"
            )
        value, _ = grid_integral(decay.grid, decay.estimate, w)
        tail = tail_integral(fit, decay.grid[-1], w)
        return value + tail, tail
    if isinstance(decay, LayerSpec):
        rates, weights = np.asarray(decay.rates), np.asarray(decay.weights)

        def g(t):
            return float((weights * np.exp(-rates * t)).sum())

        return callable_integral(g, w, decay.tail_exponent)
    if isinstance(decay, EnvironmentEngine):
        if decay.exact_decay(0.0) is None:
            raise ValueError(f"{decay.name} has no closed-form decay; pass an estimated curve")

        def g(t):
            return float(decay.exact_decay(t))

        return callable_integral(g, w, decay.decay_tail_exponent)
    exponent = getattr(decay, "tail_exponent", None)
    return callable_integral(lambda t: float(decay(t)), w, exponent)


def decoupling_lower_bound(alpha: RateFunction, decay, d: int | None = None) -> float:
    """Floor on the probability that the two walkers never decouple.

    ``exp(-|||alpha||| * int_0^inf (||gamma+ - gamma-||_inf t + 1)^d g(t) dt)``
    where ``g`` is the sup-pair decay of the environment coupling.
    """
    norms = alpha.norms()
    d = alpha.d if d is None else d
    if norms.triple == 0.0:
        return 1.0
    integral, _ = spread_integral(decay, norms.spread_rate, d)
    return math.exp(-norms.triple * integral)
