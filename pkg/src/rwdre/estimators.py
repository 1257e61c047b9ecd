"""Monte Carlo estimators built on the coupled simulation.

Every estimator takes a ``seed`` and derives one independent stream per
replica and purpose, so results are a pure function of ``(seed, replicas,
grid)``. Standard errors are replica-level. Suprema over initial pairs are
approximated by explicit pair strategies whose tag is always reported:

``extremal``
    all zeros against all ones (every layer differs everywhere).
``single-site``
    all zeros against all zeros with the origin flipped in every layer.
``random``
    ``k`` i.i.d. uniform pairs; the pointwise maximum is taken.
``sup``
    ``extremal`` together with ``random``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .coupling import (
    build_coupled_system,
    decoupling_lower_bound,
    decoupling_time,
    spread_integral,
)
from .environments import CouplingKernel, snapshots
from .integrals import (
    DivergentIntegralError,
    TailFitError,
    Weight,
    fit_tail,
    grid_integral,
    tail_integral,
)
from .lattice import (
    Configuration,
    LocalFunction,
    RateFunction,
    SiteMetric,
    TorusLattice,
    rate_distance,
    triple_norm,
)
from .parallel import map_replicas
from .rng import stream

__all__ = [
    "PAIR_STRATEGIES",
    "K_GRID",
    "DecayCurve",
    "IntegralEstimate",
    "DriftDiffusionEstimate",
    "DecouplingEstimate",
    "ContinuityReport",
    "EPDecay",
    "initial_pairs",
    "estimate_env_decay",
    "estimate_site_decay_sum",
    "estimate_ep_decay",
    "estimate_ep_site_sum",
    "transference_integral",
    "smallest_convergent_K",
    "estimate_speed",
    "estimate_diffusion",
    "estimate_decoupling",
    "condition_a_holds",
    "continuity_experiment",
]

PAIR_STRATEGIES = ("extremal", "single-site", "random", "sup")
K_GRID = (1, 2, 4, 8, 16, 32, 64)
DEFAULT_RANDOM_PAIRS = 16
EXACT_FLOOR = 1e-10


# -- result types --------------------------------------------------------------


@dataclass(frozen=True)
class DecayCurve:
    """Point estimates and standard errors of a decay curve on a time grid."""

    grid: np.ndarray
    estimate: np.ndarray
    se: np.ndarray
    replicas: int
    strategy: str
    exact: bool = False

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        est = np.asarray(self.estimate, dtype=float)
        se = np.asarray(self.se, dtype=float)
        if grid.ndim != 1 or est.shape != grid.shape or se.shape != grid.shape:
            raise ValueError("grid, estimate and se must be 1-d arrays of equal length")
        if len(grid) > 1 and np.any(np.diff(grid) <= 0):
            raise ValueError("grid must be strictly increasing")
        if np.any(est < 0) or np.any(se < 0):
            raise ValueError("estimates and standard errors must be non-negative")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "estimate", est)
        object.__setattr__(self, "se", se)

    @classmethod
    def from_function(cls, grid, g, strategy: str = "exact") -> "DecayCurve":
        grid = np.asarray(grid, dtype=float)
        values = np.asarray([float(g(t)) for t in grid])
        return cls(grid, np.abs(values), np.zeros_like(grid), 0, strategy, exact=True)

    def rows(self):
        return zip(self.grid.tolist(), self.estimate.tolist(), self.se.tolist())

    def summary(self) -> dict:
        return {"replicas": self.replicas, "strategy": self.strategy, "exact": self.exact,
                "n_points": len(self.grid)}


@dataclass(frozen=True)
class IntegralEstimate:
    """Weighted integral of a decay curve.

    ``value`` is the integral over the grid only; ``tail_bound`` is the
    extrapolated contribution beyond the last grid time ``T``.
    """

    value: float
    se: float
    T: float
    tail_bound: float
    weight: str
    K: float
    tail_model: str

    @property
    def total(self) -> float:
        return self.value + self.tail_bound


@dataclass(frozen=True)
class DriftDiffusionEstimate:
    """Speed and diffusion estimates; fields not computed are ``None``."""

    horizon: float
    replicas: int
    v: np.ndarray
    v_se: np.ndarray
    v_stationary: np.ndarray | None = None
    v_stationary_se: np.ndarray | None = None
    v_stationary_late: np.ndarray | None = None
    v_stationary_late_se: np.ndarray | None = None
    forms_agree: bool | None = None
    f_mean: float | None = None
    f_se: float | None = None
    f_mean_late: float | None = None
    D: np.ndarray | None = None
    D_se: np.ndarray | None = None
    D_batch: np.ndarray | None = None
    D_batch_se: np.ndarray | None = None
    min_eig: float | None = None
    min_eig_se: float | None = None
    condition_a: bool | None = None
    nondegenerate: bool | None = None
    burn_in: float | None = None


@dataclass(frozen=True)
class DecouplingEstimate:
    """``P(tau > T_max)`` minimised over the initial pairs of a strategy."""

    p_hat: float
    se: float
    T_max: float
    replicas: int
    strategy: str
    n_decoupled: int
    floor: float | None
    per_pair: tuple[float, ...]
    per_pair_se: tuple[float, ...] = ()
    taus: np.ndarray = field(repr=False, default=None)

    @property
    def no_decoupling(self) -> bool:
        return self.n_decoupled == 0


@dataclass(frozen=True)
class EPDecay:
    """Environment-process decay curve and its split at the decoupling time.

    ``coupled`` is ``|E[(f1 - f2); t < tau]|``, ``decoupled`` is
    ``|E[(f1 - f2); tau <= t]|`` and ``decoupled_bound`` is
    ``osc(f) * P(tau <= t)``.
    """

    curve: DecayCurve
    coupled: np.ndarray
    coupled_se: np.ndarray
    decoupled: np.ndarray
    decoupled_se: np.ndarray
    decoupled_bound: np.ndarray


@dataclass(frozen=True)
class ContinuityReport:
    epsilon_label: str
    left: float
    left_se: float
    right: float
    right_se: float
    p_hat: float
    p_se: float
    p_floor: float
    C: float
    C_se: float
    C_source: str
    beta: float
    f_norm: float
    mu_alpha: float
    mu_alpha_prime: float
    exact_left: float | None
    verdict: bool
    p_exact: bool = False

    def summary(self) -> dict:
        return asdict(self)


# -- initial pairs ------------------------------------------------------------


def initial_pairs(strategy: str, lattice: TorusLattice, n_layers: int = 1, seed: int = 0,
                  k: int = DEFAULT_RANDOM_PAIRS) -> list[tuple[Configuration, Configuration]]:
    """Initial environment pairs for a strategy (see module docstring)."""
    if strategy not in PAIR_STRATEGIES:
        raise ValueError(f"unknown pair strategy {strategy!r}; choose from {PAIR_STRATEGIES}")
    zeros = Configuration.constant(lattice, 0, n_layers)
    pairs = []
    if strategy in ("extremal", "sup"):
        pairs.append((zeros, Configuration.constant(lattice, 1, n_layers)))
    if strategy == "single-site":
        pairs.append((zeros, zeros.with_site(np.zeros(lattice.d, dtype=np.int64), np.ones(n_layers))))
    if strategy in ("random", "sup"):
        for j in range(k):
            g = stream(seed, j, "pairs")
            pairs.append((Configuration.random(lattice, g, n_layers),
                          Configuration.random(lattice, g, n_layers)))
    return pairs


def _mean_se(x: np.ndarray, axis=0):
    n = x.shape[axis]
    mean = x.mean(axis=axis)
    se = x.std(axis=axis, ddof=1) / math.sqrt(n) if n > 1 else np.zeros_like(mean)
    return mean, se


def _pointwise_max(curves: Sequence[tuple[np.ndarray, np.ndarray]]):
    est = np.stack([c[0] for c in curves])
    se = np.stack([c[1] for c in curves])
    pick = est.argmax(axis=0)
    cols = np.arange(est.shape[1])
    return est[pick, cols], se[pick, cols]


def _local_values(f: LocalFunction, rec: np.ndarray, lattice: TorusLattice) -> np.ndarray:
    """``f`` read at the origin on each snapshot of ``rec`` (shape ``(m, layers, sites)``)."""
    pat = np.zeros(rec.shape[0], dtype=np.int64)
    for k, (off, layer) in enumerate(f.window):
        pat |= rec[:, layer, lattice.index(off)].astype(np.int64) << k
    return f.table[pat]


def _check_grid(t_grid) -> np.ndarray:
    t = np.asarray(t_grid, dtype=float)
    if t.ndim != 1 or len(t) == 0 or np.any(t < 0) or np.any(np.diff(t) <= 0):
        raise ValueError("time grid must be non-negative and strictly increasing")
    return t


# -- environment decay --------------------------------------------------------


def estimate_env_decay(kernel: CouplingKernel, metric: SiteMetric | None, t_grid, replicas: int,
                       pair_strategy: str = "extremal", *, lattice: TorusLattice, seed: int = 0,
                       k: int = DEFAULT_RANDOM_PAIRS, observable: LocalFunction | None = None,
                       workers: int | None = None) -> DecayCurve:
    """Mean site-0 distance ``E rho(eta1_t(0), eta2_t(0))`` of the coupled pair.

    With ``observable`` the curve is ``|E f(eta1_t) - E f(eta2_t)|`` instead
    (absolute value taken after averaging).
    """
    t = _check_grid(t_grid)
    engine = kernel.engine
    metric = engine.metric if metric is None else metric
    w = metric.weight_array
    if len(w) != engine.n_layers:
        raise ValueError("metric and engine disagree on the number of layers")
    pairs = initial_pairs(pair_strategy, lattice, engine.n_layers, seed, k)
    curves = []
    for j, (eta, xi) in enumerate(pairs):
        def one(r, eta=eta, xi=xi, j=j):
            rec1, rec2 = snapshots(engine, eta, xi, t, stream(seed, j * replicas + r, "env"))
            if observable is None:
                return np.abs(rec1[:, :, 0].astype(np.int8) - rec2[:, :, 0].astype(np.int8)) @ w
            return (_local_values(observable, rec1, lattice)
                    - _local_values(observable, rec2, lattice))

        vals = np.stack(map_replicas(one, replicas, workers))
        mean, se = _mean_se(vals)
        curves.append((np.abs(mean), se))
    est, se = _pointwise_max(curves)
    return DecayCurve(t, est, se, replicas, pair_strategy)


def estimate_site_decay_sum(kernel: CouplingKernel, metric: SiteMetric | None, t_grid, replicas: int,
                            *, lattice: TorusLattice, seed: int = 0,
                            workers: int | None = None) -> DecayCurve:
    """``sum_x E rho(eta1_t(x), eta2_t(x))`` for a pair differing at the origin only.

    The sum runs over the whole torus; the s.e. comes from per-replica sums.
    """
    t = _check_grid(t_grid)
    engine = kernel.engine
    metric = engine.metric if metric is None else metric
    w = metric.weight_array
    ((eta, xi),) = initial_pairs("single-site", lattice, engine.n_layers)

    def one(r):
        rec1, rec2 = snapshots(engine, eta, xi, t, stream(seed, r, "env"))
        diff = np.abs(rec1.astype(np.int8) - rec2.astype(np.int8))  # (m, layers, sites)
        return np.einsum("mls,l->m", diff, w)

    vals = np.stack(map_replicas(one, replicas, workers))
    mean, se = _mean_se(vals)
    return DecayCurve(t, mean, se, replicas, "single-site")


# -- environment-process decay -------------------------------------------------


def _streams(seed: int, r: int, tag: str = ""):
    return stream(seed, r, tag + "clock"), stream(seed, r, tag + "env")


def estimate_ep_decay(f: LocalFunction, eta: Configuration, xi: Configuration, alpha: RateFunction,
                      kernel: CouplingKernel, t_grid, replicas: int, *, seed: int = 0,
                      strict_torus: bool = True, workers: int | None = None,
                      tag: str = "") -> EPDecay:
    """``|E f(theta_{-X1_t} eta1_t) - E f(theta_{-X2_t} eta2_t)|`` from coupled walkers at the origin."""
    t = _check_grid(t_grid)
    horizon = float(t[-1])

    def one(r):
        sys = build_coupled_system(eta, 0 * np.zeros(alpha.d, dtype=np.int64), xi,
                                   np.zeros(alpha.d, dtype=np.int64), alpha, kernel,
                                   _streams(seed, r, tag), horizon=horizon,
                                   strict_torus=strict_torus)
        rec, _ = sys._run(horizon, grid=t, f=f)
        return rec.f1 - rec.f2, rec.decoupled

    out = map_replicas(one, replicas, workers)
    diff = np.stack([o[0] for o in out])
    dec = np.stack([o[1] for o in out])
    mean, se = _mean_se(diff)
    cmean, cse = _mean_se(np.where(dec, 0.0, diff))
    dmean, dse = _mean_se(np.where(dec, diff, 0.0))
    curve = DecayCurve(t, np.abs(mean), se, replicas, "given")
    return EPDecay(curve, np.abs(cmean), cse, np.abs(dmean), dse, f.oscillation() * dec.mean(axis=0))


def estimate_ep_site_sum(f: LocalFunction, alpha: RateFunction, kernel: CouplingKernel, t_grid,
                         replicas: int, *, lattice: TorusLattice, radius: int = 4, seed: int = 0,
                         strict_torus: bool = True, workers: int | None = None) -> dict:
    """Integrated EP decay for pairs differing at a single site ``x``, summed over ``|x|_inf <= radius``.

    Only a finite set of offsets is visited; the result reports which.
    Base configuration: all zeros, with site ``x`` flipped in every layer.
    """
    t = _check_grid(t_grid)
    d = lattice.d
    n_layers = kernel.engine.n_layers
    base = Configuration.constant(lattice, 0, n_layers)
    offsets = [x for x in np.ndindex(*(2 * radius + 1,) * d)]
    offsets = [tuple(int(v) - radius for v in x) for x in offsets]
    per_site = {}
    total, var = 0.0, 0.0
    for j, x in enumerate(offsets):
        xi = base.with_site(np.asarray(x), np.ones(n_layers))
        ep = estimate_ep_decay(f, base, xi, alpha, kernel, t, replicas, seed=seed,
                               strict_torus=strict_torus, workers=workers, tag=f"site{j}/")
        val, se = grid_integral(t, ep.curve.estimate, Weight(), ep.curve.se)
        per_site[x] = (val, se)
        total += val
        var += se**2
    return {"offsets": offsets, "per_site": per_site, "sum": total, "se": math.sqrt(var),
            "radius": radius, "T": float(t[-1])}


# -- weighted integrals ---------------------------------------------------------


def transference_integral(curve: DecayCurve, weight: Weight = Weight(), K: float = 1.0) -> IntegralEstimate:
    """``int_0^inf weight(t/K) curve(t) dt``: grid part plus fitted-tail bound.

    Raises :class:`DivergentIntegralError` if the weighted fitted tail is not
    integrable and :class:`TailFitError` if the tail cannot be fitted.
    """
    w = weight.scaled(K) if weight.kind in ("exp", "poly") else weight
    w.check_submultiplicative()
    grid, est, ses = curve.grid, curve.estimate, curve.se
    if curve.exact:
        # exact curves bottom out in rounding noise; cut at the numerical floor
        keep = np.nonzero(est > EXACT_FLOOR * est.max())[0]
        n = int(keep[-1]) + 1 if len(keep) else 1
        grid, est, ses = grid[:n], est[:n], ses[:n]
    value, se = grid_integral(grid, est, w, ses)
    T = float(grid[-1])
    start = int(math.floor(len(grid) * 2 / 3))
    if len(grid) < len(curve.grid) and len(grid) < 6:
        return IntegralEstimate(value, se, T, 0.0, w.tag, float(K), "zero")
    if np.all(est[start:] == 0):
        return IntegralEstimate(value, se, T, 0.0, w.tag, float(K), "zero")
    fit = fit_tail(grid, est)
    tail = tail_integral(fit, T, w)
    return IntegralEstimate(value, se, T, tail, w.tag, float(K), fit.model)


def smallest_convergent_K(curve: DecayCurve, weight: Weight, K_grid=K_GRID):
    """First ``K`` on the grid for which the weighted integral converges.

    Returns ``(K or None, {K: IntegralEstimate or error message})``.
    """
    results = {}
    for K in K_grid:
        try:
            results[K] = transference_integral(curve, weight, K)
        except DivergentIntegralError as exc:
            results[K] = str(exc)
            continue
        return K, results
    return None, results


# -- speed and diffusion ------------------------------------------------------


def _check_events(alpha: RateFunction, T: float):
    if T * alpha.norms().total_rate < 1e3:
        raise ValueError(
            f"horizon {T} gives fewer than 1000 expected clock rings; increase T"
        )


def estimate_speed(alpha: RateFunction, kernel: CouplingKernel, T: float, replicas: int, *,
                   lattice: TorusLattice, seed: int = 0, burn_in: float = 50.0, avg_dt: float = 0.1,
                   f: LocalFunction | None = None, strict_torus: bool = True,
                   workers: int | None = None, tag: str = "") -> DriftDiffusionEstimate:
    """Trajectory speed ``X_T / T`` and the stationary average of the local drift.

    The stationary form samples ``sum_z z alpha(theta_{-X_t} eta_t, z)`` (and
    ``f`` if given) every ``avg_dt`` after ``burn_in``; the ``late`` fields
    use a burn-in twice as long as a sensitivity check.
    """
    _check_events(alpha, T)
    if not T > 2 * burn_in:
        raise ValueError("horizon must exceed twice the burn-in")
    engine = kernel.engine
    d = alpha.d
    origin = np.zeros(d, dtype=np.int64)

    def one(r):
        eta = engine.stationary_config(lattice, stream(seed, r, tag + "init"))
        sys = build_coupled_system(eta, origin, None, None, alpha, kernel, _streams(seed, r, tag),
                                   horizon=T, strict_torus=strict_torus)
        early, _ = sys._run(2 * burn_in, f=f, avg_start=burn_in, avg_dt=avg_dt)
        late, _ = sys._run(T, f=f, avg_start=early.next_sample, avg_dt=avg_dt)
        return (sys.X1 / T, (early.drift_sum + late.drift_sum) / (early.n_avg + late.n_avg),
                late.drift_sum / late.n_avg, (early.f_sum + late.f_sum) / (early.n_avg + late.n_avg),
                late.f_sum / late.n_avg)

    out = map_replicas(one, replicas, workers)
    v, v_se = _mean_se(np.stack([o[0] for o in out]))
    vs, vs_se = _mean_se(np.stack([o[1] for o in out]))
    vl, vl_se = _mean_se(np.stack([o[2] for o in out]))
    fm, fse = _mean_se(np.array([o[3] for o in out]))
    fl, _ = _mean_se(np.array([o[4] for o in out]))
    combined = np.sqrt(v_se**2 + vs_se**2)
    agree = bool(np.all(np.abs(v - vs) <= 3 * combined))
    return DriftDiffusionEstimate(
        horizon=float(T), replicas=replicas, v=v, v_se=v_se, v_stationary=vs, v_stationary_se=vs_se,
        v_stationary_late=vl, v_stationary_late_se=vl_se, forms_agree=agree,
        f_mean=float(fm) if f is not None else None, f_se=float(fse) if f is not None else None,
        f_mean_late=float(fl) if f is not None else None, burn_in=burn_in,
    )


def condition_a_holds(alpha: RateFunction) -> bool:
    """Sufficient check of the nondegeneracy condition (a) in every direction.

    Jumps whose rate is positive for every window pattern are always
    available; if they span ``R^d`` every unit vector has one with
    ``<e, z> != 0``.
    """
    always = alpha.jumps[alpha.tables.min(axis=1) > 0]
    if len(always) == 0:
        return False
    return int(np.linalg.matrix_rank(always.astype(float))) == alpha.d


def estimate_diffusion(alpha: RateFunction, kernel: CouplingKernel, T: float, replicas: int, *,
                       lattice: TorusLattice, seed: int = 0, n_batches: int = 50,
                       batch_T: float | None = None, strict_torus: bool = True,
                       workers: int | None = None, tag: str = "") -> DriftDiffusionEstimate:
    """Covariance of ``(X_T - v T)/sqrt(T)`` over replicas, with a batch-means cross-check.

    The batch-means estimate comes from one run of length ``n_batches *
    batch_T`` cut into consecutive blocks.
    """
    norms = alpha.norms()
    if not math.isfinite(norms.second_moment):
        raise ValueError("second moment of the jump rates is not finite")
    engine = kernel.engine
    d = alpha.d
    origin = np.zeros(d, dtype=np.int64)

    def one(r):
        eta = engine.stationary_config(lattice, stream(seed, r, tag + "init"))
        sys = build_coupled_system(eta, origin, None, None, alpha, kernel, _streams(seed, r, tag),
                                   horizon=T, strict_torus=strict_torus)
        sys._run(T)
        return sys.X1.astype(float)

    X = np.stack(map_replicas(one, replicas, workers))
    v = X.mean(axis=0) / T
    v_se = X.std(axis=0, ddof=1) / T / math.sqrt(replicas)
    Y = (X - v * T) / math.sqrt(T)
    prods = Y[:, :, None] * Y[:, None, :]
    D = prods.sum(axis=0) / (replicas - 1)
    D = 0.5 * (D + D.T)
    D_se = prods.std(axis=0, ddof=1) / math.sqrt(replicas)
    evals, evecs = np.linalg.eigh(D)
    e = evecs[:, 0]
    proj = (Y @ e) ** 2
    min_eig = float(evals[0])
    min_eig_se = float(proj.std(ddof=1) / math.sqrt(replicas))

    bT = float(T if batch_T is None else batch_T)
    total = n_batches * bT
    eta = engine.stationary_config(lattice, stream(seed, 0, tag + "batch-init"))
    sys = build_coupled_system(eta, origin, None, None, alpha, kernel, _streams(seed, 0, tag + "batch-"),
                               horizon=total, strict_torus=strict_torus)
    grid = bT * np.arange(n_batches + 1)
    rec, _ = sys._run(total, grid=grid)
    inc = np.diff(rec.X1.astype(float), axis=0)
    Z = (inc - inc.mean(axis=0)) / math.sqrt(bT)
    bprods = Z[:, :, None] * Z[:, None, :]
    D_b = bprods.sum(axis=0) / (n_batches - 1)
    D_b_se = bprods.std(axis=0, ddof=1) / math.sqrt(n_batches)

    cond = condition_a_holds(alpha)
    nondeg = bool(min_eig > 3 * min_eig_se)
    return DriftDiffusionEstimate(
        horizon=float(T), replicas=replicas, v=v, v_se=v_se, D=D, D_se=D_se,
        D_batch=0.5 * (D_b + D_b.T), D_batch_se=D_b_se, min_eig=min_eig, min_eig_se=min_eig_se,
        condition_a=cond, nondegenerate=nondeg,
    )


# -- decoupling and continuity ---------------------------------------------------


def estimate_decoupling(alpha: RateFunction, kernel: CouplingKernel, T_max: float, replicas: int, *,
                        lattice: TorusLattice, seed: int = 0, strategy: str = "extremal",
                        k: int = DEFAULT_RANDOM_PAIRS, decay=None, strict_torus: bool = True,
                        workers: int | None = None, tag: str = "") -> DecouplingEstimate:
    """Censored estimate of ``P(tau > T_max)``, minimised over the pairs of ``strategy``.

    ``floor`` is the analytic lower bound when a decay model is available
    (``decay`` or the engine's closed form), else ``None``.
    """
    engine = kernel.engine
    pairs = initial_pairs(strategy, lattice, engine.n_layers, seed, k)
    origin = np.zeros(alpha.d, dtype=np.int64)
    per_pair, ses, all_taus, n_dec = [], [], [], 0
    for j, (eta, xi) in enumerate(pairs):
        def one(r, eta=eta, xi=xi, j=j):
            sys = build_coupled_system(eta, origin, xi, origin, alpha, kernel,
                                       _streams(seed, j * replicas + r, tag), horizon=T_max,
                                       strict_torus=strict_torus)
            return decoupling_time(sys, T_max)

        res = map_replicas(one, replicas, workers)
        cens = np.array([c for _, c in res], dtype=float)
        taus = np.array([tau for tau, _ in res])
        p, se = _mean_se(cens)
        per_pair.append(float(p))
        ses.append(float(se))
        all_taus.append(taus)
        n_dec += int((cens == 0).sum())
    i = int(np.argmin(per_pair))
    floor = None
    src = decay if decay is not None else (engine if engine.exact_decay(0.0) is not None else None)
    if src is not None:
        try:
            floor = decoupling_lower_bound(alpha, src)
        except DivergentIntegralError:
            floor = 0.0
    return DecouplingEstimate(per_pair[i], ses[i], float(T_max), replicas, strategy, n_dec,
                              floor, tuple(per_pair), tuple(ses), all_taus[i])


def _continuity_constant(alpha: RateFunction, kernel: CouplingKernel, lattice, seed, workers,
                         decay_replicas: int, decay_grid) -> tuple[float, float, str]:
    engine = kernel.engine
    norms = alpha.norms()
    spread = 0.0 if alpha.environment_independent else norms.spread_rate
    if engine.exact_decay(0.0) is not None:
        value, _ = spread_integral(engine, spread, alpha.d)
        return value, 0.0, "exact decay"
    curve = estimate_env_decay(kernel, None, decay_grid, decay_replicas, "sup", lattice=lattice,
                               seed=seed, workers=workers)
    value, _ = spread_integral(curve, spread, alpha.d)
    _, se = grid_integral(curve.grid, curve.estimate, Weight("spread", rate=spread, d=alpha.d), curve.se)
    return value, se, "estimated decay (sup strategy)"


def continuity_experiment(alpha: RateFunction, alpha_prime: RateFunction, f: LocalFunction,
                          kernel: CouplingKernel, budget: dict | None = None, *,
                          lattice: TorusLattice, seed: int = 0, workers: int | None = None,
                          label: str = "") -> ContinuityReport:
    """Compare ``|mu_alpha(f) - mu_alpha'(f)|`` with ``C(alpha)/p(alpha) ||alpha - alpha'||_0 |||f|||``.

    ``budget`` keys: ``T`` and ``replicas`` for the stationary averages,
    ``T_max``, ``p_replicas`` and ``k`` for the decoupling runs, ``burn_in``,
    ``strict_torus``, ``decay_replicas`` and ``decay_grid`` (used only when
    the engine has no closed-form decay). For environment-independent
    rates the walkers never separate, so ``C`` drops the range factor.
    """
    b = dict(T=2000.0, replicas=16, T_max=50.0, p_replicas=2000, k=DEFAULT_RANDOM_PAIRS,
             burn_in=50.0, strict_torus=True, decay_replicas=2000,
             decay_grid=np.linspace(0.25, 40.0, 160))
    if budget:
        unknown = set(budget) - set(b)
        if unknown:
            raise ValueError(f"unknown budget keys {sorted(unknown)}")
        b.update(budget)
    metric = kernel.engine.metric
    beta = rate_distance(alpha, alpha_prime)
    f_norm = triple_norm(f, metric)
    C, C_se, C_source = _continuity_constant(alpha, kernel, lattice, seed, workers,
                                       b["decay_replicas"], b["decay_grid"])
    dec = estimate_decoupling(alpha, kernel, b["T_max"], b["p_replicas"], lattice=lattice, seed=seed,
                              strategy="sup", k=b["k"], strict_torus=b["strict_torus"],
                              workers=workers, tag="p/")
    p_exact = alpha.environment_independent
    p_hat = 1.0 if p_exact else dec.p_hat
    s1 = estimate_speed(alpha, kernel, b["T"], b["replicas"], lattice=lattice, seed=seed,
                        burn_in=b["burn_in"], f=f, strict_torus=b["strict_torus"], workers=workers,
                        tag="mu/")
    s2 = estimate_speed(alpha_prime, kernel, b["T"], b["replicas"], lattice=lattice, seed=seed,
                        burn_in=b["burn_in"], f=f, strict_torus=b["strict_torus"], workers=workers,
                        tag="mu'/")
    left = abs(s1.f_mean - s2.f_mean)
    left_se = math.hypot(s1.f_se, s2.f_se)
    right = C / p_hat * beta * f_norm if p_hat > 0 else math.inf
    p_se = 0.0 if p_exact else dec.se
    if right > 0 and math.isfinite(right):
        right_se = right * math.hypot(C_se / C if C else 0.0, p_se / p_hat)
    else:
        right_se = 0.0
    exact_left = _exact_left(alpha, alpha_prime, f, kernel, lattice)
    return ContinuityReport(
        epsilon_label=label, left=left, left_se=left_se, right=right, right_se=right_se, p_hat=p_hat,
        p_se=p_se, p_floor=dec.floor if dec.floor is not None else 0.0,
        C=C, C_se=C_se, C_source=C_source, beta=beta, f_norm=f_norm, mu_alpha=s1.f_mean,
        mu_alpha_prime=s2.f_mean, exact_left=exact_left, verdict=bool(left <= right + 3 * left_se),
        p_exact=p_exact,
    )


def _exact_left(alpha, alpha_prime, f, kernel, lattice) -> float | None:
    from .oracle import MAX_BITS_DYNAMIC, build_env_generator, build_ep_generator, stationary_distribution

    engine = kernel.engine
    if engine.n_layers * lattice.n_sites > MAX_BITS_DYNAMIC or engine.kind not in ("product", "glauber"):
        return None
    if engine.kind == "product" and min(engine.layer_rates) <= 0:
        return None
    E = build_env_generator(engine, lattice)
    mu = [stationary_distribution(build_ep_generator(E, a)).marginal(f) for a in (alpha, alpha_prime)]
    return abs(mu[0] - mu[1])
