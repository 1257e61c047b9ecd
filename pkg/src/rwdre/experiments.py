"""Experiment registry and runner.

Each registered experiment turns a validated :class:`ExperimentConfig`
into decay curves and a summary of scalars. :func:`run` writes them,
together with a manifest, into an output directory; files are first
written to a staging directory so a failed run leaves nothing behind.
"""

from __future__ import annotations

import math
import shutil
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from .artifacts import exact, num, write_curve, write_json, write_trajectories
from .config import EXPERIMENTS, ExperimentConfig
from .coupling import advance, build_coupled_system, decoupling_lower_bound, run_with_restarts
from .environments import stack_decay_bound
from .estimators import (
    DecayCurve,
    continuity_experiment,
    estimate_decoupling,
    estimate_diffusion,
    estimate_env_decay,
    estimate_ep_decay,
    estimate_site_decay_sum,
    estimate_speed,
    initial_pairs,
    smallest_convergent_K,
    transference_integral,
)
from .integrals import DivergentIntegralError, TailFitError, Weight, fit_tail, loglog_slope
from .oracle import (
    MAX_BITS,
    MAX_BITS_DYNAMIC,
    build_env_generator,
    build_ep_generator,
    exact_ep_semigroup,
    exact_speed,
    export_matrix_market,
    moment_ode_diffusion,
    stationary_distribution,
)
from .parallel import map_replicas
from .rng import RNG_ALGORITHM, stream

__all__ = ["Experiment", "ExperimentResult", "REGISTRY", "registry_list", "run_experiment", "run"]

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_VIOLATION = 2


@dataclass
class ExperimentResult:
    curves: dict[str, DecayCurve] = field(default_factory=dict)
    summary: dict = field(default_factory=dict)
    verdict: bool | None = None


@dataclass(frozen=True)
class Experiment:
    name: str
    description: str
    claim: str
    fn: Callable[[ExperimentConfig, int | None], ExperimentResult]


def _z_scores(est, se, ref):
    est, se, ref = (np.asarray(v, dtype=float) for v in (est, se, ref))
    diff = np.abs(est - ref)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, diff / np.where(se > 0, se, 1.0), np.where(diff == 0, 0.0, np.inf))
    return z


def _tiny(cfg: ExperimentConfig, lattice=None, limit=MAX_BITS_DYNAMIC) -> bool:
    lattice = lattice or cfg.lattice
    engine, _ = cfg.engine()
    if engine.kind == "product" and min(engine.layer_rates) <= 0:
        return False
    return engine.n_layers * lattice.n_sites <= limit


def _tail_summary(curve: DecayCurve, d: int) -> dict:
    try:
        fit = fit_tail(curve.grid, curve.estimate)
    except TailFitError as exc:
        return {"tail_fit": str(exc)}
    return {"tail_model": fit.model, "tail_slope": exact(fit.slope), "tail_r2": exact(fit.r2),
            "integrable_against_t^d": bool(fit.exponent < -(d + 1))}


# -- experiments ----------------------------------------------------------------


def _env_decay(cfg: ExperimentConfig, workers) -> ExperimentResult:
    engine, kernel = cfg.engine()
    grid = cfg.time_grid()
    curve = estimate_env_decay(kernel, None, grid, cfg.replicas, cfg.get("experiment", "strategy"),
                               lattice=cfg.lattice, seed=cfg.seed, k=cfg.get("experiment", "k"),
                               workers=workers)
    res = ExperimentResult({"env-decay": curve})
    s = {"strategy": curve.strategy, "replicas": curve.replicas, "engine": engine.name}
    checks = []
    exact_curve = engine.exact_decay(grid) if cfg.get("experiment", "strategy") in ("extremal", "single-site") else None
    if exact_curve is not None:
        z = _z_scores(curve.estimate, curve.se, exact_curve)
        s["max_z_vs_exact"] = exact(float(z.max()))
        s["exact_match_3se"] = bool(np.all(z <= 3))
        res.curves["env-decay-exact"] = DecayCurve(grid, exact_curve, np.zeros_like(grid), 0, "exact", True)
    if engine.layer_spec is not None:
        bound = stack_decay_bound(engine.layer_spec, grid)
        ok = bool(np.all(curve.estimate <= bound.bound + 3 * curve.se))
        s["below_stack_bound_3se"] = ok
        s["tail_mass"] = exact(bound.tail_mass)
        checks.append(ok)
    lo, hi = cfg.get("time", "slope_from"), cfg.get("time", "slope_to")
    if lo is not None and hi is not None:
        m = (grid >= lo) & (grid <= hi) & (curve.estimate > 0)
        s["loglog_slope"] = {"value": loglog_slope(grid[m], curve.estimate[m]), "window": [lo, hi],
                             "exact": False, "se": _slope_se(grid[m], curve.estimate[m], curve.se[m])}
    s.update(_tail_summary(curve, cfg.lattice.d))
    res.summary = s
    res.verdict = all(checks) if checks else None
    return res


def _slope_se(t, y, se) -> float:
    """Delta-method s.e. of a least-squares log-log slope."""
    x = np.log(t)
    xc = x - x.mean()
    coef = xc / (xc**2).sum()
    return float(np.sqrt(((coef * se / y) ** 2).sum()))


def _site_decay_sum(cfg, workers) -> ExperimentResult:
    engine, kernel = cfg.engine()
    grid = cfg.time_grid()
    curve = estimate_site_decay_sum(kernel, None, grid, cfg.replicas, lattice=cfg.lattice,
                                    seed=cfg.seed, workers=workers)
    res = ExperimentResult({"site-decay-sum": curve})
    s = {"replicas": curve.replicas, "engine": engine.name, "sites": cfg.lattice.n_sites}
    ref = engine.exact_decay(grid) if engine.kind == "product" else None
    if ref is not None:
        z = _z_scores(curve.estimate, curve.se, ref)
        s["max_z_vs_exact"] = exact(float(z.max()))
        s["exact_match_3se"] = bool(np.all(z <= 3))
    s.update(_tail_summary(curve, cfg.lattice.d))
    try:
        it = transference_integral(curve, Weight())
        s["integral"] = num(it.value, it.se)
        s["integral_tail_bound"] = exact(it.tail_bound)
    except (DivergentIntegralError, TailFitError) as exc:
        s["integral"] = str(exc)
    res.summary = s
    return res


def _ep_pairs(cfg):
    engine, _ = cfg.engine()
    strategy = cfg.get("experiment", "strategy")
    return initial_pairs(strategy, cfg.lattice, engine.n_layers, cfg.seed, cfg.get("experiment", "k"))


def _exact_ep_curve(cfg, alpha, f, eta, xi, grid):
    engine, _ = cfg.engine()
    E = build_env_generator(engine, cfg.lattice)
    G = build_ep_generator(E, alpha)
    return np.abs(exact_ep_semigroup(G, f, eta, grid) - exact_ep_semigroup(G, f, xi, grid))


def _ep_decay(cfg, workers) -> ExperimentResult:
    engine, kernel = cfg.engine()
    alpha = cfg.rates()
    f = cfg.observable()
    grid = cfg.time_grid()
    strict = cfg.get("lattice", "strict_torus")
    res = ExperimentResult()
    best = None
    for j, (eta, xi) in enumerate(_ep_pairs(cfg)):
        ep = estimate_ep_decay(f, eta, xi, alpha, kernel, grid, cfg.replicas, seed=cfg.seed,
                               strict_torus=strict, workers=workers, tag=f"pair{j}/")
        if best is None or ep.curve.estimate.sum() > best[0].curve.estimate.sum():
            best = (ep, eta, xi)
    ep, eta, xi = best
    res.curves["ep-decay"] = ep.curve
    res.curves["ep-decay-coupled"] = DecayCurve(grid, ep.coupled, ep.coupled_se, cfg.replicas, "split")
    res.curves["ep-decay-decoupled"] = DecayCurve(grid, ep.decoupled, ep.decoupled_se, cfg.replicas, "split")
    s = {"strategy": cfg.get("experiment", "strategy"), "replicas": cfg.replicas}
    within = ep.curve.estimate <= ep.coupled + ep.decoupled + 1e-12
    s["split_bound_holds"] = bool(np.all(within))
    s["decoupled_le_osc_times_P"] = bool(np.all(ep.decoupled <= ep.decoupled_bound + 3 * ep.decoupled_se))
    if _tiny(cfg):
        ref = _exact_ep_curve(cfg, alpha, f, eta, xi, grid)
        z = _z_scores(ep.curve.estimate, ep.curve.se, ref)
        s["max_z_vs_exact"] = exact(float(z.max()))
        res.curves["ep-decay-exact"] = DecayCurve(grid, ref, np.zeros_like(grid), 0, "exact", True)
    res.summary = s
    return res


def _transference(cfg, workers) -> ExperimentResult:
    engine, kernel = cfg.engine()
    alpha = cfg.rates()
    f = cfg.observable()
    grid = cfg.time_grid()
    res = ExperimentResult()
    eta, xi = _ep_pairs(cfg)[0]
    if cfg.get("experiment", "exact"):
        if not _tiny(cfg):
            raise ValueError("exact transference needs a torus within the enumeration budget")
        curve = DecayCurve(grid, _exact_ep_curve(cfg, alpha, f, eta, xi, grid), np.zeros_like(grid),
                           0, "exact", True)
    else:
        curve = estimate_ep_decay(f, eta, xi, alpha, kernel, grid, cfg.replicas, seed=cfg.seed,
                                  strict_torus=cfg.get("lattice", "strict_torus"), workers=workers).curve
    res.curves["transference"] = curve
    s = {"exact_curve": curve.exact, "weight": cfg.get("weight", "kind")}
    try:
        plain = transference_integral(curve, Weight())
        s["integral"] = exact(plain.value) if curve.exact else num(plain.value, plain.se)
        s["integral_tail_bound"] = exact(plain.tail_bound)
        s["T"] = exact(plain.T)
    except (DivergentIntegralError, TailFitError) as exc:
        s["integral"] = str(exc)
    K, table = smallest_convergent_K(curve, cfg.weight(), cfg.get("weight", "K_grid"))
    s["smallest_K"] = K
    s["K_table"] = {
        str(k): (v if isinstance(v, str) else
                 {"value": v.value, "se": v.se, "tail_bound": v.tail_bound, "exact": curve.exact})
        for k, v in table.items()
    }
    res.summary = s
    return res


def _speed(cfg, workers, lattice=None, tag="") -> ExperimentResult:
    engine, kernel = cfg.engine()
    alpha = cfg.rates()
    f = cfg.observable()
    lattice = lattice or cfg.lattice
    est = estimate_speed(alpha, kernel, cfg.get("time", "T"), cfg.get("experiment", "avg_replicas"),
                         lattice=lattice, seed=cfg.seed, burn_in=cfg.get("time", "burn_in"),
                         avg_dt=cfg.get("time", "avg_dt"), f=f,
                         strict_torus=cfg.get("lattice", "strict_torus"), workers=workers, tag=tag)
    s = {
        "L": lattice.L,
        "replicas": est.replicas,
        "T": exact(est.horizon),
        "v_trajectory": num(est.v, est.v_se),
        "v_stationary": num(est.v_stationary, est.v_stationary_se),
        "v_stationary_2x_burn_in": num(est.v_stationary_late, est.v_stationary_late_se),
        "mu_f": num(est.f_mean, est.f_se),
        "forms_agree_3se": est.forms_agree,
        "burn_in": exact(est.burn_in),
    }
    if _tiny(cfg, lattice, MAX_BITS):
        E = build_env_generator(engine, lattice)
        G = build_ep_generator(E, alpha)
        pi = stationary_distribution(G)
        v = exact_speed(pi, alpha)
        s["v_exact"] = exact(v)
        s["v_exact_z"] = exact(float(np.max(_z_scores(est.v, est.v_se, v))))
        s["mu_f_exact"] = exact(pi.marginal(f))
    return ExperimentResult(summary=s, verdict=est.forms_agree)


def _diffusion(cfg, workers) -> ExperimentResult:
    engine, kernel = cfg.engine()
    alpha = cfg.rates()
    est = estimate_diffusion(alpha, kernel, cfg.get("time", "T"), cfg.replicas, lattice=cfg.lattice,
                             seed=cfg.seed, n_batches=cfg.get("experiment", "n_batches"),
                             strict_torus=cfg.get("lattice", "strict_torus"), workers=workers)
    s = {
        "T": exact(est.horizon),
        "replicas": est.replicas,
        "v": num(est.v, est.v_se),
        "D": num(est.D, est.D_se),
        "D_batch_means": num(est.D_batch, est.D_batch_se),
        "min_eigenvalue": num(est.min_eig, est.min_eig_se),
        "condition_a": est.condition_a,
        "nondegenerate_3se": est.nondegenerate,
    }
    if _tiny(cfg):
        G = build_ep_generator(build_env_generator(engine, cfg.lattice), alpha)
        T = max(50.0, cfg.get("time", "T"))
        ode = moment_ode_diffusion(G, alpha, np.linspace(0.0, T, 201))
        s["D_exact"] = exact(ode.D)
        rel = np.abs(est.D - ode.D) / np.where(np.abs(ode.D) > 0, np.abs(ode.D), 1.0)
        s["D_rel_diff"] = exact(float(rel.max()))
        s["D_agree"] = bool(np.all((rel <= 0.1) | (np.abs(est.D - ode.D) <= 3 * est.D_se)))
    return ExperimentResult(summary=s)


def _decoupling(cfg, workers) -> ExperimentResult:
    engine, kernel = cfg.engine()
    alpha = cfg.rates()
    T_max = cfg.get("time", "T_max")
    est = estimate_decoupling(alpha, kernel, T_max, cfg.replicas, lattice=cfg.lattice, seed=cfg.seed,
                              strategy=cfg.get("experiment", "strategy"), k=cfg.get("experiment", "k"),
                              strict_torus=cfg.get("lattice", "strict_torus"), workers=workers)
    s = {
        "T_max": exact(T_max),
        "replicas": est.replicas,
        "strategy": est.strategy,
        "p_hat": num(est.p_hat, est.se),
        "per_pair": [num(p, se) for p, se in zip(est.per_pair, est.per_pair_se)],
        "decoupling_events": est.n_decoupled,
        "triple_norm_alpha": exact(alpha.norms().triple),
    }
    verdict = None
    if est.floor is not None:
        s["lower_bound"] = exact(est.floor)
        verdict = bool(est.p_hat >= est.floor - 3 * est.se)
        s["bound_respected_3se"] = verdict
    if est.no_decoupling:
        s["verdict"] = "p̂ = 1 (no decoupling events)"
    elif verdict is not None:
        s["verdict"] = "p̂ >= bound - 3 se" if verdict else "p̂ below bound - 3 se"
    # restart scheme: number of restarts over the horizon
    eta, xi = initial_pairs("extremal", cfg.lattice, engine.n_layers)[0]
    origin = np.zeros(alpha.d, dtype=np.int64)

    def one(r):
        sys = build_coupled_system(eta, origin, xi, origin, alpha, kernel,
                                   (stream(cfg.seed, r, "restart/clock"), stream(cfg.seed, r, "restart/env")),
                                   horizon=T_max, strict_torus=cfg.get("lattice", "strict_torus"))
        run_with_restarts(sys, T_max)
        gap = float(np.abs(sys.X1 - sys.X2).sum())
        return sys.n_restarts, gap <= sys.decoupling_jump_sum
    out = map_replicas(one, cfg.replicas, workers)
    n = np.array([o[0] for o in out], dtype=float)
    s["restarts_mean"] = num(n.mean(), n.std(ddof=1) / math.sqrt(len(n)) if len(n) > 1 else 0.0)
    s["restart_bookkeeping_holds"] = bool(all(o[1] for o in out))
    return ExperimentResult(summary=s, verdict=verdict)


def _continuity(cfg, workers) -> ExperimentResult:
    engine, kernel = cfg.engine()
    alpha = cfg.rates()
    f = cfg.observable()
    budget = dict(T=cfg.get("time", "T"), replicas=cfg.get("experiment", "avg_replicas"),
                  T_max=cfg.get("time", "T_max"), p_replicas=cfg.replicas, k=cfg.get("experiment", "k"),
                  burn_in=cfg.get("time", "burn_in"), strict_torus=cfg.get("lattice", "strict_torus"))
    reports = []
    for eps in cfg.get("experiment", "epsilons"):
        reports.append(continuity_experiment(alpha, cfg.rates(perturb=eps), f, kernel, budget,
                                             lattice=cfg.lattice, seed=cfg.seed, workers=workers,
                                             label=repr(eps)))
    s = {"reports": []}
    for r in reports:
        s["reports"].append({
            "epsilon": float(r.epsilon_label),
            "left": num(r.left, r.left_se),
            "right": exact(r.right) if r.p_exact and r.C_se == 0 else num(r.right, r.right_se),
            "p_hat": exact(r.p_hat) if r.p_exact else num(r.p_hat, r.p_se),
            "p_floor": exact(r.p_floor),
            "C": exact(r.C) if r.C_se == 0 else num(r.C, r.C_se),
            "C_source": r.C_source,
            "beta": exact(r.beta),
            "f_triple_norm": exact(r.f_norm),
            "left_exact": exact(r.exact_left) if r.exact_left is not None else None,
            "verdict": r.verdict,
        })
    eps = np.array([float(r.epsilon_label) for r in reports])
    if len(eps) >= 2:
        coef = (eps - eps.mean()) / ((eps - eps.mean()) ** 2).sum()
        for key, vals, ses in (("left_slope", [r.left for r in reports], [r.left_se for r in reports]),
                               ("right_slope", [r.right for r in reports], [r.right_se for r in reports])):
            s[key] = num(float(coef @ np.asarray(vals)), float(np.sqrt((coef**2 * np.asarray(ses) ** 2).sum())))
    verdict = all(r.verdict for r in reports)
    s["all_within_bound"] = verdict
    return ExperimentResult(summary=s, verdict=verdict)


def _oracle_crosscheck(cfg, workers) -> ExperimentResult:
    if not _tiny(cfg):
        raise ValueError("oracle-crosscheck needs a torus within the enumeration budget")
    engine, kernel = cfg.engine()
    alpha = cfg.rates()
    f = cfg.observable()
    G = build_ep_generator(build_env_generator(engine, cfg.lattice), alpha)
    pi = stationary_distribution(G)
    v = exact_speed(pi, alpha)
    sp = estimate_speed(alpha, kernel, cfg.get("time", "T"), cfg.get("experiment", "avg_replicas"),
                        lattice=cfg.lattice, seed=cfg.seed, burn_in=cfg.get("time", "burn_in"),
                        avg_dt=cfg.get("time", "avg_dt"), f=f, strict_torus=False, workers=workers)
    T_d = cfg.get("time", "T_max")
    ode = moment_ode_diffusion(G, alpha, np.linspace(0.0, max(50.0, T_d), 201))
    df = estimate_diffusion(alpha, kernel, T_d, cfg.replicas, lattice=cfg.lattice, seed=cfg.seed,
                            strict_torus=False, workers=workers, tag="D/")
    s = {
        "v_exact": exact(v),
        "v_mc": num(sp.v, sp.v_se),
        "v_abs_diff_over_se": exact(float(np.max(_z_scores(sp.v, sp.v_se, v)))),
        "mu_f_exact": exact(pi.marginal(f)),
        "mu_f_mc": num(sp.f_mean, sp.f_se),
        "mu_f_abs_diff_over_se": exact(float(np.max(_z_scores(sp.f_mean, sp.f_se, pi.marginal(f))))),
        "D_exact": exact(ode.D),
        "D_mc": num(df.D, df.D_se),
        "D_abs_diff_over_se": exact(float(np.max(_z_scores(df.D, df.D_se, ode.D)))),
        "stationary_residual": exact(pi.residual),
        "n_states": G.size,
    }
    return ExperimentResult(summary=s)


def _torus_doubling(cfg, workers) -> ExperimentResult:
    L = cfg.lattice.L
    s = {"L": L, "L_doubled": 2 * L}
    shifts = {}
    engine, kernel = cfg.engine()
    grid = cfg.time_grid()
    curves = {}
    for side, tag in ((L, ""), (2 * L, "double/")):
        lat = cfg.lattice_with_side(side)
        c = estimate_env_decay(kernel, None, grid, cfg.replicas, "single-site", lattice=lat,
                               seed=cfg.seed + (1 if tag else 0), workers=workers)
        curves[side] = c
    z = _z_scores(curves[L].estimate, np.hypot(curves[L].se, curves[2 * L].se), curves[2 * L].estimate)
    shifts["env_decay_max_z"] = float(z.max())
    res = ExperimentResult({"env-decay-L": curves[L], "env-decay-2L": curves[2 * L]})
    if cfg.rates() is not None:
        a = _speed(cfg, workers, cfg.lattice_with_side(L)).summary
        b = _speed(cfg, workers, cfg.lattice_with_side(2 * L), tag="double/").summary
        for key in ("v_trajectory", "v_stationary", "mu_f"):
            va, vb = np.asarray(a[key]["value"]), np.asarray(b[key]["value"])
            se = np.hypot(a[key]["se"], b[key]["se"])
            shifts[f"{key}_z"] = float(np.max(_z_scores(va, se, vb)))
        if "v_exact" in a and "v_exact" in b:
            dv = np.abs(np.asarray(a["v_exact"]["value"]) - np.asarray(b["v_exact"]["value"]))
            se = np.hypot(a["v_trajectory"]["se"], b["v_trajectory"]["se"])
            shifts["v_exact_shift_over_mc_se"] = float(np.max(dv / se))
        s["speed_L"] = a
        s["speed_2L"] = b
    s["shift_z"] = {k: exact(v) for k, v in shifts.items()}
    verdict = all(v <= 3 for v in shifts.values())
    s["all_shifts_within_3se"] = verdict
    res.summary = s
    res.verdict = verdict
    return res


REGISTRY: dict[str, Experiment] = {
    e.name: e
    for e in [
        Experiment("env-decay", "decay of the site-0 discrepancy of a coupled environment pair",
                   "coupling decay of the environment; layered stack bound and t^-gamma order", _env_decay),
        Experiment("site-decay-sum", "site-summed discrepancy for a pair differing at the origin",
                   "summable single-site influence of the environment coupling", _site_decay_sum),
        Experiment("ep-decay", "environment-process semigroup difference from coupled walkers",
                   "transference of environment decay to the environment process", _ep_decay),
        Experiment("transference", "weighted transference integral and the smallest convergent K",
                   "transference integral, plain and with a submultiplicative weight", _transference),
        Experiment("speed", "trajectory speed against the stationary average of the local drift",
                   "law of large numbers: speed equals the stationary mean drift", _speed),
        Experiment("diffusion", "diffusion matrix over replicas with a batch-means cross-check",
                   "central limit theorem and nondegeneracy of the diffusion matrix", _diffusion),
        Experiment("decoupling", "probability that two coupled walkers never separate, and restarts",
                   "lower bound on the no-decoupling probability; restart scheme", _decoupling),
        Experiment("continuity", "sensitivity of the stationary measure to a rate perturbation",
                   "continuity of the stationary measure in the jump rates", _continuity),
        Experiment("oracle-crosscheck", "Monte Carlo speed, stationary mean and diffusion against exact values",
                   "speed and diffusion against exact values at enumeration scale", _oracle_crosscheck),
        Experiment("torus-doubling", "re-run decay and speed on a torus of twice the side",
                   "finite-torus audit", _torus_doubling),
    ]
}
assert tuple(REGISTRY) == EXPERIMENTS


def registry_list() -> list[dict]:
    return [{"name": e.name, "description": e.description, "claim": e.claim} for e in REGISTRY.values()]


def run_experiment(cfg: ExperimentConfig, workers: int | None = None) -> ExperimentResult:
    return REGISTRY[cfg.name].fn(cfg, workers)


def _trajectory_rows(cfg: ExperimentConfig, n: int = 4):
    engine, kernel = cfg.engine()
    alpha = cfg.rates()
    if alpha is None:
        raise ValueError("trajectory dumps need a [rates] section")
    horizon = float(cfg.time_grid()[-1])
    eta, xi = initial_pairs("extremal", cfg.lattice, engine.n_layers)[0]
    origin = np.zeros(alpha.d, dtype=np.int64)
    rows = []
    for r in range(min(n, cfg.replicas)):
        sys = build_coupled_system(eta, origin, xi, origin, alpha, kernel,
                                   (stream(cfg.seed, r, "dump/clock"), stream(cfg.seed, r, "dump/env")),
                                   horizon=horizon, strict_torus=cfg.get("lattice", "strict_torus"))
        tr1, tr2 = advance(sys, horizon)
        for i, t in enumerate(tr1.times):
            rows.append((r, t, tr1.positions[i], tr2.positions[i], tr1.decoupled[i]))
    return rows


def _generator(cfg: ExperimentConfig):
    engine, _ = cfg.engine()
    if not _tiny(cfg, limit=MAX_BITS):
        raise ValueError("generator export needs a torus within the enumeration budget")
    G = build_env_generator(engine, cfg.lattice)
    alpha = cfg.rates()
    return build_ep_generator(G, alpha) if alpha is not None else G


def run(cfg: ExperimentConfig, out_dir, *, dump_trajectories: bool = False,
        export_generator: bool = False, workers: int | None = None) -> tuple[dict, int]:
    """Run an experiment and write its artifacts; returns ``(manifest, exit_code)``.

    Exit code 0 on success, 2 if a verdict experiment violated its bound.
    Exceptions propagate after the staging directory is removed.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    stage = Path(tempfile.mkdtemp(prefix=".rwdre-", dir=out))
    try:
        result = run_experiment(cfg, workers)
        files = []
        for name, curve in result.curves.items():
            files.append(write_curve(curve, stage / f"{name}.curve.csv").name)
        summary = {"experiment": cfg.name, "seed": cfg.seed, "replicas": cfg.replicas,
                   "verdict_ok": result.verdict, **result.summary}
        files.append(write_json(summary, stage / f"{cfg.name}.summary.json").name)
        if dump_trajectories:
            files.append(write_trajectories(_trajectory_rows(cfg), cfg.lattice.d,
                                            stage / "trajectories.csv").name)
        if export_generator:
            files.append(export_matrix_market(_generator(cfg), stage / "generator.mtx").name)
        manifest = {
            "config": cfg.to_text(),
            "resolved": cfg.resolved(),
            "artifacts": sorted(files),
            "rng": RNG_ALGORITHM,
            "code_version": f"rwdre {__version__}",
            "wall_clock_seconds": time.perf_counter() - start,
            "exit_code": EXIT_VIOLATION if result.verdict is False else EXIT_OK,
        }
        write_json(manifest, stage / "manifest.json")
        for name in files + ["manifest.json"]:
            (stage / name).replace(out / name)
    finally:
        shutil.rmtree(stage, ignore_errors=True)
    return manifest, manifest["exit_code"]
