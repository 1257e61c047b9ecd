"""Exact computations on tiny tori.

The configuration space of a torus with ``n_bits = n_layers * L**d <= 20``
bits is enumerated; bit ``layer * n_sites + site`` of a state index holds
``states[layer, site]``. On that space the module assembles the environment
generator and the environment-process generator, solves for the stationary
law, integrates moment equations for the walker displacement, and applies
the matrix exponential to local functions.

States of the environment process are configurations seen from the
walker, so a walker jump by ``z`` maps ``eta`` to ``theta_{-z} eta``.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.integrate import solve_ivp
from scipy.io import mmwrite
from scipy.sparse import csgraph
from scipy.sparse.linalg import expm_multiply, spsolve

from .environments import EnvironmentEngine
from .lattice import Configuration, LocalFunction, RateFunction, TorusLattice

__all__ = [
    "MAX_BITS",
    "ReducibleGeneratorError",
    "ToleranceError",
    "StateIndex",
    "GeneratorMatrix",
    "StationaryMeasure",
    "DiffusionResult",
    "build_env_generator",
    "build_ep_generator",
    "walker_generators",
    "stationary_distribution",
    "exact_speed",
    "moment_ode_diffusion",
    "exact_ep_semigroup",
    "function_vector",
    "export_matrix_market",
]

MAX_BITS = 20
MAX_BITS_DYNAMIC = 14
DENSE_BELOW = 2**10


class ReducibleGeneratorError(ValueError):
    """The generator has more than one communicating class."""


class ToleranceError(RuntimeError):
    """A numerical routine could not certify its tolerance."""


@dataclass(frozen=True)
class StateIndex:
    """Bijection between configurations on a tiny torus and ``0 .. 2**n_bits - 1``."""

    lattice: TorusLattice
    n_layers: int = 1

    def __post_init__(self):
        if self.n_bits > MAX_BITS:
            raise ValueError(
                f"{self.n_bits} bits exceed the enumeration budget of {MAX_BITS} bits"
            )

    @property
    def n_bits(self) -> int:
        return self.n_layers * self.lattice.n_sites

    @property
    def size(self) -> int:
        return 2**self.n_bits

    def encode(self, config: Configuration) -> int:
        if config.lattice != self.lattice or config.n_layers != self.n_layers:
            raise ValueError("configuration does not belong to this index")
        bits = config.states.reshape(-1).astype(np.int64)
        return int((bits << np.arange(self.n_bits)).sum())

    def decode(self, i: int) -> Configuration:
        if not 0 <= i < self.size:
            raise IndexError(f"state index {i} out of range")
        bits = (int(i) >> np.arange(self.n_bits)) & 1
        return Configuration(self.lattice, bits.reshape(self.n_layers, -1).astype(np.uint8))

    def bits(self) -> np.ndarray:
        """``(size, n_layers, n_sites)`` array of every configuration."""
        p = np.arange(self.size, dtype=np.int64)
        b = ((p[:, None] >> np.arange(self.n_bits)) & 1).astype(np.uint8)
        return b.reshape(self.size, self.n_layers, self.lattice.n_sites)

    def _pack(self, bits: np.ndarray) -> np.ndarray:
        flat = bits.reshape(bits.shape[0], -1).astype(np.int64)
        return (flat << np.arange(self.n_bits)).sum(axis=1)

    def shift_permutation(self, x) -> np.ndarray:
        """``perm[i] = encode(shift(decode(i), x))``."""
        lat = self.lattice
        neg = tuple(-int(v) for v in np.atleast_1d(x))
        src = lat.translation(neg)  # result(y) = config(y - x)
        return self._pack(self.bits()[:, :, src])

    def patterns(self, fn: LocalFunction) -> np.ndarray:
        """Window pattern of ``fn`` read at the origin, for every state."""
        lat = self.lattice
        bits = self.bits()
        pat = np.zeros(self.size, dtype=np.int64)
        for k, (off, layer) in enumerate(fn.window):
            pat |= bits[:, layer, lat.index(off)].astype(np.int64) << k
        return pat


@dataclass
class GeneratorMatrix:
    """Sparse CTMC generator in CSR layout; rows sum to zero."""

    matrix: sparse.csr_matrix
    index: StateIndex

    def __post_init__(self):
        A = sparse.csr_matrix(self.matrix, dtype=float)
        A.sum_duplicates()
        self.matrix = A
        off = A - sparse.diags(A.diagonal())
        if off.nnz and off.data.min() < 0:
            raise ValueError("negative off-diagonal rate")
        rows = np.asarray(A.sum(axis=1)).ravel()
        scale = max(1.0, float(np.abs(A.diagonal()).max(initial=0.0)))
        if np.abs(rows).max(initial=0.0) > 1e-12 * scale:
            raise ValueError(f"generator rows do not sum to zero (max {np.abs(rows).max():.3g})")

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()


def _assemble(rows, cols, rates, n) -> sparse.csr_matrix:
    rows = np.concatenate(rows) if rows else np.zeros(0, dtype=np.int64)
    cols = np.concatenate(cols) if cols else np.zeros(0, dtype=np.int64)
    rates = np.concatenate(rates) if rates else np.zeros(0)
    keep = (rates > 0) & (rows != cols)
    off = sparse.coo_matrix((rates[keep], (rows[keep], cols[keep])), shape=(n, n)).tocsr()
    off.sum_duplicates()
    diag = -np.asarray(off.sum(axis=1)).ravel()
    return (off + sparse.diags(diag)).tocsr()


def build_env_generator(engine: EnvironmentEngine, lattice: TorusLattice) -> GeneratorMatrix:
    """Generator of the environment alone on an enumerated torus.

    Product engines flip each bit of layer ``n`` at rate ``rate_n / 2``;
    Glauber flips site ``x`` at rate ``lam`` times the heat-bath
    probability of the opposite spin.
    """
    index = StateIndex(lattice, engine.n_layers)
    n = index.size
    states = np.arange(n, dtype=np.int64)
    rows, cols, rates = [], [], []
    if engine.kind == "product":
        for layer, r in enumerate(engine.layer_rates):
            for s in range(lattice.n_sites):
                k = layer * lattice.n_sites + s
                rows.append(states)
                cols.append(states ^ (1 << k))
                rates.append(np.full(n, r / 2.0))
    elif engine.kind == "glauber":
        bits = index.bits()[:, 0, :].astype(np.int64)
        spins = 2 * bits - 1
        nbr = lattice.neighbours()
        for s in range(lattice.n_sites):
            h = spins[:, nbr[s]].sum(axis=1)
            p_up = 1.0 / (1.0 + np.exp(-2.0 * engine.beta * h))
            p_flip = np.where(bits[:, s] == 1, 1.0 - p_up, p_up)
            rows.append(states)
            cols.append(states ^ (1 << s))
            rates.append(engine.rate * p_flip)
    else:
        raise ValueError(f"no exact generator for engine kind {engine.kind!r}")
    return GeneratorMatrix(_assemble(rows, cols, rates, n), index)


def walker_generators(index: StateIndex, alpha: RateFunction) -> dict[tuple[int, ...], sparse.csr_matrix]:
    """Per-jump walker part ``A_z``: rate ``alpha(eta, z)`` from ``eta`` to ``theta_{-z} eta``.

    The diagonal is not included.
    """
    lat = index.lattice
    if alpha.d != lat.d:
        raise ValueError("rate function and lattice differ in dimension")
    for off, layer in alpha.window:
        if layer >= index.n_layers:
            raise ValueError(f"rate window reads layer {layer}; states have {index.n_layers}")
    n = index.size
    states = np.arange(n, dtype=np.int64)
    out = {}
    for z, f in alpha.rates.items():
        rate = f.table[index.patterns(f)]
        target = index.shift_permutation(tuple(-v for v in z))
        out[z] = sparse.coo_matrix((rate, (states, target)), shape=(n, n)).tocsr()
    return out


def build_ep_generator(env: GeneratorMatrix, alpha: RateFunction) -> GeneratorMatrix:
    """Environment generator plus the walker term ``sum_z alpha(eta,z)[f(theta_{-z} eta) - f(eta)]``."""
    index = env.index
    A = env.matrix.copy()
    for Az in walker_generators(index, alpha).values():
        out_rate = np.asarray(Az.sum(axis=1)).ravel()
        A = A + Az - sparse.diags(out_rate)
    return GeneratorMatrix(A, index)


@dataclass(frozen=True)
class StationaryMeasure:
    pi: np.ndarray
    residual: float
    index: StateIndex

    def expect(self, values) -> float:
        return float(self.pi @ np.asarray(values, dtype=float))

    def marginal(self, fn: LocalFunction) -> float:
        """``pi(fn)`` for a local function read at the origin."""
        return self.expect(fn.table[self.index.patterns(fn)])


def _check_irreducible(A: sparse.csr_matrix) -> None:
    n = A.shape[0]
    graph = (A - sparse.diags(A.diagonal())).tocsr()
    graph.eliminate_zeros()
    for g, word in ((graph, "reachable from"), (graph.T.tocsr(), "able to reach")):
        order = csgraph.breadth_first_order(g, 0, directed=True, return_predecessors=False)
        if len(order) < n:
            seen = np.zeros(n, dtype=bool)
            seen[order] = True
            j = int(np.flatnonzero(~seen)[0])
            raise ReducibleGeneratorError(f"generator is reducible: state {j} is not {word} state 0")


def stationary_distribution(G: GeneratorMatrix) -> StationaryMeasure:
    """Solve ``pi G = 0``, ``sum(pi) = 1`` for an irreducible generator."""
    A = G.matrix
    n = A.shape[0]
    _check_irreducible(A)
    if n == 1:
        return StationaryMeasure(np.ones(1), 0.0, G.index)
    # replace the last balance equation by the normalisation
    M = A.T.tolil()
    M[n - 1, :] = np.ones(n)
    rhs = np.zeros(n)
    rhs[-1] = 1.0
    if n < DENSE_BELOW:
        pi = np.linalg.solve(M.toarray(), rhs)
    else:
        pi = spsolve(M.tocsc(), rhs)
    pi = np.clip(pi, 0.0, None)
    pi /= pi.sum()
    residual = float(np.abs(A.T @ pi).max())
    if residual > 1e-8:
        raise ToleranceError(f"stationary residual {residual:.3g} exceeds 1e-8")
    return StationaryMeasure(pi, residual, G.index)


def exact_speed(pi: StationaryMeasure, alpha: RateFunction) -> np.ndarray:
    """``v = sum_eta pi(eta) sum_z z alpha(eta, z)``."""
    drift = alpha.drift_table()
    pat = _joint_patterns(pi.index, alpha)
    return drift[:, pat] @ pi.pi


def _joint_patterns(index: StateIndex, alpha: RateFunction) -> np.ndarray:
    joint = LocalFunction(alpha.window, np.zeros(2 ** len(alpha.window)))
    return index.patterns(joint)


@dataclass(frozen=True)
class DiffusionResult:
    """Diffusion matrix from the moment equations.

    ``slope_halves`` are the slopes fitted separately on the two halves of
    the fitting window; ``residual`` is the largest absolute residual of
    the linear fit.
    """

    D: np.ndarray
    v: np.ndarray
    residual: float
    slope_halves: tuple[np.ndarray, np.ndarray]
    t: np.ndarray
    variance: np.ndarray


def moment_ode_diffusion(G: GeneratorMatrix, alpha: RateFunction, T_grid,
                         p0: np.ndarray | None = None, rtol: float = 1e-9,
                         max_drift: float = 0.01) -> DiffusionResult:
    """Diffusion matrix from the closed moment equations of the displacement.

    Integrates ``p`` (law of the environment process), ``m = E[X; state]``
    and ``s = E[X X^T; state]`` jointly, starting from ``p0`` (default: the
    stationary law) with ``X_0 = 0``. ``D`` is the slope of the covariance
    ``sum s - (sum m)(sum m)^T`` fitted over the last half of ``T_grid``.
    """
    index = G.index
    if index.n_bits > MAX_BITS_DYNAMIC:
        raise ValueError(f"moment equations limited to {MAX_BITS_DYNAMIC} bits")
    T_grid = np.asarray(T_grid, dtype=float)
    if T_grid.ndim != 1 or len(T_grid) < 8 or np.any(np.diff(T_grid) <= 0):
        raise ValueError("T_grid must be increasing with at least 8 points")
    n, d = index.size, alpha.d
    GT = G.matrix.T.tocsr()
    walkers = walker_generators(index, alpha)
    jumps = [(np.asarray(z, dtype=float), Az.T.tocsr()) for z, Az in walkers.items()]
    if p0 is None:
        p0 = stationary_distribution(G).pi
    p0 = np.asarray(p0, dtype=float)

    def rhs(_t, y):
        p = y[:n]
        m = y[n:n + n * d].reshape(n, d)
        s = y[n + n * d:].reshape(n, d, d)
        dp = GT @ p
        dm = GT @ m
        ds = (GT @ s.reshape(n, d * d)).reshape(n, d, d)
        for z, AzT in jumps:
            dm += np.outer(AzT @ p, z)
            zm = AzT @ m  # (n, d)
            ds += (zm[:, None, :] * z[None, :, None] + zm[:, :, None] * z[None, None, :])
            ds += (AzT @ p)[:, None, None] * np.outer(z, z)[None]
        return np.concatenate([dp, dm.ravel(), ds.ravel()])

    y0 = np.concatenate([p0, np.zeros(n * d), np.zeros(n * d * d)])
    t_eval = T_grid if T_grid[0] >= 0 else None
    sol = solve_ivp(rhs, (0.0, float(T_grid[-1])), y0, method="RK45", t_eval=t_eval,
                    rtol=rtol, atol=1e-12)
    if not sol.success:
        raise ToleranceError(f"moment ODE integration failed: {sol.message}")
    Y = sol.y.T
    mean = Y[:, n:n + n * d].reshape(-1, n, d).sum(axis=1)
    second = Y[:, n + n * d:].reshape(-1, n, d, d).sum(axis=1)
    cov = second - mean[:, :, None] * mean[:, None, :]
    t = sol.t
    half = len(t) // 2
    tt, cc = t[half:], cov[half:].reshape(len(t) - half, -1)

    def slope(a, b):
        A = np.vstack([a, np.ones_like(a)]).T
        coef, *_ = np.linalg.lstsq(A, b, rcond=None)
        return coef, b - A @ coef

    coef, resid = slope(tt, cc)
    D = coef[0].reshape(d, d)
    q = len(tt) // 2
    s1 = slope(tt[:q], cc[:q])[0][0].reshape(d, d)
    s2 = slope(tt[q:], cc[q:])[0][0].reshape(d, d)
    scale = max(float(np.abs(D).max()), 1e-300)
    drift = float(np.abs(s1 - s2).max()) / scale
    if np.abs(D).max() > 0 and drift > max_drift:
        raise ToleranceError(
            f"diffusion slope not converged: halves differ by {drift:.2%} (> {max_drift:.0%}); "
            "extend T_grid"
        )
    v = (mean[-1] - mean[half]) / (t[-1] - t[half])
    return DiffusionResult(0.5 * (D + D.T), v, float(np.abs(resid).max(initial=0.0)),
                           (s1, s2), t, cov)


def function_vector(index: StateIndex, f: LocalFunction) -> np.ndarray:
    """Values of a local function (read at the origin) on every state."""
    return f.table[index.patterns(f)]


def _semigroup_rows(A, fv, ts, rtol, out) -> None:
    for k, tk in enumerate(ts):
        if tk == 0:
            out[k] = fv
            continue
        full = expm_multiply(A * tk, fv)
        half = expm_multiply(A * (tk / 2), expm_multiply(A * (tk / 2), fv))
        scale = max(1.0, float(np.abs(fv).max()))
        err = float(np.abs(full - half).max()) / scale
        if err > rtol:
            raise ToleranceError(f"matrix exponential action not certified at t={tk}: {err:.3g}")
        out[k] = full


@contextmanager
def _pinned_global_rng(seed: int = 0):
    """Fix numpy's legacy global state for the duration of the block.

    ``expm_multiply`` estimates matrix norms with random probe vectors drawn
    from the legacy global generator; pinning it makes exact curves
    reproducible to the last bit. The caller's state is restored.
    """
    saved = np.random.get_state()
    np.random.seed(seed)
    try:
        yield
    finally:
        np.random.set_state(saved)


def exact_ep_semigroup(G: GeneratorMatrix, f, eta, t, rtol: float = 1e-8):
    """``(exp(t L) f)(eta)`` by the action of the matrix exponential.

    ``f`` is a :class:`LocalFunction` or a vector over states; ``eta`` a
    configuration, a state index, or ``None`` to return the whole vector.
    ``t`` may be a scalar or an increasing array of times. The result is
    cross-checked against two half steps and refused if they disagree by
    more than ``rtol``.
    """
    index = G.index
    if index.n_bits > MAX_BITS_DYNAMIC:
        raise ValueError(f"semigroup evaluation limited to {MAX_BITS_DYNAMIC} bits")
    fv = function_vector(index, f) if isinstance(f, LocalFunction) else np.asarray(f, dtype=float)
    A = G.matrix
    ts = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(ts < 0):
        raise ValueError("t must be non-negative")
    out = np.empty((len(ts), len(fv)))
    with _pinned_global_rng():
        _semigroup_rows(A, fv, ts, rtol, out)
    if eta is not None:
        i = index.encode(eta) if isinstance(eta, Configuration) else int(eta)
        out = out[:, i]
        return float(out[0]) if np.ndim(t) == 0 else out
    return out[0] if np.ndim(t) == 0 else out


def export_matrix_market(G: GeneratorMatrix, path) -> Path:
    path = Path(path)
    mmwrite(str(path), G.matrix, comment="CTMC generator; rows sum to zero", precision=17)
    return path
