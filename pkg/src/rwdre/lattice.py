"""Torus geometry, configurations, single-site metrics and Lipschitz seminorms.

Every configuration is stored as a ``uint8`` array of shape
``(n_layers, n_sites)``; binary environments use a single layer. Sites are
flattened with stride ``L**j`` along axis ``j``.

Local functions are tabulated over the bit patterns of a finite *window*,
a tuple of ``(offset, layer)`` pairs read relative to the origin. Every
supremum that enters an analytic bound is computed by exhaustion over the
window patterns, never by sampling.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "TorusLattice",
    "SiteMetric",
    "Configuration",
    "LocalFunction",
    "RateFunction",
    "RateNorms",
    "WindowBudgetError",
    "DEFAULT_WINDOW_BUDGET",
    "shift",
    "site_distance",
    "triple_norm",
    "lipschitz_constants",
    "rate_norms",
    "rate_distance",
]

#: Largest number of window patterns any exhaustive computation will visit.
DEFAULT_WINDOW_BUDGET = 2**12


class WindowBudgetError(ValueError):
    """Raised when a window has more patterns than the exhaustion budget."""


def _as_offset(x, d: int) -> tuple[int, ...]:
    if np.isscalar(x):
        x = (int(x),)
    x = tuple(int(v) for v in x)
    if len(x) != d:
        raise ValueError(f"offset {x} does not have dimension {d}")
    return x


@dataclass(frozen=True)
class TorusLattice:
    """The periodic lattice ``(Z / L Z)^d``."""

    d: int
    L: int

    def __post_init__(self):
        if self.d < 1 or self.L < 1:
            raise ValueError(f"need d >= 1 and L >= 1, got d={self.d}, L={self.L}")

    @property
    def n_sites(self) -> int:
        return self.L**self.d

    @property
    def strides(self) -> np.ndarray:
        return self.L ** np.arange(self.d, dtype=np.int64)

    def wrap(self, x) -> np.ndarray:
        return np.mod(np.asarray(x, dtype=np.int64), self.L)

    def index(self, x) -> np.ndarray | int:
        """Flat index of site ``x`` (any integer vector; wrapped first)."""
        x = self.wrap(x)
        if x.ndim == 0:
            x = x[None]
        idx = x @ self.strides
        return int(idx) if np.ndim(idx) == 0 else idx

    def coords(self, index) -> np.ndarray:
        index = np.asarray(index, dtype=np.int64)
        return (index[..., None] // self.strides) % self.L

    def add(self, x, y) -> np.ndarray:
        return self.wrap(np.asarray(x, dtype=np.int64) + np.asarray(y, dtype=np.int64))

    def neg(self, x) -> np.ndarray:
        return self.wrap(-np.asarray(x, dtype=np.int64))

    def translation(self, x) -> np.ndarray:
        """Permutation ``p`` of flat sites with ``p[s] = index(s + x)``."""
        c = self.coords(np.arange(self.n_sites))
        return self.index(c + np.asarray(_as_offset(x, self.d)))

    def neighbours(self) -> np.ndarray:
        """Flat indices of the ``2d`` nearest neighbours of every site."""
        c = self.coords(np.arange(self.n_sites))
        cols = []
        for j in range(self.d):
            e = np.zeros(self.d, dtype=np.int64)
            e[j] = 1
            cols.append(self.index(c + e))
            cols.append(self.index(c - e))
        return np.stack(cols, axis=1).astype(np.int64)


@dataclass(frozen=True)
class SiteMetric:
    """Distance on single-site states.

    ``kind='discrete'`` is the 0/1 metric on binary sites. ``kind='weighted'``
    is the stack distance ``sum_n w_n |a_n - b_n|`` over a truncated stack;
    ``tail_mass`` is the weight of the discarded layers, so that
    ``sum(weights) + tail_mass == 1``.
    """

    kind: str = "discrete"
    weights: tuple[float, ...] = (1.0,)
    tail_mass: float = 0.0

    def __post_init__(self):
        if self.kind == "discrete":
            object.__setattr__(self, "weights", (1.0,))
            object.__setattr__(self, "tail_mass", 0.0)
            return
        if self.kind != "weighted":
            raise ValueError(f"unknown metric kind {self.kind!r}")
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or len(w) == 0 or np.any(w <= 0):
            raise ValueError("weights must be a non-empty positive sequence")
        if len(w) > 1 and np.any(np.diff(w) >= 0):
            raise ValueError("weights must be strictly decreasing")
        if self.tail_mass < 0 or abs(w.sum() + self.tail_mass - 1.0) > 1e-12:
            raise ValueError(
                f"weights sum to {w.sum()!r} with tail mass {self.tail_mass!r}; need total 1"
            )

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def weight_array(self) -> np.ndarray:
        return np.asarray(self.weights, dtype=float)


def site_distance(a, b, metric: SiteMetric = SiteMetric()) -> float:
    """Distance between two single-site states.

    Binary states are integers (or length-1 sequences); stack states are
    sequences of bits whose length matches the metric's layer count.
    """
    a = np.atleast_1d(np.asarray(a))
    b = np.atleast_1d(np.asarray(b))
    if a.shape != b.shape:
        raise TypeError(f"site states of different kinds: {a.shape} vs {b.shape}")
    if a.shape[0] != metric.n_layers:
        raise TypeError(
            f"site state has {a.shape[0]} layers, metric expects {metric.n_layers}"
        )
    if np.any((a != 0) & (a != 1)) or np.any((b != 0) & (b != 1)):
        raise ValueError("site states must be bits")
    return float(metric.weight_array @ np.abs(a.astype(int) - b.astype(int)))


@dataclass
class Configuration:
    """A configuration on a torus: ``states[layer, site]`` in {0, 1}."""

    lattice: TorusLattice
    states: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.states, dtype=np.uint8)
        if s.ndim == 1:
            s = s[None, :]
        if s.ndim != 2 or s.shape[1] != self.lattice.n_sites:
            raise ValueError(
                f"states must have shape (n_layers, {self.lattice.n_sites}), got {s.shape}"
            )
        if np.any(s > 1):
            raise ValueError("site states must be bits")
        self.states = s

    @property
    def n_layers(self) -> int:
        return self.states.shape[0]

    @classmethod
    def constant(cls, lattice: TorusLattice, value: int = 0, n_layers: int = 1):
        return cls(lattice, np.full((n_layers, lattice.n_sites), value, dtype=np.uint8))

    @classmethod
    def random(cls, lattice: TorusLattice, rng: np.random.Generator, n_layers: int = 1):
        return cls(lattice, rng.integers(0, 2, size=(n_layers, lattice.n_sites), dtype=np.uint8))

    def copy(self) -> "Configuration":
        return Configuration(self.lattice, self.states.copy())

    def at(self, x) -> np.ndarray:
        """Stack (or single bit, as a length-1 array) at site ``x``."""
        return self.states[:, self.lattice.index(x)]

    def with_site(self, x, value) -> "Configuration":
        out = self.copy()
        out.states[:, self.lattice.index(x)] = np.atleast_1d(value)
        return out

    def __eq__(self, other):
        return (
            isinstance(other, Configuration)
            and self.lattice == other.lattice
            and np.array_equal(self.states, other.states)
        )


def shift(config: Configuration, x) -> Configuration:
    """Return ``theta_x config``, i.e. ``result(y) = config(y - x)``."""
    lat = config.lattice
    x = _as_offset(x, lat.d)
    perm = lat.translation(tuple(-v for v in x))  # perm[y] = index(y - x)
    return Configuration(lat, config.states[:, perm])


# -- local functions ---------------------------------------------------------


def _pattern_bits(n_bits: int) -> np.ndarray:
    """``(2**n_bits, n_bits)`` array; row ``p`` holds the bits of ``p``."""
    p = np.arange(2**n_bits, dtype=np.int64)
    return ((p[:, None] >> np.arange(n_bits)) & 1).astype(np.uint8)


@dataclass(frozen=True)
class LocalFunction:
    """A real function of the configuration inside a finite window.

    Parameters
    ----------
    window : tuple of (offset, layer)
        Window bits, read relative to the origin. Bit ``k`` of a pattern is
        the state of window bit ``k``.
    table : array of shape ``(2**len(window),)``
        Function value for every window pattern.
    declared : mapping offset -> float, optional
        Declared Lipschitz constants; validated against exhaustion.
    """

    window: tuple[tuple[tuple[int, ...], int], ...]
    table: np.ndarray = field(compare=False)
    declared: Mapping[tuple[int, ...], float] | None = field(default=None, compare=False)
    budget: int = field(default=DEFAULT_WINDOW_BUDGET, compare=False)

    def __post_init__(self):
        window = tuple((tuple(int(v) for v in off), int(layer)) for off, layer in self.window)
        if len(set(window)) != len(window):
            raise ValueError("window bits must be distinct")
        object.__setattr__(self, "window", window)
        if 2 ** len(window) > self.budget:
            raise WindowBudgetError(
                f"window of {len(window)} bits has {2 ** len(window)} patterns, "
                f"exceeding the exhaustion budget {self.budget}"
            )
        table = np.asarray(self.table, dtype=float).copy()
        if table.shape != (2 ** len(window),):
            raise ValueError(f"table must have {2 ** len(window)} entries, got {table.shape}")
        table.setflags(write=False)
        object.__setattr__(self, "table", table)
        if len({len(off) for off, _ in window}) > 1:
            raise ValueError("window offsets have mixed dimensions")
        if self.declared is not None:
            exact = lipschitz_constants(self, SiteMetric(), strict_layers=False)
            for x, value in self.declared.items():
                if exact.get(tuple(x), 0.0) > value + 1e-12:
                    raise ValueError(
                        f"declared Lipschitz constant {value} at {x} is below the exact "
                        f"value {exact[tuple(x)]}"
                    )
            for x, value in exact.items():
                if value > 0 and tuple(x) not in self.declared:
                    raise ValueError(f"no Lipschitz constant declared for window site {x}")

    # constructors

    @classmethod
    def constant(cls, value: float, d: int = 1) -> "LocalFunction":
        return cls((), np.array([float(value)]))

    @classmethod
    def site(cls, offset=0, layer: int = 0, d: int = 1) -> "LocalFunction":
        """``f(eta) = eta_layer(offset)``."""
        return cls(((_as_offset(offset, d), layer),), np.array([0.0, 1.0]))

    @classmethod
    def from_callable(
        cls,
        window: Sequence,
        fn: Callable[[np.ndarray], float],
        d: int = 1,
        budget: int = DEFAULT_WINDOW_BUDGET,
    ) -> "LocalFunction":
        """Tabulate ``fn(bits)`` over every window pattern.

        Window entries are offsets (layer 0) or ``(offset, layer)`` pairs.
        """
        bits = _normalise_window(window, d)
        if 2 ** len(bits) > budget:
            raise WindowBudgetError(
                f"window of {len(bits)} bits exceeds the exhaustion budget {budget}"
            )
        patterns = _pattern_bits(len(bits))
        table = np.array([float(fn(row)) for row in patterns])
        return cls(bits, table, budget=budget)

    # evaluation

    @property
    def d(self) -> int | None:
        return len(self.window[0][0]) if self.window else None

    @property
    def sites(self) -> list[tuple[int, ...]]:
        seen = []
        for off, _ in self.window:
            if off not in seen:
                seen.append(off)
        return seen

    def pattern(self, config: Configuration, at=None) -> int:
        lat = config.lattice
        base = np.zeros(lat.d, dtype=np.int64) if at is None else np.asarray(at)
        p = 0
        for k, (off, layer) in enumerate(self.window):
            p |= int(config.states[layer, lat.index(base + np.asarray(off))]) << k
        return p

    def __call__(self, config: Configuration, at=None) -> float:
        """Evaluate on ``config`` (or on ``theta_{-at} config`` if ``at`` is given)."""
        return float(self.table[self.pattern(config, at)])

    def shifted(self, x) -> "LocalFunction":
        """The function ``eta -> f(theta_x eta)``."""
        x = np.asarray(x, dtype=np.int64)
        window = tuple((tuple(int(v) for v in np.asarray(off) - x), layer) for off, layer in self.window)
        return LocalFunction(window, self.table, budget=self.budget)

    def restricted_to(self, window) -> "LocalFunction":
        """Re-tabulate over a larger window containing this one."""
        window = tuple(window)
        pos = [window.index(b) for b in self.window]
        patterns = _pattern_bits(len(window))
        idx = np.zeros(len(patterns), dtype=np.int64)
        for k, j in enumerate(pos):
            idx |= patterns[:, j].astype(np.int64) << k
        return LocalFunction(window, self.table[idx], budget=max(self.budget, 2 ** len(window)))

    def oscillation(self) -> float:
        return float(self.table.max() - self.table.min())


def _normalise_window(window, d: int):
    bits = []
    for entry in window:
        if isinstance(entry, tuple) and len(entry) == 2 and not np.isscalar(entry[0]):
            off, layer = entry
        else:
            off, layer = entry, 0
        bits.append((_as_offset(off, d), int(layer)))
    return tuple(bits)


def _union_window(funcs: Iterable[LocalFunction]):
    bits = []
    for f in funcs:
        for b in f.window:
            if b not in bits:
                bits.append(b)
    return tuple(bits)


def lipschitz_constants(
    f: LocalFunction, metric: SiteMetric = SiteMetric(), strict_layers: bool = True
) -> dict[tuple[int, ...], float]:
    """Exact single-site Lipschitz constants ``delta_f(x)`` by exhaustion.

    For stacks the constant is the largest single-layer flip quotient
    ``|f(a) - f(b)| / w_n``; by telescoping this equals the supremum over all
    pairs that differ at ``x`` only.
    """
    if 2 ** len(f.window) > f.budget:
        raise WindowBudgetError(f"window exceeds the exhaustion budget {f.budget}")
    weights = metric.weight_array
    deltas: dict[tuple[int, ...], float] = {}
    p = np.arange(len(f.table), dtype=np.int64)
    for k, (off, layer) in enumerate(f.window):
        if layer >= len(weights):
            if strict_layers:
                raise ValueError(f"window reads layer {layer}; metric has {len(weights)} layers")
            w = 1.0
        else:
            w = weights[layer] if metric.kind == "weighted" else 1.0
        q = np.abs(f.table - f.table[p ^ (1 << k)]).max() / w
        deltas[off] = max(deltas.get(off, 0.0), float(q))
    return deltas


def triple_norm(f: LocalFunction, metric: SiteMetric = SiteMetric()) -> float:
    """Sum over sites of the single-site Lipschitz constants."""
    return float(sum(lipschitz_constants(f, metric).values()))


# -- rate functions ----------------------------------------------------------


@dataclass(frozen=True)
class RateNorms:
    lam: dict[tuple[int, ...], float]
    norm1: float
    norm2: float
    second_moment: float
    triple: float
    triple1: float
    site_weights: dict[tuple[int, ...], float]
    gamma_plus: np.ndarray
    gamma_minus: np.ndarray

    @property
    def spread_rate(self) -> float:
        """``||gamma_plus - gamma_minus||_inf``, the growth rate of the walker range."""
        return float(np.max(self.gamma_plus - self.gamma_minus))

    @property
    def total_rate(self) -> float:
        return float(sum(self.lam.values()))


class RateFunction:
    """Jump rates ``alpha(eta, z)`` for a finite jump set.

    Parameters
    ----------
    rates : mapping jump -> LocalFunction
        Jumps are integer vectors (ints are accepted for ``d = 1``).
    metric : SiteMetric
        Single-site metric used for the Lipschitz seminorms.
    """

    def __init__(self, rates: Mapping, metric: SiteMetric = SiteMetric(), d: int | None = None):
        if not rates:
            raise ValueError("a rate function needs at least one jump")
        jumps = {}
        for z, f in rates.items():
            if not isinstance(f, LocalFunction):
                f = LocalFunction.constant(float(f))
            zt = (int(z),) if np.isscalar(z) else tuple(int(v) for v in z)
            if all(v == 0 for v in zt):
                raise ValueError("the zero jump is not allowed")
            jumps[zt] = f
        dims = {len(z) for z in jumps}
        if len(dims) != 1:
            raise ValueError("jumps of mixed dimension")
        self.d = dims.pop() if d is None else d
        for z, f in jumps.items():
            if f.d is not None and f.d != self.d:
                raise ValueError(f"rate for jump {z} has window dimension {f.d}")
            if np.any(f.table < 0):
                raise ValueError(f"negative rate for jump {z}")
        self.metric = metric
        self.rates = dict(sorted(jumps.items()))
        self.window = _union_window(self.rates.values())
        if 2 ** len(self.window) > DEFAULT_WINDOW_BUDGET:
            raise WindowBudgetError(
                f"joint rate window of {len(self.window)} bits exceeds the exhaustion budget"
            )
        self._tables = np.stack([f.restricted_to(self.window).table for f in self.rates.values()])

    @classmethod
    def constant(cls, rates: Mapping, d: int | None = None) -> "RateFunction":
        return cls({z: LocalFunction.constant(c) for z, c in rates.items()}, d=d)

    @property
    def jumps(self) -> np.ndarray:
        return np.array(list(self.rates), dtype=np.int64).reshape(len(self.rates), self.d)

    @property
    def tables(self) -> np.ndarray:
        """``(n_jumps, 2**len(window))`` rate table over the joint window."""
        return self._tables

    @property
    def environment_independent(self) -> bool:
        return bool(np.all(self._tables == self._tables[:, :1]))

    def __call__(self, config: Configuration, z, at=None) -> float:
        zt = (int(z),) if np.isscalar(z) else tuple(int(v) for v in z)
        return self.rates[zt](config, at)

    def drift_table(self) -> np.ndarray:
        """``(d, n_patterns)`` table of ``sum_z z alpha(eta, z)``."""
        return self.jumps.T.astype(float) @ self._tables

    def norms(self) -> RateNorms:
        return rate_norms(self)

    def __repr__(self):
        return f"RateFunction(jumps={list(self.rates)}, window={self.window})"


def rate_norms(alpha: RateFunction) -> RateNorms:
    """All norms of a rate function, with suprema taken by exhaustion."""
    metric = alpha.metric
    lam = {z: float(f.table.max()) for z, f in alpha.rates.items()}
    znorm = {z: float(np.linalg.norm(z)) for z in alpha.rates}
    triple_z = {z: triple_norm(f, metric) for z, f in alpha.rates.items()}
    second = sum(znorm[z] ** 2 * lam[z] for z in lam)
    zs = alpha.jumps
    lam_vec = np.array([lam[z] for z in alpha.rates])
    gamma_plus = (np.maximum(zs, 0) * lam_vec[:, None]).sum(axis=0).astype(float)
    gamma_minus = (np.minimum(zs, 0) * lam_vec[:, None]).sum(axis=0).astype(float)
    return RateNorms(
        lam=lam,
        norm1=sum(znorm[z] * lam[z] for z in lam),
        norm2=math.sqrt(second),
        second_moment=second,
        triple=sum(triple_z.values()),
        triple1=sum(znorm[z] * triple_z[z] for z in lam),
        site_weights=_site_weights(alpha),
        gamma_plus=gamma_plus,
        gamma_minus=gamma_minus,
    )


def _site_weights(alpha: RateFunction) -> dict[tuple[int, ...], float]:
    """``w(x) = sup over pairs differing only at x of sum_z |alpha(eta,z) - alpha(xi,z)|``."""
    tables = alpha.tables
    p = np.arange(tables.shape[1], dtype=np.int64)
    by_site: dict[tuple[int, ...], list[int]] = {}
    for k, (off, _) in enumerate(alpha.window):
        by_site.setdefault(off, []).append(k)
    weights = {}
    for off, ks in by_site.items():
        best = 0.0
        for r in range(1, len(ks) + 1):
            for subset in itertools.combinations(ks, r):
                mask = sum(1 << k for k in subset)
                best = max(best, float(np.abs(tables - tables[:, p ^ mask]).sum(axis=0).max()))
        weights[off] = best
    return weights


def rate_distance(alpha: RateFunction, other: RateFunction) -> float:
    """``sum_z sup_eta |alpha(eta, z) - other(eta, z)|`` by exhaustion."""
    if alpha.d != other.d:
        raise ValueError("rate functions of different dimension")
    window = _union_window([*alpha.rates.values(), *other.rates.values()])
    if 2 ** len(window) > DEFAULT_WINDOW_BUDGET:
        raise WindowBudgetError("joint window exceeds the exhaustion budget")
    zero = LocalFunction.constant(0.0)
    total = 0.0
    for z in sorted(set(alpha.rates) | set(other.rates)):
        a = alpha.rates.get(z, zero).restricted_to(window).table
        b = other.rates.get(z, zero).restricted_to(window).table
        total += float(np.abs(a - b).max())
    return total
