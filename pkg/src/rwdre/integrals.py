"""Weights, tail fits and weighted time integrals of decay curves.

A weighted integral ``int_0^inf w(t) y(t) dt`` of a curve known on a finite
grid is split into a trapezoidal part over the grid and a tail part. The
tail is extrapolated from a fit on the last third of the grid; fits with
``R^2 < 0.9`` are refused, as are tails for which ``w * fit`` is not
integrable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import integrate

__all__ = [
    "Weight",
    "TailFit",
    "TailFitError",
    "DivergentIntegralError",
    "fit_tail",
    "tail_integral",
    "grid_integral",
    "callable_integral",
    "loglog_slope",
]

MIN_R2 = 0.9
TAIL_MARGIN = 1e-3


class TailFitError(ValueError):
    """The tail of a curve cannot be fitted reliably."""


class DivergentIntegralError(ValueError):
    """The weighted tail integral diverges."""


@dataclass(frozen=True)
class Weight:
    """A positive weight function of time, evaluated in log space.

    kinds: ``one``; ``exp`` = ``exp(beta * (t/K)**a)``; ``poly`` =
    ``(1 + t/K)**b``; ``spread`` = ``(rate * t + 1)**d``.
    """

    kind: str = "one"
    beta: float = 1.0
    a: float = 1.0
    b: float = 0.0
    K: float = 1.0
    rate: float = 0.0
    d: int = 1

    def __post_init__(self):
        if self.kind not in ("one", "exp", "poly", "spread"):
            raise ValueError(f"unknown weight kind {self.kind!r}")
        if self.K <= 0:
            raise ValueError("K must be positive")
        if self.kind == "exp" and not (0 < self.a <= 1 and self.beta > 0):
            raise ValueError("exp weight needs 0 < a <= 1 and beta > 0")
        if self.kind == "poly" and self.b < 0:
            raise ValueError("poly weight needs b >= 0")

    def scaled(self, K: float) -> "Weight":
        return Weight(self.kind, self.beta, self.a, self.b, float(K), self.rate, self.d)

    def log(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        s = t / self.K
        if self.kind == "one":
            return np.zeros_like(t)
        if self.kind == "exp":
            return self.beta * s**self.a
        if self.kind == "poly":
            return self.b * np.log1p(s)
        return self.d * np.log1p(self.rate * t)

    def __call__(self, t) -> np.ndarray:
        return np.exp(self.log(t))

    @property
    def tag(self) -> str:
        if self.kind == "one":
            return "one"
        if self.kind == "exp":
            return f"exp(beta={self.beta!r},a={self.a!r})/K={self.K!r}"
        if self.kind == "poly":
            return f"poly(b={self.b!r})/K={self.K!r}"
        return f"spread(rate={self.rate!r},d={self.d})"

    def check_submultiplicative(self, t_max: float = 100.0, n: int = 41) -> None:
        """Verify ``w(0) = 1``, monotonicity and ``w(s+t) <= w(s) w(t)`` on a grid."""
        ts = np.linspace(0.0, t_max, n)
        lw = self.log(ts)
        if abs(lw[0]) > 1e-12:
            raise ValueError(f"weight {self.tag} has w(0) != 1")
        if np.any(np.diff(lw) < -1e-12):
            raise ValueError(f"weight {self.tag} is not increasing")
        s, t = np.meshgrid(ts, ts)
        if np.any(self.log(s + t) > self.log(s) + self.log(t) + 1e-9 * (1 + np.abs(self.log(s + t)))):
            raise ValueError(f"weight {self.tag} is not submultiplicative")


@dataclass(frozen=True)
class TailFit:
    """``y ~ exp(log_amp - rate t)`` (``model='exp'``) or ``exp(log_amp) t**slope`` (``'power'``)."""

    model: str
    slope: float
    log_amp: float
    r2: float
    t_start: float

    def log(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if self.model == "exp":
            return self.log_amp + self.slope * t
        return self.log_amp + self.slope * np.log(t)

    def __call__(self, t) -> np.ndarray:
        return np.exp(self.log(t))

    @property
    def exponent(self) -> float:
        """Power-law exponent of the fit (``-inf`` for an exponential tail)."""
        return -math.inf if self.model == "exp" else self.slope


def _linfit(x, y):
    A = np.vstack([x, np.ones_like(x)]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    ss = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - float((resid**2).sum()) / ss if ss > 0 else 1.0
    return float(coef[0]), float(coef[1]), r2


def fit_tail(t, y, fraction: float = 1.0 / 3.0, min_points: int = 3) -> TailFit:
    """Fit an exponential and a power law to the last third of a curve; keep the better one."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(t)
    start = min(int(math.floor(n * (1.0 - fraction))), n - min_points)
    start = max(start, 0)
    tt, yy = t[start:], y[start:]
    keep = (yy > 0) & (tt > 0)
    tt, yy = tt[keep], yy[keep]
    if len(tt) < min_points:
        raise TailFitError(
            f"only {len(tt)} positive points in the last third of the grid; need {min_points}"
        )
    ly = np.log(yy)
    exp_fit = TailFit("exp", *_linfit(tt, ly), float(tt[0]))
    pow_fit = TailFit("power", *_linfit(np.log(tt), ly), float(tt[0]))
    best = exp_fit if exp_fit.r2 >= pow_fit.r2 else pow_fit
    if best.r2 < MIN_R2:
        raise TailFitError(f"tail fit R^2 = {best.r2:.3f} < {MIN_R2}; refusing to extrapolate")
    return best


def loglog_slope(t, y) -> float:
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    return _linfit(np.log(t), np.log(y))[0]


def _tail_margin(fit: TailFit, weight: Weight) -> float:
    """Relative margin by which ``weight * fit`` decays faster than integrability needs.

    Exponential fits are compared on rates, power fits on exponents. A
    non-positive margin means divergence.
    """
    if fit.model == "exp":
        rate = -fit.slope
        w_rate = weight.beta / weight.K if (weight.kind == "exp" and weight.a == 1.0) else 0.0
        return (rate - w_rate) / max(abs(rate), 1e-300)
    if weight.kind == "exp":
        return -math.inf
    deg = {"one": 0.0, "poly": weight.b, "spread": float(weight.d)}[weight.kind]
    need = -(deg + 1.0)
    return (need - fit.slope) / max(abs(fit.slope), 1.0)


def tail_integral(fit: TailFit, T: float, weight: Weight) -> float:
    """``int_T^inf weight(t) fit(t) dt``; raises if it diverges.

    Fits whose decay matches the weight's growth to within ``TAIL_MARGIN``
    (relative) are treated as divergent: a fitted rate cannot resolve the
    boundary case, which diverges.
    """
    T = float(T)
    if T <= 0:
        raise ValueError("tail start must be positive")
    margin = _tail_margin(fit, weight)
    if not margin > TAIL_MARGIN:
        raise DivergentIntegralError(
            f"weighted tail of the {fit.model} fit (slope {fit.slope:.6g}) with weight "
            f"{weight.tag} is not integrable (relative margin {margin:.3g})"
        )

    def log_h(t):
        return float(weight.log(t) + fit.log(t))

    ref = log_h(T)
    val, _ = integrate.quad(lambda t: math.exp(log_h(t) - ref), T, np.inf, limit=400)
    return float(val * math.exp(ref))


def grid_integral(t, y, weight: Weight, se=None) -> tuple[float, float]:
    """Trapezoidal ``int w y`` over the grid and a conservative standard error.

    The s.e. adds the per-point s.e. linearly, i.e. it assumes perfectly
    correlated errors across grid points.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    w = weight(t)
    value = float(np.trapezoid(w * y, t))
    if se is None:
        return value, 0.0
    se = np.asarray(se, dtype=float)
    dt = np.diff(t)
    coef = np.zeros_like(t)
    coef[:-1] += dt / 2
    coef[1:] += dt / 2
    return value, float((coef * w * se).sum())


def callable_integral(g: Callable, weight: Weight, exponent: float | None = None,
                      rtol: float = 1e-6, t_max: float = 1e7) -> tuple[float, float]:
    """``int_0^inf weight(t) g(t) dt`` for a closed-form decay ``g``.

    Returns ``(value, tail_bound)``: the integral up to a cutoff computed by
    adaptive quadrature, and a bound on the neglected tail obtained from the
    local power-law envelope at the cutoff. ``exponent`` is the declared
    asymptotic power of ``g`` (``-inf`` for faster-than-polynomial decay);
    when given it decides integrability.
    """
    if weight.kind not in ("one", "spread"):
        raise ValueError("closed-form decays are integrated against 'one' or 'spread' weights only")
    d = weight.d if weight.kind == "spread" else 0
    rate = weight.rate if weight.kind == "spread" else 0.0
    if exponent is not None and exponent >= -(d + 1):
        raise DivergentIntegralError(
            f"decay exponent {exponent} is not below -(d+1) = {-(d + 1)}"
        )

    def h(t):
        return float(weight(t) * g(t))

    T = 16.0
    total = 0.0
    lo = 0.0
    while True:
        val, _ = integrate.quad(h, lo, T, epsrel=rtol * 1e-2, epsabs=0.0, limit=500)
        total += val
        lo = T
        gT, gh = float(g(T)), float(g(T / 2))
        if gT <= 0:
            return total, 0.0
        s = math.log(gT / gh) / math.log(2.0) if gh > 0 else -math.inf
        tail = math.inf
        if s + d + 1 < 0:
            tail = (rate + 1.0 / T) ** d * gT * T ** (d + 1) / (-s - d - 1)
            if tail <= rtol * max(total, 1e-300):
                return total, float(tail)
        if T >= t_max:
            if not math.isfinite(tail):
                raise DivergentIntegralError("decay is not integrable against the weight")
            return total, float(tail)
        T *= 2.0
