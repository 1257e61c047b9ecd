"""CSV and JSON writers with bit-stable formatting.

Floats are written with Python's shortest round-trip ``repr`` so two runs
that compute the same numbers produce the same bytes. Summary numbers are
wrapped as ``{"value": x, "se": s}`` or ``{"value": x, "exact": true}``.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .estimators import DecayCurve

__all__ = ["num", "exact", "clean", "write_curve", "read_curve", "write_json", "write_trajectories"]


def _float(x) -> float | str:
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x


def clean(obj):
    """Convert numpy scalars/arrays and non-finite floats to JSON-safe values."""
    if isinstance(obj, dict):
        return {str(k): clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return _float(obj)
    return obj


def num(value, se) -> dict:
    """A Monte Carlo number with its standard error."""
    return {"value": clean(value), "se": clean(se)}


def exact(value) -> dict:
    """A number computed exactly (closed form, exhaustion or linear algebra)."""
    return {"value": clean(value), "exact": True}


def _fmt(x: float) -> str:
    return repr(float(x))


def write_curve(curve: DecayCurve, path) -> Path:
    path = Path(path)
    lines = ["t,estimate,se"]
    lines += [f"{_fmt(t)},{_fmt(e)},{_fmt(s)}" for t, e, s in curve.rows()]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_curve(path, replicas: int = 0, strategy: str = "file") -> DecayCurve:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return DecayCurve(data[:, 0], data[:, 1], data[:, 2], replicas, strategy)


def write_json(obj, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(clean(obj), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def write_trajectories(rows, d: int, path) -> Path:
    """Rows are ``(replica, t, X1 (d), X2 (d) or None, decoupled)``."""
    path = Path(path)
    cols = ["replica", "t"] + [f"x1_{j}" for j in range(d)] + [f"x2_{j}" for j in range(d)] + ["decoupled"]
    lines = [",".join(cols)]
    for r, t, x1, x2, dec in rows:
        x2s = [str(int(v)) for v in x2] if x2 is not None else [""] * d
        lines.append(",".join([str(r), _fmt(t)] + [str(int(v)) for v in x1] + x2s + [str(int(dec))]))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path
